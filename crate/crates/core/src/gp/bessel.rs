//! Modified Bessel function of the second kind from its integral
//! representation `K_ν(x) = ∫₀^∞ exp(-x cosh u) cosh(ν u) du`.
//!
//! The integrand is even and analytic in `u`, so the trapezoidal rule on the
//! half line converges geometrically in the step size.

/// `exp(log_scale) · x^ν · K_ν(x)` for `ν ≥ 0`, `x > 0`, evaluated in log space.
pub fn scaled_bessel_k(nu: f64, x: f64, log_scale: f64) -> f64 {
    debug_assert!(x > 0.0 && nu >= 0.0);
    let log_lead = log_scale + nu * x.ln() - std::f64::consts::LN_2;
    // Peak width of the log-integrand is about 1/sqrt(max(ν, x)).
    let h = 0.05 / nu.max(x).max(1.0).sqrt();
    let peak = (nu / x).asinh();
    let term = |u: f64| {
        let base = log_lead - x * u.cosh();
        (base + nu * u).exp() + (base - nu * u).exp()
    };
    let mut sum = 0.5 * term(0.0);
    let mut k = 1usize;
    loop {
        let u = k as f64 * h;
        let v = term(u);
        sum += v;
        if u > peak && (v <= 1e-18 * sum || v == 0.0) {
            break;
        }
        k += 1;
        if k > 2_000_000 {
            break;
        }
    }
    sum * h
}

/// `K_ν(x)`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    scaled_bessel_k(nu, x, -nu * x.ln())
}
