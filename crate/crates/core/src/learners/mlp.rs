use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_dim, FeatureMap, Standardizer};
use crate::funcdata::{CurveSet, Grid};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Gaussian weights with variance `2 / fan_in`, zero biases.
    #[default]
    He,
    Zeros,
}

/// Multi-output feed-forward network trained full-batch.
///
/// The learning rate starts at `learning_rate`; a step that lowers the loss
/// is kept and the rate grows by 5%, a step that raises it is discarded and
/// the rate is halved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub init: Init,
}

fn default_hidden() -> Vec<usize> {
    vec![10, 10]
}
fn default_ridge() -> f64 {
    1e-3
}
fn default_max_iter() -> usize {
    2000
}
fn default_learning_rate() -> f64 {
    1e-2
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: Activation::Relu,
            ridge: default_ridge(),
            max_iter: default_max_iter(),
            learning_rate: default_learning_rate(),
            init: Init::He,
        }
    }
}

/// Dense ReLU network with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// `weights[l]` maps layer `l` to layer `l + 1` and is `out × in`.
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], init: Init, rng: &mut R) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let sd = (2.0 / fan_in.max(1) as f64).sqrt();
            let m = match init {
                Init::He => DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    sd * rng.sample::<f64, _>(StandardNormal)
                }),
                Init::Zeros => DMatrix::zeros(fan_out, fan_in),
            };
            weights.push(m);
            biases.push(DVector::zeros(fan_out));
        }
        Self { weights, biases }
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = flat[k];
                k += 1;
            }
            for v in b.iter_mut() {
                *v = flat[k];
                k += 1;
            }
        }
    }

    /// Pre-activations of every layer for a batch (`n × width`).
    fn forward_all(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = &act * w.transpose();
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            act = if l == last {
                z.clone()
            } else {
                z.map(|v| v.max(0.0))
            };
            pre.push(z);
        }
        pre
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_all(x).pop().unwrap()
    }

    /// `½·mean((ŷ - y)²) + ½·ridge·Σ‖W‖²` and its gradient in
    /// [`Mlp::params`] order. The mean runs over samples and outputs.
    pub fn loss_and_gradient(
        &self,
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        ridge: f64,
    ) -> (f64, Vec<f64>) {
        let pre = self.forward_all(x);
        let out = pre.last().unwrap();
        let denom = (y.nrows() * y.ncols()) as f64;
        let err = out - y;
        let mut loss = 0.5 * err.norm_squared() / denom;
        loss += 0.5 * ridge * self.weights.iter().map(|w| w.norm_squared()).sum::<f64>();

        let n_layers = self.weights.len();
        let mut grads_w = vec![DMatrix::zeros(0, 0); n_layers];
        let mut grads_b = vec![DVector::zeros(0); n_layers];
        let mut delta = err / denom;
        for l in (0..n_layers).rev() {
            let input = if l == 0 {
                x.clone()
            } else {
                pre[l - 1].map(|v| v.max(0.0))
            };
            grads_w[l] = delta.transpose() * &input + &self.weights[l] * ridge;
            grads_b[l] = delta.row_sum().transpose();
            if l > 0 {
                let back = &delta * &self.weights[l];
                delta = back.zip_map(&pre[l - 1], |d, z| if z > 0.0 { d } else { 0.0 });
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for (w, b) in grads_w.iter().zip(&grads_b) {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        (loss, flat)
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64) -> f64 {
        let out = self.forward(x);
        let denom = (y.nrows() * y.ncols()) as f64;
        0.5 * (out - y).norm_squared() / denom
            + 0.5 * ridge * self.weights.iter().map(|w| w.norm_squared()).sum::<f64>()
    }
}

/// Function-on-scalar regressor backed by an [`Mlp`] with one output per
/// grid point. Inputs and outputs are standardised internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpFos {
    grid: Grid,
    features: FeatureMap,
    config: MlpConfig,
    input_dim: usize,
    x_std: Standardizer,
    y_mean: Vec<f64>,
    y_scale: Vec<f64>,
    net: Mlp,
    final_loss: f64,
}

pub fn fit_fos_mlp(x: &DMatrix<f64>, y: &CurveSet, cfg: &MlpConfig, seed: u64) -> Result<MlpFos> {
    MlpFos::fit(x, y, cfg, FeatureMap::Identity, seed)
}

impl MlpFos {
    pub fn fit(
        x: &DMatrix<f64>,
        y: &CurveSet,
        cfg: &MlpConfig,
        features: FeatureMap,
        seed: u64,
    ) -> Result<Self> {
        Self::fit_traced(x, y, cfg, features, seed).map(|(m, _)| m)
    }

    /// Fit and also return the loss after every accepted step.
    pub fn fit_traced(
        x: &DMatrix<f64>,
        y: &CurveSet,
        cfg: &MlpConfig,
        features: FeatureMap,
        seed: u64,
    ) -> Result<(Self, Vec<f64>)> {
        let n = x.nrows();
        if n < 10 {
            return Err(Error::invalid(format!(
                "MLP needs at least 10 samples, got {n}"
            )));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} curves for {n} rows",
                y.len()
            )));
        }
        if cfg.hidden.iter().any(|&h| h == 0) || cfg.max_iter == 0 {
            return Err(Error::invalid("MLP widths and max_iter must be positive"));
        }
        if !(cfg.learning_rate > 0.0) || !(cfg.ridge >= 0.0) {
            return Err(Error::invalid(
                "MLP learning rate must be positive and ridge non-negative",
            ));
        }
        let f = features.apply(x)?;
        let x_std = Standardizer::fit(&f);
        let xs = x_std.apply(&f);
        let y_cols = Standardizer::fit(y.values());
        let ys = y_cols.apply(y.values());

        let mut sizes = vec![xs.ncols()];
        sizes.extend(&cfg.hidden);
        sizes.push(y.grid().len());
        let mut r = rng::stream(seed, &[rng::tag::MLP_INIT]);
        let mut net = Mlp::new(&sizes, cfg.init, &mut r);

        let (mut loss, mut grad) = net.loss_and_gradient(&xs, &ys, cfg.ridge);
        if !loss.is_finite() {
            return Err(Error::Divergence("initial loss is not finite".into()));
        }
        let initial = loss;
        let mut trace = vec![loss];
        let mut lr = cfg.learning_rate;
        let mut params = net.params();
        for _ in 0..cfg.max_iter {
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < 1e-12 || lr < 1e-14 {
                break;
            }
            let cand: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
            net.set_params(&cand);
            let (c_loss, c_grad) = net.loss_and_gradient(&xs, &ys, cfg.ridge);
            if c_loss.is_finite() && c_loss <= loss {
                params = cand;
                loss = c_loss;
                grad = c_grad;
                lr *= 1.05;
                trace.push(loss);
            } else {
                if c_loss.is_finite()
                    && c_loss > 1e6 * initial.max(1e-300)
                    && lr <= cfg.learning_rate * 1e-6
                {
                    return Err(Error::Divergence(format!(
                        "loss {c_loss:e} from initial {initial:e}"
                    )));
                }
                net.set_params(&params);
                lr *= 0.5;
            }
        }
        net.set_params(&params);
        Ok((
            Self {
                grid: y.grid().clone(),
                features,
                config: cfg.clone(),
                input_dim: x.ncols(),
                x_std,
                y_mean: y_cols.mean,
                y_scale: y_cols.scale,
                net,
                final_loss: loss,
            },
            trace,
        ))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn final_loss(&self) -> f64 {
        self.final_loss
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = DMatrix::from_row_slice(1, x.len(), x);
        self.predict_many(&m)
            .map(|p| p.row(0).iter().copied().collect())
    }

    pub fn predict_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim, x.ncols())?;
        let f = self.features.apply(x)?;
        let out = self.net.forward(&self.x_std.apply(&f));
        Ok(DMatrix::from_fn(out.nrows(), out.ncols(), |i, t| {
            self.y_mean[t] + self.y_scale[t] * out[(i, t)]
        }))
    }
}
