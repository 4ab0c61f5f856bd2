//! Black-box models to explain: a trait plus a small built-in zoo.
//!
//! Zoo outputs can be squashed into `[0, 1]`; the squash is part of the
//! serialized model so it is recorded wherever the model is.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{check_dim, Error, Result};
use crate::nn::{sigmoid, Activation, DenseLayer, ResidualMlp, Tape};
use crate::trainer::{adam_update, AdamState};

pub trait Model: Sync {
    fn features(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<f64>;
}

/// Wraps a closure as a [`Model`].
pub struct FnModel<F> {
    features: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnModel<F> {
    pub fn new(features: usize, f: F) -> Self {
        Self { features, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Model for FnModel<F> {
    fn features(&self) -> usize {
        self.features
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim("model input", self.features, x.len())?;
        Ok((self.f)(x))
    }
}

/// A raw-scale model seen from normalised coordinates: inputs are mapped
/// back through the normalisation before prediction.
pub struct Rescaled<'a, M: ?Sized> {
    pub inner: &'a M,
    pub norm: &'a Normalization,
}

impl<M: Model + ?Sized> Model for Rescaled<'_, M> {
    fn features(&self) -> usize {
        self.inner.features()
    }

    fn predict(&self, z: &[f64]) -> Result<f64> {
        check_dim("normalised input", self.norm.mean.len(), z.len())?;
        self.inner.predict(&self.norm.invert(z))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Squash {
    None,
    Sigmoid,
    /// `(y - lo) / (hi - lo)` clipped to `[0, 1]`.
    Clip { lo: f64, hi: f64 },
}

impl Squash {
    pub fn apply(&self, y: f64) -> f64 {
        match self {
            Squash::None => y,
            Squash::Sigmoid => sigmoid(y),
            Squash::Clip { lo, hi } => ((y - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelForm {
    Linear { weights: Vec<f64>, bias: f64 },
    /// `bias + sum_i sum_p coefficients[i][p] * x_i^(p+1)`.
    Additive { coefficients: Vec<Vec<f64>>, bias: f64 },
    Mlp { net: ResidualMlp },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZooModel {
    pub form: ModelForm,
    pub squash: Squash,
}

impl ZooModel {
    pub fn linear(weights: Vec<f64>, bias: f64, squash: Squash) -> Self {
        Self {
            form: ModelForm::Linear { weights, bias },
            squash,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Squash::Clip { lo, hi } = self.squash {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config("clip squash needs finite lo < hi".into()));
            }
        }
        match &self.form {
            ModelForm::Linear { weights, .. } if weights.is_empty() => Err(Error::Config("linear model has no weights".into())),
            ModelForm::Additive { coefficients, .. } if coefficients.is_empty() => {
                Err(Error::Config("additive model has no terms".into()))
            }
            ModelForm::Mlp { net } => {
                net.validate()?;
                check_dim("mlp output", 1, net.output_size())
            }
            _ => Ok(()),
        }
    }

    /// Output before squashing.
    pub fn raw(&self, x: &[f64]) -> Result<f64> {
        check_dim("model input", self.features(), x.len())?;
        Ok(match &self.form {
            ModelForm::Linear { weights, bias } => bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
            ModelForm::Additive { coefficients, bias } => {
                let mut y = *bias;
                for (c, v) in coefficients.iter().zip(x) {
                    let mut p = 1.0;
                    for a in c {
                        p *= v;
                        y += a * p;
                    }
                }
                y
            }
            ModelForm::Mlp { net } => net.forward_scalar(x)?,
        })
    }
}

impl Model for ZooModel {
    fn features(&self) -> usize {
        match &self.form {
            ModelForm::Linear { weights, .. } => weights.len(),
            ModelForm::Additive { coefficients, .. } => coefficients.len(),
            ModelForm::Mlp { net } => net.input_size(),
        }
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.squash.apply(self.raw(x)?))
    }
}

/// Ordinary least squares with intercept. Returns `(weights, bias)`.
pub fn fit_linear(rows: &[Vec<f64>], targets: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_dim("target count", rows.len(), targets.len())?;
    let d = rows.first().map(Vec::len).ok_or_else(|| Error::Data("no rows to fit".into()))?;
    if rows.len() <= d {
        return Err(Error::Data("need more rows than features to fit a linear model".into()));
    }
    let a = DMatrix::from_fn(rows.len(), d + 1, |r, c| if c == d { 1.0 } else { rows[r][c] });
    let b = DVector::from_column_slice(targets);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Singular(e.to_string()))?;
    Ok((sol.as_slice()[..d].to_vec(), sol[d]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpFitConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Binary cross-entropy on a sigmoid output instead of squared error.
    pub classifier: bool,
}

impl Default for MlpFitConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-2,
            seed: 0,
            classifier: false,
        }
    }
}

/// Two-hidden-layer tanh MLP fitted with Adam. Classifiers get a sigmoid
/// squash, regressors none.
pub fn fit_mlp(rows: &[Vec<f64>], targets: &[f64], cfg: &MlpFitConfig) -> Result<ZooModel> {
    check_dim("target count", rows.len(), targets.len())?;
    let d = rows.first().map(Vec::len).ok_or_else(|| Error::Data("no rows to fit".into()))?;
    if cfg.hidden == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("hidden size and batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layers = vec![
        DenseLayer::init(d, cfg.hidden, &mut rng),
        DenseLayer::init(cfg.hidden, cfg.hidden, &mut rng),
        DenseLayer::init(cfg.hidden, 1, &mut rng),
    ];
    let mut net = ResidualMlp::new(layers, vec![], Activation::Tanh)?;
    let mut adam = AdamState::new(&net.parameters());
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, 0);
            let mut total = None;
            for &i in chunk {
                let x = tape.constant(rows[i].clone());
                let y = bound.forward(&mut tape, x);
                let term = if cfg.classifier {
                    // softplus(y) - t*y is the logistic loss on logits
                    let sp = tape.softplus(y);
                    let ty = tape.scale(y, targets[i]);
                    tape.sub(sp, ty)
                } else {
                    let r = tape.add_const(y, -targets[i]);
                    tape.square(r)
                };
                total = Some(match total {
                    None => term,
                    Some(t) => tape.add(t, term),
                });
            }
            let loss = tape.scale(total.expect("nonempty chunk"), 1.0 / chunk.len() as f64);
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            let grads = tape.backward(loss)?.dense_for(&net.parameters());
            drop(tape);
            adam_update(&mut net.parameters_mut(), &grads, &mut adam, cfg.learning_rate)?;
        }
    }
    Ok(ZooModel {
        form: ModelForm::Mlp { net },
        squash: if cfg.classifier { Squash::Sigmoid } else { Squash::None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn linear_and_additive_predictions() {
        let m = ZooModel::linear(vec![1.0, -2.0], 0.5, Squash::None);
        assert_eq!(m.predict(&[3.0, 1.0]).unwrap(), 1.5);
        assert!(m.predict(&[1.0]).is_err());
        let a = ZooModel {
            form: ModelForm::Additive {
                coefficients: vec![vec![1.0, 2.0], vec![0.0, 0.0, 1.0]],
                bias: 1.0,
            },
            squash: Squash::None,
        };
        // 1 + (2 + 2*4) + 3^3
        assert_eq!(a.predict(&[2.0, 3.0]).unwrap(), 38.0);
    }

    #[test]
    fn squashes_land_in_unit_interval() {
        let clip = Squash::Clip { lo: -1.0, hi: 3.0 };
        assert_eq!(clip.apply(1.0), 0.5);
        assert_eq!(clip.apply(-9.0), 0.0);
        assert_eq!(clip.apply(9.0), 1.0);
        assert_eq!(Squash::Sigmoid.apply(0.0), 0.5);
    }

    #[test]
    fn least_squares_recovers_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 0.3 - 1.5 * r[0] + 2.0 * r[1]).collect();
        let (w, b) = fit_linear(&rows, &y).unwrap();
        assert!((w[0] + 1.5).abs() < 1e-10 && (w[1] - 2.0).abs() < 1e-10 && (b - 0.3).abs() < 1e-10);
    }

    #[test]
    fn mlp_fits_a_smooth_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| (2.0 * r[0]).sin()).collect();
        let m = fit_mlp(&rows, &y, &MlpFitConfig::default()).unwrap();
        let mse: f64 = rows.iter().zip(&y).map(|(r, t)| (m.predict(r).unwrap() - t).powi(2)).sum::<f64>() / 200.0;
        assert!(mse < 0.01, "{mse}");
    }

    #[test]
    fn zoo_model_json_round_trip() {
        let m = ZooModel::linear(vec![0.25, -1.0], 0.1, Squash::Clip { lo: -2.0, hi: 2.0 });
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<ZooModel>(&s).unwrap(), m);
    }
}
