//! Three periodic features driven by a shared latent time, used to check
//! the statistical error of the Monte Carlo contribution estimate against
//! its `sqrt(pi)/sqrt(2K)` bound.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::statistical_bound;
use crate::error::{Error, Result};
use crate::masking::Coalition;
use crate::model::{fit_linear, Model, Squash, ZooModel};
use crate::shapley::{self_normalized_mean, weighted_draws};
use crate::trainer::{train, TrainConfig, TrainReport};

pub const TOY_WEIGHTS: [f64; 3] = [-0.4, -1.2, 0.8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n_points: usize,
    pub train_fraction: f64,
    pub noise_variance: f64,
    pub t_max: f64,
    pub k_values: Vec<usize>,
    /// Draws in the reference pool per (test point, coalition).
    pub k_ref: usize,
    pub test_points: usize,
    /// Grid size for the latent-time integral of the true conditional.
    pub t_grid: usize,
    /// Noise draws per grid point for the true conditional.
    pub noise_draws: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_points: 5000,
            train_fraction: 0.8,
            noise_variance: 0.001,
            t_max: 10.0,
            k_values: vec![10, 100, 1000, 10_000],
            k_ref: 200_000,
            test_points: 8,
            t_grid: 20_000,
            noise_draws: 8,
            seed: 0,
            train: TrainConfig {
                epochs: 15,
                batch_size: 64,
                learning_rate: 3e-3,
                k_tilde: 64,
                zeta_min: 0.2,
                zeta_max: 0.8,
                context_dim: 8,
                energy_hidden: 16,
                ..TrainConfig::default()
            },
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.k_values.iter().any(|k| *k == 0 || *k > self.k_ref) {
            return Err(Error::Config("every K must lie in [1, k_ref]".into()));
        }
        if self.test_points == 0 || self.t_grid == 0 || self.noise_draws == 0 {
            return Err(Error::Config("test points, grid and noise draws must be positive".into()));
        }
        if !(self.noise_variance > 0.0) || !(self.t_max > 0.0) {
            return Err(Error::Config("noise variance and time range must be positive".into()));
        }
        let n_train = (self.train_fraction * self.n_points as f64).floor() as usize;
        if n_train < self.train.batch_size || self.n_points - n_train < self.test_points {
            return Err(Error::Config("split leaves too few training or test points".into()));
        }
        self.train.validate()
    }
}

/// `x_i = sin(i π t) + η₁`, `y = w·x + η₂` with `t ~ U[0, t_max]`.
pub fn toy_dataset<R: Rng + ?Sized>(n: usize, noise_variance: f64, t_max: f64, rng: &mut R) -> (Vec<Vec<f64>>, Vec<f64>) {
    let sd = noise_variance.sqrt();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random_range(0.0..t_max);
        let x: Vec<f64> = (1..=3)
            .map(|i| (i as f64 * PI * t).sin() + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let target = TOY_WEIGHTS.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + sd * rng.sample::<f64, _>(StandardNormal);
        rows.push(x);
        y.push(target);
    }
    (rows, y)
}

/// `E[f(x) | x_S]` under the generative process: the latent time is
/// integrated on a midpoint grid weighted by the Gaussian likelihood of the
/// observed coordinates, and masked coordinates are averaged over noise.
pub fn toy_conditional_expectation<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    x: &[f64],
    c: &Coalition,
    cfg: &ToyConfig,
    rng: &mut R,
) -> Result<f64> {
    let sd = cfg.noise_variance.sqrt();
    let dt = cfg.t_max / cfg.t_grid as f64;
    let observed = c.observed_indices();
    let masked = c.masked_indices();
    let mut log_w = Vec::with_capacity(cfg.t_grid);
    let mut vals = Vec::with_capacity(cfg.t_grid);
    let mut z = x.to_vec();
    for j in 0..cfg.t_grid {
        let t = (j as f64 + 0.5) * dt;
        let lw: f64 = observed
            .iter()
            .map(|&i| {
                let r = (x[i] - ((i + 1) as f64 * PI * t).sin()) / sd;
                -0.5 * r * r
            })
            .sum();
        let mut acc = 0.0;
        for _ in 0..cfg.noise_draws {
            for &i in &masked {
                z[i] = ((i + 1) as f64 * PI * t).sin() + sd * rng.sample::<f64, _>(StandardNormal);
            }
            acc += model.predict(&z)?;
        }
        log_w.push(lw);
        vals.push(acc / cfg.noise_draws as f64);
    }
    self_normalized_mean(&log_w, &vals)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub k: usize,
    /// Observed features, e.g. `{0,2}`.
    pub coalition: String,
    pub statistical_error: f64,
    pub approximation_error: f64,
    /// `sqrt(pi)/sqrt(2K) + approximation_error`.
    pub bound: f64,
}

impl BoundRow {
    pub fn holds(&self) -> bool {
        self.statistical_error + self.approximation_error <= self.bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub k: usize,
    /// Averages over coalitions.
    pub statistical_error: f64,
    pub approximation_error: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundExperimentReport {
    pub rows: Vec<BoundRow>,
    pub summary: Vec<BoundSummary>,
    /// Least-squares slope of log statistical error against log K.
    pub slope: f64,
    pub all_within_bound: bool,
    pub heldout_mse: f64,
    pub train_losses: Vec<f64>,
    pub k_ref: usize,
    pub test_points: usize,
}

impl BoundExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,coalition,statistical_error,approximation_error,bound\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},\"{}\",{},{},{}\n",
                r.k, r.coalition, r.statistical_error, r.approximation_error, r.bound
            ));
        }
        s
    }
}

fn coalition_label(c: &Coalition) -> String {
    let idx: Vec<String> = c.observed_indices().iter().map(|i| i.to_string()).collect();
    format!("{{{}}}", idx.join(","))
}

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Trains a regressor and the energy model on the first part of the toy
/// data, then compares Monte Carlo errors on held-out points with the
/// bound for each K and coalition.
pub fn toy_bound_experiment(cfg: &ToyConfig) -> Result<(BoundExperimentReport, TrainReport)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (rows, y) = toy_dataset(cfg.n_points, cfg.noise_variance, cfg.t_max, &mut rng);
    let n_train = (cfg.train_fraction * cfg.n_points as f64).floor() as usize;
    let (train_x, test_x) = rows.split_at(n_train);
    let (train_y, test_y) = y.split_at(n_train);

    let (w, b) = fit_linear(train_x, train_y)?;
    let preds: Vec<f64> = train_x.iter().map(|r| b + w.iter().zip(r).map(|(a, v)| a * v).sum::<f64>()).collect();
    let lo = preds.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let model = ZooModel::linear(w, b, Squash::Clip { lo, hi });
    let heldout_mse = test_x
        .iter()
        .zip(test_y)
        .map(|(r, t)| model.raw(r).map(|p| (p - t) * (p - t)))
        .sum::<Result<f64>>()?
        / test_x.len() as f64;

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let report = train(train_x, &train_cfg)?;
    let em = &report.model;

    let d = 3;
    let coalitions: Vec<Coalition> = (0..(1u64 << d) - 1).map(|bits| Coalition::from_observed_bits(d, bits)).collect();
    let mut rows_out = Vec::new();
    let mut stat_sum = vec![0.0; cfg.k_values.len()];
    let mut approx_sum = vec![0.0; cfg.k_values.len()];
    for c in &coalitions {
        let mut stat = vec![0.0; cfg.k_values.len()];
        let mut approx = 0.0;
        for x in &test_x[..cfg.test_points] {
            let draws = weighted_draws(&model, em, x, c, cfg.k_ref, &mut rng)?;
            let lw: Vec<f64> = draws.iter().map(|d| d.log_weight).collect();
            let out: Vec<f64> = draws.iter().map(|d| d.output).collect();
            let limit = self_normalized_mean(&lw, &out)?;
            let truth = toy_conditional_expectation(&model, x, c, cfg, &mut rng)?;
            approx += (limit - truth).abs();
            for (slot, &k) in cfg.k_values.iter().enumerate() {
                let blocks = cfg.k_ref / k;
                let mut dev = 0.0;
                for blk in 0..blocks {
                    let r = blk * k..(blk + 1) * k;
                    dev += (self_normalized_mean(&lw[r.clone()], &out[r])? - limit).abs();
                }
                stat[slot] += dev / blocks as f64;
            }
        }
        let n = cfg.test_points as f64;
        let approx = approx / n;
        for (slot, &k) in cfg.k_values.iter().enumerate() {
            let s = stat[slot] / n;
            stat_sum[slot] += s;
            approx_sum[slot] += approx;
            rows_out.push(BoundRow {
                k,
                coalition: coalition_label(c),
                statistical_error: s,
                approximation_error: approx,
                bound: statistical_bound(k) + approx,
            });
        }
    }
    let nc = coalitions.len() as f64;
    let summary: Vec<BoundSummary> = cfg
        .k_values
        .iter()
        .enumerate()
        .map(|(slot, &k)| BoundSummary {
            k,
            statistical_error: stat_sum[slot] / nc,
            approximation_error: approx_sum[slot] / nc,
            bound: statistical_bound(k) + approx_sum[slot] / nc,
        })
        .collect();
    let lx: Vec<f64> = summary.iter().map(|s| (s.k as f64).ln()).collect();
    let ly: Vec<f64> = summary.iter().map(|s| s.statistical_error.ln()).collect();
    let slope = if summary.len() >= 2 { ols_slope(&lx, &ly) } else { f64::NAN };
    let all_within_bound = rows_out.iter().all(BoundRow::holds);
    Ok((
        BoundExperimentReport {
            rows: rows_out,
            summary,
            slope,
            all_within_bound,
            heldout_mse,
            train_losses: report.losses(),
            k_ref: cfg.k_ref,
            test_points: cfg.test_points,
        },
        report,
    ))
}
