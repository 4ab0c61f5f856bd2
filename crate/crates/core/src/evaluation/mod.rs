//! Attribution quality metrics and the error-bound experiments.

mod toy;

pub use toy::{
    toy_bound_experiment, toy_conditional_expectation, toy_dataset, BoundExperimentReport, BoundRow, BoundSummary,
    ToyConfig, TOY_WEIGHTS,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SicDirection {
    /// Start from the background and insert features of `x`.
    Add,
    /// Start from `x` and replace its features with the background.
    Del,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SicCurve {
    pub direction: SicDirection,
    pub fractions: Vec<f64>,
    pub outputs: Vec<f64>,
    pub auc: f64,
}

impl SicCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,output\n");
        for (f, o) in self.fractions.iter().zip(&self.outputs) {
            s.push_str(&format!("{f},{o}\n"));
        }
        s
    }
}

/// Features by descending `|phi|`; ties keep index order.
pub fn ranking(phi: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()));
    order
}

/// Trapezoid rule.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Output curve as features are inserted (ADD) or removed (DEL) in order
/// of decreasing `|phi|`. Point `k` of `steps` switches
/// `round(k/(steps-1) * d)` features.
pub fn sic_auc<M: Model + ?Sized>(
    model: &M,
    x: &[f64],
    phi: &[f64],
    background: &[f64],
    direction: SicDirection,
    steps: usize,
) -> Result<SicCurve> {
    let d = model.features();
    check_dim("explained sample", d, x.len())?;
    check_dim("attribution", d, phi.len())?;
    check_dim("background value", d, background.len())?;
    if steps < 2 {
        return Err(Error::Usage("a curve needs at least two steps".into()));
    }
    let order = ranking(phi);
    let mut fractions = Vec::with_capacity(steps);
    let mut outputs = Vec::with_capacity(steps);
    for k in 0..steps {
        let frac = k as f64 / (steps - 1) as f64;
        let n = (frac * d as f64).round() as usize;
        let mut z: Vec<f64> = match direction {
            SicDirection::Add => background.to_vec(),
            SicDirection::Del => x.to_vec(),
        };
        for &i in &order[..n] {
            z[i] = match direction {
                SicDirection::Add => x[i],
                SicDirection::Del => background[i],
            };
        }
        fractions.push(frac);
        outputs.push(model.predict(&z)?);
    }
    let auc = trapezoid(&fractions, &outputs);
    Ok(SicCurve {
        direction,
        fractions,
        outputs,
        auc,
    })
}

/// Mean absolute deviation.
pub fn mad(estimates: &[f64], truth: &[f64]) -> Result<f64> {
    check_dim("mad inputs", estimates.len(), truth.len())?;
    if estimates.is_empty() {
        return Err(Error::Usage("mad of empty vectors".into()));
    }
    Ok(estimates.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / estimates.len() as f64)
}

/// `sqrt(pi) / sqrt(2K)`: bound on the expected deviation of a K-sample
/// mean of `[0,1]` variables.
pub fn statistical_bound(k: usize) -> f64 {
    std::f64::consts::PI.sqrt() / (2.0 * k as f64).sqrt()
}

/// `2 exp(-2 K eps^2)`.
pub fn hoeffding_bound(k: usize, epsilon: f64) -> f64 {
    2.0 * (-2.0 * k as f64 * epsilon * epsilon).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingReport {
    pub k: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub exceedances: usize,
    pub exceedance_rate: f64,
    pub bound: f64,
    /// Binomial standard deviation of the rate at probability `min(bound, 1)`.
    pub binomial_sd: f64,
}

impl HoeffdingReport {
    pub fn within_bound(&self, sds: f64) -> bool {
        self.exceedance_rate <= self.bound + sds * self.binomial_sd
    }
}

/// Fraction of `trials` in which a `k`-sample mean deviates from
/// `true_mean` by at least `epsilon`.
pub fn hoeffding_coverage<R: Rng + ?Sized>(
    mut sampler: impl FnMut(&mut R) -> f64,
    true_mean: f64,
    k: usize,
    epsilon: f64,
    trials: usize,
    rng: &mut R,
) -> Result<HoeffdingReport> {
    if trials < 100 {
        return Err(Error::Usage(format!("at least 100 trials are required, got {trials}")));
    }
    if k == 0 || !(epsilon >= 0.0) {
        return Err(Error::Usage("k must be positive and epsilon non-negative".into()));
    }
    let mut exceed = 0;
    for t in 0..trials {
        let mut sum = 0.0;
        for _ in 0..k {
            let v = sampler(rng);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Contract(format!("sampler returned {v} outside [0, 1] in trial {t}")));
            }
            sum += v;
        }
        if (sum / k as f64 - true_mean).abs() >= epsilon {
            exceed += 1;
        }
    }
    let bound = hoeffding_bound(k, epsilon);
    let p = bound.min(1.0);
    Ok(HoeffdingReport {
        k,
        epsilon,
        trials,
        exceedances: exceed,
        exceedance_rate: exceed as f64 / trials as f64,
        bound,
        binomial_sd: (p * (1.0 - p) / trials as f64).sqrt(),
    })
}
