use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{shapley_from_values, AttributionResult, Estimator, ENUMERATION_LIMIT};
use crate::energy::EnergyFunction;
use crate::error::{check_dim, Error, Result};
use crate::masking::{reassemble, Coalition};
use crate::model::Model;
use crate::trainer::EmShapModel;

/// One proposal draw with its log importance weight `-g - log q` and the
/// model output at the completed sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedDraw {
    pub log_weight: f64,
    pub output: f64,
}

/// `Σ w_k v_k / Σ w_k` with `w_k = exp(log_weights[k])`, computed after
/// subtracting the largest log weight.
pub fn self_normalized_mean(log_weights: &[f64], values: &[f64]) -> Result<f64> {
    check_dim("weighted values", log_weights.len(), values.len())?;
    if log_weights.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::NumericOverflow("importance log weight".into()));
    }
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::NumericOverflow("all importance weights are zero".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (l, v) in log_weights.iter().zip(values) {
        let w = (l - m).exp();
        num += w * v;
        den += w;
    }
    Ok(num / den)
}

/// `k` proposal completions of `x` under coalition `c` with their weights.
pub fn weighted_draws<M: Model + ?Sized, R: Rng + ?Sized>(
    model_f: &M,
    em: &EmShapModel,
    x: &[f64],
    c: &Coalition,
    k: usize,
    rng: &mut R,
) -> Result<Vec<WeightedDraw>> {
    if k == 0 {
        return Err(Error::Usage("at least one Monte Carlo draw is required".into()));
    }
    let cond = em.proposal.condition(x, c)?;
    let observed: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| if c.is_masked(i) { 0.0 } else { *v })
        .collect();
    (0..k)
        .map(|_| {
            let s = cond.sample(rng)?;
            let full = reassemble(&s.values, &observed, c)?;
            let g = em.energy.energy(&full, cond.context())?;
            Ok(WeightedDraw {
                log_weight: -g - s.log_q,
                output: model_f.predict(&full)?,
            })
        })
        .collect()
}

/// Estimate of `E[f(x_S̄, x_S) | x_S]` under the energy model by
/// self-normalised importance sampling from the proposal.
pub fn contribution_emshap<M: Model + ?Sized, R: Rng + ?Sized>(
    model_f: &M,
    em: &EmShapModel,
    x: &[f64],
    c: &Coalition,
    k: usize,
    rng: &mut R,
) -> Result<f64> {
    check_dim("explained sample", em.features(), x.len())?;
    if c.masked_count() == 0 {
        return model_f.predict(x);
    }
    let draws = weighted_draws(model_f, em, x, c, k, rng)?;
    let lw: Vec<f64> = draws.iter().map(|d| d.log_weight).collect();
    let out: Vec<f64> = draws.iter().map(|d| d.output).collect();
    self_normalized_mean(&lw, &out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmShapOptions {
    /// Monte Carlo draws per coalition.
    pub k: usize,
    /// Permutations used when there are too many features to enumerate.
    pub permutations: usize,
}

impl Default for EmShapOptions {
    fn default() -> Self {
        Self {
            k: 1000,
            permutations: 200,
        }
    }
}

/// Shapley values of the energy-model contribution function. Coalitions
/// are enumerated up to 20 features and sampled by permutation beyond.
pub fn emshap_attribute<M: Model + ?Sized, R: Rng + ?Sized>(
    model_f: &M,
    em: &EmShapModel,
    x: &[f64],
    opts: &EmShapOptions,
    rng: &mut R,
) -> Result<AttributionResult> {
    let d = em.features();
    check_dim("explained sample", d, x.len())?;
    check_dim("model features", d, model_f.features())?;
    let (phi0, phi) = if d <= ENUMERATION_LIMIT {
        let values = (0..1u64 << d)
            .map(|bits| contribution_emshap(model_f, em, x, &Coalition::from_observed_bits(d, bits), opts.k, rng))
            .collect::<Result<Vec<_>>>()?;
        shapley_from_values(d, &values)?
    } else {
        if opts.permutations == 0 {
            return Err(Error::Usage("permutation count must be positive".into()));
        }
        let mut order: Vec<usize> = (0..d).collect();
        let mut phi = vec![0.0; d];
        let mut phi0 = 0.0;
        for _ in 0..opts.permutations {
            order.shuffle(rng);
            let mut c = Coalition::all_masked(d);
            let mut prev = contribution_emshap(model_f, em, x, &c, opts.k, rng)?;
            phi0 += prev;
            for &i in &order {
                c.set_masked(i, false);
                let next = contribution_emshap(model_f, em, x, &c, opts.k, rng)?;
                phi[i] += next - prev;
                prev = next;
            }
        }
        let n = opts.permutations as f64;
        (phi0 / n, phi.into_iter().map(|p| p / n).collect())
    };
    Ok(AttributionResult {
        estimator: Estimator::Emshap,
        sample_id: 0,
        phi0,
        phi,
        budget: opts.k,
        seed: None,
        std_errors: None,
    })
}
