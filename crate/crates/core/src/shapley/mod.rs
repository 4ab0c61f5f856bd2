//! Shapley values: exact enumeration, the energy-model contribution
//! function, permutation sampling, kernel weighted least squares, and the
//! closed-form covariance used in the kernel error analysis.

mod emshap;
mod kernel;
mod sampling;
mod theory;

pub use emshap::{contribution_emshap, emshap_attribute, self_normalized_mean, weighted_draws, EmShapOptions, WeightedDraw};
pub use kernel::{kernel_shap, kernel_shap_game, shapley_kernel_weight, ShapleyKernelSystem};
pub use sampling::{sampling_shap, BackgroundPolicy};
pub use theory::{alpha, build_sigma_star, sigma_star_inverse, sigma_star_inverse_check};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::masking::Coalition;
use crate::model::Model;

/// Largest player count handled by full enumeration.
pub const ENUMERATION_LIMIT: usize = 20;

/// A cooperative game `v: 2^D -> R`.
pub trait ContributionOracle: Sync {
    fn players(&self) -> usize;
    /// Value of the coalition whose observed features are the players.
    fn value(&self, c: &Coalition) -> Result<f64>;
}

/// Game given by a closure over observed-player bitmasks.
pub struct FnGame<F> {
    players: usize,
    f: F,
}

impl<F: Fn(u64) -> f64 + Sync> FnGame<F> {
    pub fn new(players: usize, f: F) -> Self {
        Self { players, f }
    }
}

impl<F: Fn(u64) -> f64 + Sync> ContributionOracle for FnGame<F> {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, c: &Coalition) -> Result<f64> {
        check_dim("coalition size", self.players, c.features())?;
        Ok((self.f)(c.observed_bits()))
    }
}

/// `v(S) = mean_b f(x_S, b_S̄)` over background rows `b`.
pub struct MarginalOracle<'a, M: ?Sized> {
    pub model: &'a M,
    pub background: &'a [Vec<f64>],
    pub x: &'a [f64],
}

impl<'a, M: Model + ?Sized> MarginalOracle<'a, M> {
    pub fn new(model: &'a M, background: &'a [Vec<f64>], x: &'a [f64]) -> Result<Self> {
        check_dim("explained sample", model.features(), x.len())?;
        if background.is_empty() {
            return Err(Error::Usage("background set is empty".into()));
        }
        for b in background {
            check_dim("background row", model.features(), b.len())?;
        }
        Ok(Self { model, background, x })
    }
}

impl<M: Model + ?Sized> ContributionOracle for MarginalOracle<'_, M> {
    fn players(&self) -> usize {
        self.x.len()
    }

    fn value(&self, c: &Coalition) -> Result<f64> {
        let mut z = vec![0.0; self.x.len()];
        let mut total = 0.0;
        for b in self.background {
            for (i, zi) in z.iter_mut().enumerate() {
                *zi = if c.is_observed(i) { self.x[i] } else { b[i] };
            }
            total += self.model.predict(&z)?;
        }
        Ok(total / self.background.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Exact,
    Emshap,
    Sampling,
    Kernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub estimator: Estimator,
    pub sample_id: usize,
    pub phi0: f64,
    pub phi: Vec<f64>,
    pub budget: usize,
    pub seed: Option<u64>,
    /// Per-feature standard errors, for sampling estimators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
}

impl AttributionResult {
    /// `phi0 + sum(phi)`.
    pub fn total(&self) -> f64 {
        self.phi0 + self.phi.iter().sum::<f64>()
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `s! (d-s-1)! / d!`.
pub fn shapley_weight(s: usize, d: usize) -> Result<f64> {
    if d == 0 || s >= d {
        return Err(Error::Usage(format!("subset size {s} out of range for {d} players")));
    }
    if d > ENUMERATION_LIMIT {
        return Ok((ln_factorial(s) + ln_factorial(d - s - 1) - ln_factorial(d)).exp());
    }
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    Ok(fact(s) * fact(d - s - 1) / fact(d))
}

/// All `2^d` coalition values indexed by observed-player bitmask.
pub fn enumerate_values<G: ContributionOracle + ?Sized>(game: &G) -> Result<Vec<f64>> {
    let d = game.players();
    if d > ENUMERATION_LIMIT {
        return Err(Error::Capacity {
            players: d,
            limit: ENUMERATION_LIMIT,
        });
    }
    (0..1u64 << d)
        .map(|bits| game.value(&Coalition::from_observed_bits(d, bits)))
        .collect()
}

/// Shapley values from a complete table of coalition values.
pub fn shapley_from_values(d: usize, values: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim("coalition table", 1usize << d, values.len())?;
    let weights: Vec<f64> = (0..d).map(|s| shapley_weight(s, d)).collect::<Result<_>>()?;
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u64 << i;
        let mut acc = 0.0;
        for s in 0..1u64 << d {
            if s & bit == 0 {
                acc += weights[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]);
            }
        }
        *p = acc;
    }
    Ok((values[0], phi))
}

pub fn exact_shapley<G: ContributionOracle + ?Sized>(game: &G) -> Result<AttributionResult> {
    let d = game.players();
    let values = enumerate_values(game)?;
    let (phi0, phi) = shapley_from_values(d, &values)?;
    Ok(AttributionResult {
        estimator: Estimator::Exact,
        sample_id: 0,
        phi0,
        phi,
        budget: values.len(),
        seed: None,
        std_errors: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnModel;
    use proptest::prelude::*;

    #[test]
    fn weights() {
        assert!((shapley_weight(0, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((shapley_weight(1, 3).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(shapley_weight(3, 3).is_err());
        // log-factorial branch agrees with the ratio of products
        let big = shapley_weight(10, 25).unwrap();
        let direct = (1..=10).map(|k| k as f64).product::<f64>() * (1..=14).map(|k| k as f64).product::<f64>()
            / (1..=25).map(|k| k as f64).product::<f64>();
        assert!((big / direct - 1.0).abs() < 1e-10);
    }

    #[test]
    fn weights_sum_to_one_over_subsets() {
        for d in 1..=12usize {
            let mut total = 0.0;
            for s in 0..1u64 << (d - 1) {
                total += shapley_weight(s.count_ones() as usize, d).unwrap();
            }
            assert!((total - 1.0).abs() < 1e-12, "d={d}");
        }
    }

    #[test]
    fn simple_games() {
        let g = FnGame::new(3, |b: u64| b.count_ones() as f64 / 3.0);
        let r = exact_shapley(&g).unwrap();
        for p in &r.phi {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let g = FnGame::new(2, |b: u64| (b & 1) as f64);
        assert_eq!(exact_shapley(&g).unwrap().phi, vec![1.0, 0.0]);
        let w = [-0.4, -1.2, 0.8];
        let g = FnGame::new(3, |b: u64| (0..3).filter(|i| b >> i & 1 == 1).map(|i| w[i]).sum());
        let r = exact_shapley(&g).unwrap();
        for i in 0..3 {
            assert!((r.phi[i] - w[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_guard() {
        let g = FnGame::new(21, |_| 0.0);
        assert!(matches!(exact_shapley(&g), Err(Error::Capacity { players: 21, .. })));
    }

    #[test]
    fn marginal_oracle_values() {
        let f = FnModel::new(2, |x: &[f64]| x[0] * x[1]);
        let bg = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
        let x = [5.0, 7.0];
        let o = MarginalOracle::new(&f, &bg, &x).unwrap();
        assert_eq!(o.value(&Coalition::all_observed(2)).unwrap(), 35.0);
        assert_eq!(o.value(&Coalition::all_masked(2)).unwrap(), 3.0);
        assert_eq!(o.value(&Coalition::from_observed(2, &[0]).unwrap()).unwrap(), 10.0);
    }

    #[test]
    fn attribution_json_fields() {
        let r = AttributionResult {
            estimator: Estimator::Kernel,
            sample_id: 4,
            phi0: 0.5,
            phi: vec![0.1, -0.2],
            budget: 14,
            seed: Some(9),
            std_errors: None,
        };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["estimator"], "kernel");
        for key in ["estimator", "sample_id", "phi0", "phi", "budget", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(serde_json::from_value::<AttributionResult>(v).unwrap(), r);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn efficiency_on_random_games(d in 1usize..7, table in prop::collection::vec(-1.0f64..1.0, 64)) {
            let g = FnGame::new(d, |b: u64| table[b as usize]);
            let r = exact_shapley(&g).unwrap();
            let full = table[(1usize << d) - 1];
            prop_assert!((r.phi.iter().sum::<f64>() - (full - table[0])).abs() < 1e-10);
        }
    }
}
