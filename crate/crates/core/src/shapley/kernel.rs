use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use super::{AttributionResult, ContributionOracle, Estimator, MarginalOracle, ENUMERATION_LIMIT};
use crate::error::{Error, Result};
use crate::masking::Coalition;
use crate::model::Model;

const RIDGE: f64 = 1e-10;

/// `ψ(S) = (d-1) / (C(d,|S|) |S| (d-|S|))` for `0 < |S| < d`.
pub fn shapley_kernel_weight(size: usize, d: usize) -> Result<f64> {
    if size == 0 || size >= d {
        return Err(Error::Usage(format!(
            "kernel weight is only finite for 0 < |S| < {d}, got {size}"
        )));
    }
    let mut binom = 1.0;
    for k in 0..size {
        binom = binom * (d - k) as f64 / (k + 1) as f64;
    }
    Ok((d - 1) as f64 / (binom * size as f64 * (d - size) as f64))
}

/// Weighted least squares problem over a set of coalitions. Column `k` of
/// the design is `[1, z_k]` with `z_k` the observed indicator of coalition `k`.
#[derive(Clone, Debug)]
pub struct ShapleyKernelSystem {
    pub players: usize,
    pub coalitions: Vec<Coalition>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    pub empty_value: f64,
    pub full_value: f64,
    /// `[β₀, β₁ .. β_d]` once solved.
    pub solution: Option<Vec<f64>>,
}

impl ShapleyKernelSystem {
    /// `(d+1) x K` binary design matrix `B`.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.players + 1, self.coalitions.len(), |r, k| {
            if r == 0 || self.coalitions[k].is_observed(r - 1) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Minimises `Σ ψ_k (v_k - β₀ - z_k·β)²` with `β₀ = v(∅)` and
    /// `Σβ = v(D) - v(∅)` through the KKT system. A ridge of 1e-10 is added
    /// when the plain system is singular.
    pub fn solve(&mut self) -> Result<Vec<f64>> {
        let d = self.players;
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for ((c, w), v) in self.coalitions.iter().zip(&self.weights).zip(&self.values) {
            let obs = c.observed_indices();
            let y = v - self.empty_value;
            for &i in &obs {
                rhs[i] += w * y;
                for &j in &obs {
                    gram[(i, j)] += w;
                }
            }
        }
        let build = |ridge: f64| {
            let mut k = DMatrix::<f64>::zeros(d + 1, d + 1);
            k.view_mut((0, 0), (d, d)).copy_from(&gram);
            for i in 0..d {
                k[(i, i)] += ridge;
                k[(i, d)] = 1.0;
                k[(d, i)] = 1.0;
            }
            k
        };
        let mut b = DVector::<f64>::zeros(d + 1);
        b.rows_mut(0, d).copy_from(&rhs);
        b[d] = self.full_value - self.empty_value;

        let sol = build(0.0)
            .lu()
            .solve(&b)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .or_else(|| build(RIDGE).lu().solve(&b).filter(|s| s.iter().all(|v| v.is_finite())))
            .ok_or_else(|| {
                Error::Singular(format!(
                    "kernel system with {} coalitions; increase the subset budget or the ridge",
                    self.coalitions.len()
                ))
            })?;
        let mut beta = Vec::with_capacity(d + 1);
        beta.push(self.empty_value);
        beta.extend(sol.iter().take(d));
        self.solution = Some(beta.clone());
        Ok(beta)
    }
}

/// Kernel weighted least squares on an arbitrary game. With
/// `budget >= 2^d - 2` every proper coalition is used with its kernel
/// weight; otherwise `budget` coalitions are drawn from the kernel
/// distribution and weighted equally.
pub fn kernel_shap_game<G: ContributionOracle + ?Sized, R: Rng + ?Sized>(
    game: &G,
    budget: usize,
    rng: &mut R,
) -> Result<(AttributionResult, ShapleyKernelSystem)> {
    let d = game.players();
    if d < 2 {
        return Err(Error::Usage("kernel estimator needs at least two players".into()));
    }
    let proper = if d < 64 { (1u64 << d) - 2 } else { u64::MAX };
    let full_enumeration = d <= ENUMERATION_LIMIT && budget as u64 >= proper;
    if !full_enumeration && budget < d + 2 {
        return Err(Error::Usage(format!("subset budget {budget} is below |D|+2 = {}", d + 2)));
    }

    let mut coalitions = Vec::new();
    let mut weights = Vec::new();
    if full_enumeration {
        for bits in 1..(1u64 << d) - 1 {
            let c = Coalition::from_observed_bits(d, bits);
            weights.push(shapley_kernel_weight(c.observed_count(), d)?);
            coalitions.push(c);
        }
    } else {
        // size distribution proportional to ψ(s) C(d,s) = (d-1)/(s(d-s))
        let mass: Vec<f64> = (1..d).map(|s| 1.0 / (s * (d - s)) as f64).collect();
        let total: f64 = mass.iter().sum();
        for _ in 0..budget {
            let mut u = rng.random::<f64>() * total;
            let mut size = d - 1;
            for (k, m) in mass.iter().enumerate() {
                if u < *m {
                    size = k + 1;
                    break;
                }
                u -= m;
            }
            let observed = sample(rng, d, size).into_vec();
            coalitions.push(Coalition::from_observed(d, &observed)?);
            weights.push(1.0);
        }
    }
    let values = coalitions.iter().map(|c| game.value(c)).collect::<Result<Vec<_>>>()?;
    let mut system = ShapleyKernelSystem {
        players: d,
        coalitions,
        weights,
        values,
        empty_value: game.value(&Coalition::all_masked(d))?,
        full_value: game.value(&Coalition::all_observed(d))?,
        solution: None,
    };
    let beta = system.solve()?;
    let result = AttributionResult {
        estimator: Estimator::Kernel,
        sample_id: 0,
        phi0: beta[0],
        phi: beta[1..].to_vec(),
        budget: system.coalitions.len(),
        seed: None,
        std_errors: None,
    };
    Ok((result, system))
}

/// Kernel estimator with marginal removal: absent features are averaged
/// over the background rows.
pub fn kernel_shap<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    background: &[Vec<f64>],
    x: &[f64],
    budget: usize,
    rng: &mut R,
) -> Result<AttributionResult> {
    let oracle = MarginalOracle::new(model, background, x)?;
    Ok(kernel_shap_game(&oracle, budget, rng)?.0)
}
