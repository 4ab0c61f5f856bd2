use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttributionResult, Estimator};
use crate::error::{check_dim, Error, Result};
use crate::model::Model;

/// How absent features are filled for each permutation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundPolicy {
    /// One background row drawn uniformly per permutation.
    #[default]
    RandomRow,
    /// Marginal contributions averaged over every background row.
    AllRows,
}

/// Permutation estimator: for each random order, features are switched
/// from background to `x` one at a time and each switch's change in output
/// is credited to the feature switched.
pub fn sampling_shap<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    background: &[Vec<f64>],
    x: &[f64],
    n_permutations: usize,
    policy: BackgroundPolicy,
    rng: &mut R,
) -> Result<AttributionResult> {
    let d = model.features();
    check_dim("explained sample", d, x.len())?;
    if background.is_empty() {
        return Err(Error::Usage("background set is empty".into()));
    }
    if n_permutations == 0 {
        return Err(Error::Usage("at least one permutation is required".into()));
    }
    for b in background {
        check_dim("background row", d, b.len())?;
    }

    let mut order: Vec<usize> = (0..d).collect();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let mut phi0 = 0.0;
    let mut contrib = vec![0.0; d];
    let mut z = vec![0.0; d];
    for _ in 0..n_permutations {
        order.shuffle(rng);
        contrib.iter_mut().for_each(|c| *c = 0.0);
        let rows: Vec<&Vec<f64>> = match policy {
            BackgroundPolicy::RandomRow => vec![&background[rng.random_range(0..background.len())]],
            BackgroundPolicy::AllRows => background.iter().collect(),
        };
        let scale = 1.0 / rows.len() as f64;
        let mut base_sum = 0.0;
        for b in rows {
            z.copy_from_slice(b);
            let mut prev = model.predict(&z)?;
            base_sum += prev;
            for &i in &order {
                z[i] = x[i];
                let next = model.predict(&z)?;
                contrib[i] += scale * (next - prev);
                prev = next;
            }
        }
        phi0 += base_sum * scale;
        for i in 0..d {
            sum[i] += contrib[i];
            sum_sq[i] += contrib[i] * contrib[i];
        }
    }
    let n = n_permutations as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_errors = sum_sq
        .iter()
        .zip(&phi)
        .map(|(sq, m)| {
            if n_permutations < 2 {
                0.0
            } else {
                ((sq - n * m * m).max(0.0) / (n - 1.0) / n).sqrt()
            }
        })
        .collect();
    Ok(AttributionResult {
        estimator: Estimator::Sampling,
        sample_id: 0,
        phi0: phi0 / n,
        phi,
        budget: n_permutations,
        seed: None,
        std_errors: Some(std_errors),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_feature_is_exact_with_one_permutation() {
        let f = FnModel::new(1, |x: &[f64]| x[0] * x[0]);
        let bg = vec![vec![1.0], vec![2.0], vec![-3.0]];
        let r = sampling_shap(&f, &bg, &[2.0], 1, BackgroundPolicy::AllRows, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((r.phi[0] - (4.0 - 14.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_model_symmetric_point() {
        let f = FnModel::new(2, |x: &[f64]| (x[0] * x[1]).tanh() + x[0] + x[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bg = Vec::new();
        for _ in 0..25 {
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            bg.push(vec![a, b]);
            bg.push(vec![b, a]);
        }
        let r = sampling_shap(&f, &bg, &[0.7, 0.7], 4000, BackgroundPolicy::RandomRow, &mut rng).unwrap();
        let se = r.std_errors.as_ref().unwrap();
        let tol = 3.0 * (se[0] * se[0] + se[1] * se[1]).sqrt();
        assert!((r.phi[0] - r.phi[1]).abs() < tol);
    }

    #[test]
    fn every_permutation_is_efficient_against_its_row() {
        let f = FnModel::new(3, |x: &[f64]| x[0] * x[1] - x[2]);
        let bg = vec![vec![0.5, -0.5, 1.0]];
        let x = [1.0, 2.0, 3.0];
        let r = sampling_shap(&f, &bg, &x, 7, BackgroundPolicy::RandomRow, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((r.total() - f.predict(&x).unwrap()).abs() < 1e-12);
    }
}
