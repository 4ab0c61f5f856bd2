use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn check_players(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::Usage(format!("need at least two players, got {d}")));
    }
    Ok(())
}

/// Off-diagonal entry of the limiting kernel covariance:
///
/// ```text
/// α = 1/(d(d+1)) · Σ_{i=2..d} (i-1)/(d+1-i) / Σ_{i=1..d} 1/(i(d+1-i))
/// ```
pub fn alpha(d: usize) -> Result<f64> {
    check_players(d)?;
    let df = d as f64;
    let num: f64 = (2..=d).map(|i| (i - 1) as f64 / (df + 1.0 - i as f64)).sum();
    let den: f64 = (1..=d).map(|i| 1.0 / (i as f64 * (df + 1.0 - i as f64))).sum();
    Ok(num / den / (df * (df + 1.0)))
}

/// `(d+1) x (d+1)` matrix with `1/2` on the diagonal and `α` elsewhere.
pub fn build_sigma_star(d: usize) -> Result<DMatrix<f64>> {
    let a = alpha(d)?;
    Ok(DMatrix::from_fn(d + 1, d + 1, |i, j| if i == j { 0.5 } else { a }))
}

/// Closed-form inverse `κI + ωJ` with `κ = 1/(1/2 - α)` and
/// `ω = α / ((α - 1/2)(mα - α + 1/2))`, `m = d + 1`.
pub fn sigma_star_inverse(d: usize) -> Result<DMatrix<f64>> {
    let a = alpha(d)?;
    let m = (d + 1) as f64;
    let kappa = 1.0 / (0.5 - a);
    let omega = a / ((a - 0.5) * (m * a - a + 0.5));
    Ok(DMatrix::from_fn(d + 1, d + 1, |i, j| omega + if i == j { kappa } else { 0.0 }))
}

/// Largest absolute entry of `Σ*·Σ*⁻¹ - I`.
pub fn sigma_star_inverse_check(d: usize) -> Result<f64> {
    let prod = build_sigma_star(d)? * sigma_star_inverse(d)?;
    let n = d + 1;
    Ok((prod - DMatrix::<f64>::identity(n, n)).abs().max())
}
