//! Conditional energy model `p(x_S̄ | x_S) ≈ exp(-g(x, γ)) / Z`, with the
//! partition function estimated by importance sampling from the proposal.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::masking::{reassemble, Coalition};
use crate::nn::{log_sum_exp, Activation, BoundMlp, ResidualMlp, Tape, Tensor, Var};
use crate::proposal::{ProposalNetwork, ProposalSample};

/// Anything that assigns an energy to a full feature vector plus context.
pub trait EnergyFunction: Sync {
    fn energy(&self, x: &[f64], context: &[f64]) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub features: usize,
    pub context_dim: usize,
    pub net: ResidualMlp,
    /// Weight `c` of an optional `c/2 * |x|^2` term that keeps `exp(-g)`
    /// integrable. Zero leaves the energy equal to the network output.
    #[serde(default)]
    pub confinement: f64,
}

impl EnergyModel {
    pub fn new<R: Rng + ?Sized>(features: usize, context_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            features,
            context_dim,
            net: ResidualMlp::energy_default(features + context_dim, hidden, Activation::Tanh, rng),
            confinement: 0.0,
        }
    }

    pub fn from_net(features: usize, context_dim: usize, net: ResidualMlp) -> Result<Self> {
        let m = Self {
            features,
            context_dim,
            net,
            confinement: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        check_dim("energy input", self.features + self.context_dim, self.net.input_size())?;
        check_dim("energy output", 1, self.net.output_size())?;
        if self.net.skips.len() != 2 {
            return Err(Error::Config(format!(
                "energy network needs exactly two skip connections, has {}",
                self.net.skips.len()
            )));
        }
        if !(self.confinement >= 0.0 && self.confinement.is_finite()) {
            return Err(Error::Config("confinement must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.net.parameters()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.parameters_mut()
    }

    fn confinement_term(&self, x: &[f64]) -> f64 {
        if self.confinement == 0.0 {
            0.0
        } else {
            0.5 * self.confinement * x.iter().map(|v| v * v).sum::<f64>()
        }
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, base_slot: usize) -> BoundEnergy<'a> {
        BoundEnergy {
            model: self,
            mlp: self.net.bind(tape, base_slot),
        }
    }
}

impl EnergyFunction for EnergyModel {
    fn energy(&self, x: &[f64], context: &[f64]) -> Result<f64> {
        check_dim("energy features", self.features, x.len())?;
        check_dim("energy context", self.context_dim, context.len())?;
        let mut input = Vec::with_capacity(x.len() + context.len());
        input.extend_from_slice(x);
        input.extend_from_slice(context);
        let g = self.net.forward_scalar(&input)?;
        Ok(g + self.confinement_term(x))
    }
}

pub struct BoundEnergy<'a> {
    model: &'a EnergyModel,
    mlp: BoundMlp<'a>,
}

impl BoundEnergy<'_> {
    /// Energy of the constant feature vector `x` under the (possibly
    /// differentiable) context `context`.
    pub fn energy(&self, tape: &mut Tape<'_>, x: &[f64], context: Var) -> Var {
        let xv = tape.constant(x.to_vec());
        let input = tape.concat(&[xv, context]);
        let g = self.mlp.forward(tape, input);
        let extra = self.model.confinement_term(x);
        if extra == 0.0 {
            g
        } else {
            tape.add_const(g, extra)
        }
    }
}

/// Importance-sampled partition function for one `(S, x_S, γ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionEstimate {
    pub z_hat: f64,
    pub log_z_hat: f64,
    pub sample_count: usize,
    /// `log(exp(-g) / q)` per proposal draw.
    pub log_weights: Vec<f64>,
    pub coalition: Coalition,
    pub observed: Vec<f64>,
    pub context: Vec<f64>,
}

impl PartitionEstimate {
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// Empirical variance of the weights divided by the squared mean.
    pub fn relative_weight_variance(&self) -> f64 {
        let lw = &self.log_weights;
        let n = lw.len() as f64;
        let scaled: Vec<f64> = lw.iter().map(|l| (l - self.log_z_hat).exp()).collect();
        let mean = scaled.iter().sum::<f64>() / n;
        scaled.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n
    }
}

/// `log Ẑ = logsumexp(log_weights) - ln K̃`.
pub fn log_partition_from_log_weights(log_weights: &[f64]) -> Result<f64> {
    if log_weights.is_empty() {
        return Err(Error::Usage("partition estimate needs at least one sample".into()));
    }
    if let Some(k) = log_weights.iter().position(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::NumericOverflow(format!("importance weight of sample {k}")));
    }
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(Error::NumericOverflow(format!(
            "all {} importance weights are zero (first offending sample 0)",
            log_weights.len()
        )));
    }
    Ok(lse - (log_weights.len() as f64).ln())
}

/// Full-length feature vector with `observed` at observed positions and
/// `masked_values` at masked ones.
pub fn assemble(observed: &[f64], c: &Coalition, masked_values: &[f64]) -> Result<Vec<f64>> {
    reassemble(masked_values, observed, c)
}

fn observed_view(x_obs: &[f64], c: &Coalition) -> Vec<f64> {
    x_obs
        .iter()
        .enumerate()
        .map(|(i, v)| if c.is_masked(i) { 0.0 } else { *v })
        .collect()
}

pub fn estimate_partition<E: EnergyFunction + ?Sized>(
    model: &E,
    samples: &[ProposalSample],
    x_obs: &[f64],
    c: &Coalition,
    context: &[f64],
) -> Result<PartitionEstimate> {
    check_dim("observed sample length", c.features(), x_obs.len())?;
    let observed = observed_view(x_obs, c);
    let mut log_weights = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        if !s.log_q.is_finite() {
            return Err(Error::Usage(format!("proposal log density of sample {k} is not finite")));
        }
        let x = assemble(&observed, c, &s.values)?;
        let g = model.energy(&x, context)?;
        log_weights.push(-g - s.log_q);
    }
    let log_z_hat = log_partition_from_log_weights(&log_weights)?;
    Ok(PartitionEstimate {
        z_hat: log_z_hat.exp(),
        log_z_hat,
        sample_count: samples.len(),
        log_weights,
        coalition: c.clone(),
        observed,
        context: context.to_vec(),
    })
}

/// `-g(x_S̄, x_S; γ) - log Ẑ`.
pub fn conditional_log_density<E: EnergyFunction + ?Sized>(
    model: &E,
    masked_values: &[f64],
    x_obs: &[f64],
    c: &Coalition,
    partition: &PartitionEstimate,
) -> Result<f64> {
    check_dim("observed sample length", c.features(), x_obs.len())?;
    let observed = observed_view(x_obs, c);
    if partition.coalition != *c || partition.observed != observed {
        return Err(Error::Usage(
            "partition estimate was computed for a different coalition or observed values".into(),
        ));
    }
    let x = assemble(&observed, c, masked_values)?;
    Ok(-model.energy(&x, &partition.context)? - partition.log_z_hat)
}

/// Monte Carlo estimate of `E_p[Z²] - E_p[Z² p/q]` using `n_trials`
/// proposal draws. Since `E_p[h] = E_q[h p/q]`, this equals
/// `Ẑ² - mean(w²)` with `w = exp(-g)/q`, i.e. minus the variance of the
/// importance weights. It is zero when `q = p` and negative otherwise.
pub fn variance_gap<E: EnergyFunction + ?Sized, R: Rng + ?Sized>(
    model: &E,
    proposal: &ProposalNetwork,
    x_obs: &[f64],
    c: &Coalition,
    n_trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::Usage("variance gap needs at least one trial".into()));
    }
    let cond = proposal.condition(x_obs, c)?;
    let samples: Vec<ProposalSample> = (0..n_trials).map(|_| cond.sample(rng)).collect::<Result<_>>()?;
    let est = estimate_partition(model, &samples, x_obs, c, cond.context())?;
    let n = n_trials as f64;
    let mean_sq = est.log_weights.iter().map(|l| (2.0 * l).exp()).sum::<f64>() / n;
    Ok(est.z_hat * est.z_hat - mean_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HALF_LN_2PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `g(x) = x_i^2 / (2 s^2)` on one coordinate.
    struct Quadratic {
        coord: usize,
        scale: f64,
    }

    impl EnergyFunction for Quadratic {
        fn energy(&self, x: &[f64], _: &[f64]) -> Result<f64> {
            let v = x[self.coord] / self.scale;
            Ok(0.5 * v * v)
        }
    }

    struct Constant(f64);

    impl EnergyFunction for Constant {
        fn energy(&self, _: &[f64], _: &[f64]) -> Result<f64> {
            Ok(self.0)
        }
    }

    #[test]
    fn zero_network_has_zero_energy() {
        let mut m = EnergyModel::new(3, 2, 4, &mut ChaCha8Rng::seed_from_u64(0));
        m.parameters_mut().into_iter().for_each(|t| t.fill(0.0));
        assert_eq!(m.energy(&[1.0, 2.0, 3.0], &[0.5, 0.5]).unwrap(), 0.0);
        assert!(m.energy(&[1.0, 2.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn energy_matches_straight_line_mlp() {
        let m = EnergyModel::new(2, 1, 3, &mut ChaCha8Rng::seed_from_u64(1));
        let direct = m.net.forward_scalar(&[0.3, -0.2, 0.9]).unwrap();
        assert_eq!(m.energy(&[0.3, -0.2], &[0.9]).unwrap(), direct);
    }

    #[test]
    fn matched_proposal_gives_exact_partition() {
        let q = ProposalNetwork::zeros(1, 2);
        let c = Coalition::all_masked(1);
        let s = q.sample_proposal(&[0.0], &c, 1000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let est = estimate_partition(&Quadratic { coord: 0, scale: 1.0 }, &s, &[0.0], &c, &[0.0, 0.0]).unwrap();
        assert!((est.z_hat - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
        assert!(est.relative_weight_variance() <= 1e-12);

        let log_p = conditional_log_density(&Quadratic { coord: 0, scale: 1.0 }, &[0.0], &[0.0], &c, &est).unwrap();
        assert!((log_p + HALF_LN_2PI).abs() < 1e-10);
    }

    #[test]
    fn single_sample_partition_is_its_weight() {
        let q = ProposalNetwork::zeros(1, 1);
        let c = Coalition::all_masked(1);
        let s = q.sample_proposal(&[0.0], &c, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let est = estimate_partition(&Constant(0.7), &s, &[0.0], &c, &[0.0]).unwrap();
        assert_eq!(est.log_z_hat, -0.7 - s[0].log_q);
    }

    #[test]
    fn unit_partition_gives_zero_log_density() {
        let c = Coalition::all_masked(2);
        let est = PartitionEstimate {
            z_hat: 1.0,
            log_z_hat: 0.0,
            sample_count: 1,
            log_weights: vec![0.0],
            coalition: c.clone(),
            observed: vec![0.0, 0.0],
            context: vec![],
        };
        assert_eq!(conditional_log_density(&Constant(0.0), &[0.3, 0.1], &[9.0, 9.0], &c, &est).unwrap(), 0.0);
        let other = Coalition::from_masked(2, &[0]).unwrap();
        assert!(matches!(
            conditional_log_density(&Constant(0.0), &[0.3], &[9.0, 9.0], &other, &est),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn constant_energy_is_uniform_after_normalisation() {
        // Two points on a bounded reference set get equal density.
        let q = ProposalNetwork::zeros(1, 1);
        let c = Coalition::all_masked(1);
        let s = q.sample_proposal(&[0.0], &c, 50, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let est = estimate_partition(&Constant(2.5), &s, &[0.0], &c, &[0.0]).unwrap();
        let a = conditional_log_density(&Constant(2.5), &[-0.5], &[0.0], &c, &est).unwrap();
        let b = conditional_log_density(&Constant(2.5), &[0.75], &[0.0], &c, &est).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn large_energies_do_not_overflow() {
        for g in [-500.0, 500.0] {
            let lw = vec![-g; 10];
            let l = log_partition_from_log_weights(&lw).unwrap();
            assert!((l + g).abs() < 1e-9);
        }
        assert!(log_partition_from_log_weights(&[]).is_err());
        assert!(matches!(
            log_partition_from_log_weights(&[f64::NEG_INFINITY; 3]),
            Err(Error::NumericOverflow(_))
        ));
        assert!(matches!(
            log_partition_from_log_weights(&[0.0, f64::NAN]),
            Err(Error::NumericOverflow(m)) if m.contains("sample 1")
        ));
    }

    #[test]
    fn variance_gap_vanishes_for_matched_proposal() {
        let q = ProposalNetwork::zeros(1, 1);
        let c = Coalition::all_masked(1);
        let gap = variance_gap(
            &Quadratic { coord: 0, scale: 1.0 },
            &q,
            &[0.0],
            &c,
            5000,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert!(gap.abs() < 1e-9, "{gap}");
        assert!(variance_gap(&Constant(0.0), &q, &[0.0], &c, 0, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }
}
