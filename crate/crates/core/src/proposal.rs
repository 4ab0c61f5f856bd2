//! GRU proposal distribution `q(x_S̄ | x_S)`.
//!
//! The hidden state (size `2|D| + |γ|`) splits into a mean block, a
//! log-scale block and a context block. Masked features are visited in
//! ascending index order. The first GRU step sees only the observed
//! features; its hidden state parameterises the first masked feature and
//! supplies the context vector handed to the energy network. Each later
//! step additionally receives the previous masked feature's value (the
//! true value when teacher-forced, the drawn value when sampling), so no
//! step ever conditions on the value it is scoring.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::masking::Coalition;
use crate::nn::{gaussian_log_density, GruCell, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalNetwork {
    pub features: usize,
    pub context_dim: usize,
    pub cell: GruCell,
}

/// Gaussian emitted at one GRU step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub gamma: Vec<f64>,
    pub masked_index: usize,
}

impl StepDistribution {
    pub fn log_density(&self, value: f64) -> f64 {
        let i = self.masked_index;
        gaussian_log_density(value, self.mu[i], self.sigma[i].ln())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposalDensity {
    pub steps: Vec<StepDistribution>,
    /// `log q(x_S̄ | x_S)` of the values fed or drawn.
    pub log_density: f64,
    /// Context vector passed to the energy network.
    pub context: Vec<f64>,
    pub final_gamma: Vec<f64>,
    /// Masked values in canonical order: the inputs when teacher-forced,
    /// the draws when autoregressive.
    pub values: Vec<f64>,
}

pub enum UnrollMode<'r, R: Rng + ?Sized> {
    TeacherForced,
    Autoregressive(&'r mut R),
}

/// One proposal draw.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSample {
    pub values: Vec<f64>,
    pub log_q: f64,
}

/// Hidden state after the observed-features step, shared by every draw for
/// the same `(x_S, S)`.
#[derive(Clone, Debug)]
pub struct ConditionedProposal<'n> {
    net: &'n ProposalNetwork,
    coalition: Coalition,
    observed: Vec<f64>,
    masked: Vec<usize>,
    first_hidden: Vec<f64>,
}

/// Step input `[x * (1 - b) | e_{S̄_j} * value]`.
pub fn encode_step_input(x: &[f64], c: &Coalition, j: usize, masked_value: f64) -> Result<Vec<f64>> {
    let d = c.features();
    check_dim("sample length", d, x.len())?;
    let target = c
        .masked_indices()
        .get(j)
        .copied()
        .ok_or_else(|| Error::Usage(format!("step {j} exceeds {} masked features", c.masked_count())))?;
    let mut out = observed_part(x, c);
    out.resize(2 * d, 0.0);
    out[d + target] = masked_value;
    Ok(out)
}

fn observed_part(x: &[f64], c: &Coalition) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * x.len());
    out.extend(x.iter().enumerate().map(|(i, v)| if c.is_masked(i) { 0.0 } else { *v }));
    out
}

fn context_input(observed_part: &[f64], d: usize) -> Vec<f64> {
    let mut v = observed_part.to_vec();
    v.resize(2 * d, 0.0);
    v
}

impl ProposalNetwork {
    pub fn new<R: Rng + ?Sized>(features: usize, context_dim: usize, rng: &mut R) -> Self {
        Self {
            features,
            context_dim,
            cell: GruCell::init(2 * features, 2 * features + context_dim, rng),
        }
    }

    pub fn zeros(features: usize, context_dim: usize) -> Self {
        Self {
            features,
            context_dim,
            cell: GruCell::zeros(2 * features, 2 * features + context_dim),
        }
    }

    pub fn hidden_size(&self) -> usize {
        2 * self.features + self.context_dim
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("proposal gru input", 2 * self.features, self.cell.input_size)?;
        check_dim("proposal gru hidden", self.hidden_size(), self.cell.hidden_size)?;
        self.cell.validate()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.cell.parameters()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.cell.parameters_mut()
    }

    fn check_coalition(&self, x: &[f64], c: &Coalition) -> Result<()> {
        check_dim("sample length", self.features, x.len())?;
        check_dim("coalition size", self.features, c.features())?;
        if c.masked_count() == 0 {
            return Err(Error::Usage("proposal unroll needs at least one masked feature".into()));
        }
        Ok(())
    }

    fn split(&self, h: &[f64], masked_index: usize) -> StepDistribution {
        let d = self.features;
        StepDistribution {
            mu: h[..d].to_vec(),
            sigma: h[d..2 * d].iter().map(|r| r.exp()).collect(),
            gamma: h[2 * d..].to_vec(),
            masked_index,
        }
    }

    /// Runs the GRU over the masked features, either scoring the true masked
    /// values of `x` or drawing them.
    pub fn unroll<R: Rng + ?Sized>(&self, x: &[f64], c: &Coalition, mode: UnrollMode<'_, R>) -> Result<ProposalDensity> {
        self.check_coalition(x, c)?;
        let d = self.features;
        let masked = c.masked_indices();
        let obs = observed_part(x, c);
        let mut h = self.cell.step(&context_input(&obs, d), &vec![0.0; self.hidden_size()])?;
        let context = h[2 * d..].to_vec();

        let mut rng = match mode {
            UnrollMode::TeacherForced => None,
            UnrollMode::Autoregressive(r) => Some(r),
        };
        let mut steps = Vec::with_capacity(masked.len());
        let mut values = Vec::with_capacity(masked.len());
        let mut log_density = 0.0;
        for (j, &idx) in masked.iter().enumerate() {
            if j > 0 {
                let mut input = obs.clone();
                input.resize(2 * d, 0.0);
                input[d + masked[j - 1]] = values[j - 1];
                h = self.cell.step(&input, &h)?;
            }
            let step = self.split(&h, idx);
            let (mu, log_sigma) = (h[idx], h[d + idx]);
            if !log_sigma.exp().is_finite() || !mu.is_finite() {
                return Err(Error::NumericOverflow(format!("proposal scale at step {j}")));
            }
            let value = match rng.as_mut() {
                None => x[idx],
                Some(r) => {
                    let eps: f64 = r.sample(StandardNormal);
                    mu + log_sigma.exp() * eps
                }
            };
            let term = gaussian_log_density(value, mu, log_sigma);
            log_density = if j == 0 { term } else { log_density + term };
            values.push(value);
            steps.push(step);
        }
        let final_gamma = h[2 * d..].to_vec();
        Ok(ProposalDensity {
            steps,
            log_density,
            context,
            final_gamma,
            values,
        })
    }

    /// Teacher-forced `log q` of the true masked values plus the context.
    pub fn log_density(&self, x: &[f64], c: &Coalition) -> Result<ProposalDensity> {
        self.unroll::<rand::rngs::ThreadRng>(x, c, UnrollMode::TeacherForced)
    }

    /// Performs the observed-features step once so repeated draws can share it.
    pub fn condition(&self, x: &[f64], c: &Coalition) -> Result<ConditionedProposal<'_>> {
        self.check_coalition(x, c)?;
        let obs = observed_part(x, c);
        let first_hidden = self
            .cell
            .step(&context_input(&obs, self.features), &vec![0.0; self.hidden_size()])?;
        Ok(ConditionedProposal {
            net: self,
            coalition: c.clone(),
            observed: obs,
            masked: c.masked_indices(),
            first_hidden,
        })
    }

    /// `count` independent autoregressive draws with their `log q`.
    pub fn sample_proposal<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        c: &Coalition,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<ProposalSample>> {
        if count == 0 {
            return Err(Error::Usage("sample count must be at least 1".into()));
        }
        let cond = self.condition(x, c)?;
        (0..count).map(|_| cond.sample(rng)).collect()
    }

    /// Teacher-forced unroll recorded on `tape`; returns `(log q, context)`.
    /// The proposal parameters occupy slots `base_slot..base_slot + 6`.
    pub fn log_density_on_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        base_slot: usize,
        x: &[f64],
        c: &Coalition,
    ) -> Result<(Var, Var)> {
        self.check_coalition(x, c)?;
        let d = self.features;
        let masked = c.masked_indices();
        let obs = observed_part(x, c);
        let gru = self.cell.bind(tape, base_slot);
        let h0 = tape.constant(vec![0.0; self.hidden_size()]);
        let first = tape.constant(context_input(&obs, d));
        let mut h = gru.step(tape, first, h0);
        let context = tape.slice(h, 2 * d, self.context_dim);
        let mut total: Option<Var> = None;
        for (j, &idx) in masked.iter().enumerate() {
            if j > 0 {
                let mut input = obs.clone();
                input.resize(2 * d, 0.0);
                input[d + masked[j - 1]] = x[masked[j - 1]];
                let iv = tape.constant(input);
                h = gru.step(tape, iv, h);
            }
            let mu = tape.slice(h, idx, 1);
            let log_sigma = tape.slice(h, d + idx, 1);
            let xv = tape.constant(vec![x[idx]]);
            let term = tape.gauss_log_pdf(xv, mu, log_sigma);
            total = Some(match total {
                None => term,
                Some(t) => tape.add(t, term),
            });
        }
        Ok((total.expect("nonempty masked set"), context))
    }
}

impl ConditionedProposal<'_> {
    pub fn context(&self) -> &[f64] {
        &self.first_hidden[2 * self.net.features..]
    }

    pub fn coalition(&self) -> &Coalition {
        &self.coalition
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ProposalSample> {
        let d = self.net.features;
        let mut values = Vec::with_capacity(self.masked.len());
        let mut log_q = 0.0;
        let mut h_owned: Option<Vec<f64>> = None;
        for (j, &idx) in self.masked.iter().enumerate() {
            if j > 0 {
                let mut input = self.observed.clone();
                input.resize(2 * d, 0.0);
                input[d + self.masked[j - 1]] = values[j - 1];
                let prev = h_owned.as_deref().unwrap_or(&self.first_hidden);
                h_owned = Some(self.net.cell.step(&input, prev)?);
            }
            let h = h_owned.as_deref().unwrap_or(&self.first_hidden);
            let (mu, log_sigma) = (h[idx], h[d + idx]);
            let sigma = log_sigma.exp();
            if !sigma.is_finite() || !mu.is_finite() {
                return Err(Error::NumericOverflow(format!("proposal scale at step {j}")));
            }
            let eps: f64 = rng.sample(StandardNormal);
            let value = mu + sigma * eps;
            let term = gaussian_log_density(value, mu, log_sigma);
            log_q = if j == 0 { term } else { log_q + term };
            values.push(value);
        }
        Ok(ProposalSample { values, log_q })
    }

    /// Teacher-forced `log q` of given masked values under this conditioning.
    pub fn log_q(&self, values: &[f64]) -> Result<f64> {
        check_dim("masked value count", self.masked.len(), values.len())?;
        let d = self.net.features;
        let mut h = self.first_hidden.clone();
        let mut log_q = 0.0;
        for (j, &idx) in self.masked.iter().enumerate() {
            if j > 0 {
                let mut input = self.observed.clone();
                input.resize(2 * d, 0.0);
                input[d + self.masked[j - 1]] = values[j - 1];
                h = self.net.cell.step(&input, &h)?;
            }
            let term = gaussian_log_density(values[j], h[idx], h[d + idx]);
            log_q = if j == 0 { term } else { log_q + term };
        }
        Ok(log_q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HALF_LN_2PI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encode_examples() {
        let c = Coalition::from_masked(3, &[2]).unwrap();
        assert_eq!(
            encode_step_input(&[1.0, 2.0, 3.0], &c, 0, 3.0).unwrap(),
            vec![1.0, 2.0, 0.0, 0.0, 0.0, 3.0]
        );
        let c = Coalition::all_masked(3);
        assert_eq!(
            encode_step_input(&[7.0, 8.0, 9.0], &c, 0, 0.25).unwrap(),
            vec![0.0, 0.0, 0.0, 0.25, 0.0, 0.0]
        );
        assert!(encode_step_input(&[1.0, 2.0, 3.0], &c, 3, 0.0).is_err());
    }

    #[test]
    fn encode_support_is_structural() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let d = rng.random_range(1..12);
            let c = crate::masking::draw_mask(d, 0.5, &mut rng).unwrap();
            if c.masked_count() == 0 {
                continue;
            }
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
            let j = rng.random_range(0..c.masked_count());
            let enc = encode_step_input(&x, &c, j, 1.5).unwrap();
            let support_a: Vec<usize> = (0..d).filter(|&i| enc[i] != 0.0).collect();
            let support_b: Vec<usize> = (0..d).filter(|&i| enc[d + i] != 0.0).collect();
            assert_eq!(support_a, c.observed_indices());
            assert_eq!(support_b, vec![c.masked_indices()[j]]);
        }
    }

    #[test]
    fn zero_network_is_standard_normal() {
        let net = ProposalNetwork::zeros(3, 4);
        let c = Coalition::from_masked(3, &[1]).unwrap();
        let dens = net.log_density(&[0.5, 0.0, -0.5], &c).unwrap();
        assert_eq!(dens.steps.len(), 1);
        assert_eq!(dens.steps[0].mu[1], 0.0);
        assert_eq!(dens.steps[0].sigma[1], 1.0);
        assert!((dens.log_density + 0.918939).abs() < 1e-6);

        let c = Coalition::from_masked(3, &[0, 2]).unwrap();
        let dens = net.log_density(&[0.0, 1.0, 0.0], &c).unwrap();
        assert!((dens.log_density + 2.0 * HALF_LN_2PI).abs() < 1e-15);
        assert!((dens.log_density + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_masked_set_is_a_usage_error() {
        let net = ProposalNetwork::zeros(2, 2);
        let c = Coalition::all_observed(2);
        assert!(matches!(net.log_density(&[0.0, 0.0], &c), Err(Error::Usage(_))));
    }

    #[test]
    fn step_density_integrates_to_one() {
        let net = ProposalNetwork::new(3, 5, &mut ChaCha8Rng::seed_from_u64(6));
        let c = Coalition::from_masked(3, &[1]).unwrap();
        let step = net.log_density(&[0.3, 0.0, -0.2], &c).unwrap().steps.remove(0);
        let (lo, hi, n) = (-15.0, 15.0, 30_000);
        let dx = (hi - lo) / n as f64;
        let integral: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * step.log_density(lo + k as f64 * dx).exp()
            })
            .sum::<f64>()
            * dx;
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
        assert!(step.sigma.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let net = ProposalNetwork::new(4, 3, &mut ChaCha8Rng::seed_from_u64(7));
        let c = Coalition::from_masked(4, &[0, 3]).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let a = net.sample_proposal(&x, &c, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = net.sample_proposal(&x, &c, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.log_q.is_finite()));
    }

    #[test]
    fn zero_network_samples_are_standard_normal() {
        let net = ProposalNetwork::zeros(2, 2);
        let c = Coalition::all_masked(2);
        let k = 10_000;
        let draws = net
            .sample_proposal(&[0.0, 0.0], &c, k, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        for coord in 0..2 {
            let mean = draws.iter().map(|s| s.values[coord]).sum::<f64>() / k as f64;
            assert!(mean.abs() < 4.0 / (k as f64).sqrt(), "coord {coord}: {mean}");
        }
        let one = net
            .sample_proposal(&[0.0, 0.0], &c, 1, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].values.len(), 2);
        assert!(net.sample_proposal(&[0.0, 0.0], &c, 0, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn sampled_log_q_matches_teacher_forced_scoring() {
        let net = ProposalNetwork::new(4, 3, &mut ChaCha8Rng::seed_from_u64(12));
        let c = Coalition::from_masked(4, &[1, 2, 3]).unwrap();
        let x = [0.7, 0.0, 0.0, 0.0];
        let cond = net.condition(&x, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let s = cond.sample(&mut rng).unwrap();
            let full = crate::masking::reassemble(&s.values, &[0.7, 0.0, 0.0, 0.0], &c).unwrap();
            let tf = net.log_density(&full, &c).unwrap();
            assert_eq!(tf.log_density.to_bits(), s.log_q.to_bits());
            assert_eq!(cond.log_q(&s.values).unwrap().to_bits(), s.log_q.to_bits());
        }
    }

    #[test]
    fn tape_log_density_is_bit_identical() {
        let net = ProposalNetwork::new(3, 4, &mut ChaCha8Rng::seed_from_u64(13));
        let c = Coalition::from_masked(3, &[0, 2]).unwrap();
        let x = [0.4, -0.3, 1.2];
        let plain = net.log_density(&x, &c).unwrap();
        let mut tape = Tape::new();
        let (lq, ctx) = net.log_density_on_tape(&mut tape, 0, &x, &c).unwrap();
        assert_eq!(tape.scalar(lq).to_bits(), plain.log_density.to_bits());
        assert_eq!(tape.value(ctx), plain.context.as_slice());
    }
}
