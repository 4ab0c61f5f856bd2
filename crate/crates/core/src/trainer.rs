//! Joint maximum-likelihood training of the energy network and the GRU
//! proposal under dynamic masking.
//!
//! Per sample the objective is
//!
//! ```text
//! g(x, γ) + log Ẑ(x_S, γ) - log q(x_S̄ | x_S)
//! ```
//!
//! where `Ẑ` is the importance-sampled partition function over `K̃`
//! proposal draws. The draws and their `log q` enter `Ẑ` as constants;
//! gradients reach the proposal through its own likelihood term and through
//! the context vector `γ`.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyModel, EnergyFunction};
use crate::error::{Error, Result};
use crate::masking::{draw_training_mask, reassemble, Coalition, MaskSchedule};
use crate::nn::{Gradients, Tape, Tensor};
use crate::proposal::{ProposalNetwork, ProposalSample};

/// Energy network and proposal trained together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmShapModel {
    pub energy: EnergyModel,
    pub proposal: ProposalNetwork,
}

impl EmShapModel {
    pub fn new<R: Rng + ?Sized>(features: usize, context_dim: usize, energy_hidden: usize, rng: &mut R) -> Self {
        let proposal = ProposalNetwork::new(features, context_dim, rng);
        let energy = EnergyModel::new(features, context_dim, energy_hidden, rng);
        Self { energy, proposal }
    }

    pub fn features(&self) -> usize {
        self.proposal.features
    }

    pub fn validate(&self) -> Result<()> {
        self.proposal.validate()?;
        self.energy.validate()?;
        if self.energy.features != self.proposal.features || self.energy.context_dim != self.proposal.context_dim {
            return Err(Error::Config("energy and proposal disagree on feature or context size".into()));
        }
        Ok(())
    }

    /// Proposal tensors first, then energy tensors; slot `k` on a tape is
    /// entry `k` of this list.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.proposal.parameters();
        p.extend(self.energy.parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.proposal.parameters_mut();
        p.extend(self.energy.parameters_mut());
        p
    }

    fn energy_base_slot(&self) -> usize {
        self.proposal.parameters().len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub k_tilde: usize,
    pub zeta_min: f64,
    pub zeta_max: f64,
    pub delta_override: Option<f64>,
    pub seed: u64,
    pub context_dim: usize,
    pub energy_hidden: usize,
    pub confinement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            k_tilde: 32,
            zeta_min: 0.2,
            zeta_max: 0.8,
            delta_override: None,
            seed: 0,
            context_dim: 32,
            energy_hidden: 32,
            confinement: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.k_tilde == 0 {
            return bad("k_tilde must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return bad("learning_rate must lie in (0, 1)");
        }
        if self.context_dim == 0 || self.energy_hidden == 0 {
            return bad("network sizes must be positive");
        }
        if !(self.confinement >= 0.0 && self.confinement.is_finite()) {
            return bad("confinement must be finite and non-negative");
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<MaskSchedule> {
        match self.delta_override {
            Some(delta) => MaskSchedule::new(self.zeta_min, self.zeta_max, delta),
            None => MaskSchedule::spanning(self.zeta_min, self.zeta_max, self.epochs),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub zeta: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub model: EmShapModel,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn zetas(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.zeta).collect()
    }

    /// `epoch,zeta,loss` lines with a header.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,zeta,loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.zeta, e.loss));
        }
        out
    }
}

/// Per-sample objective from its three ingredients.
pub fn sample_objective(energy: f64, log_z_hat: f64, log_q: f64) -> f64 {
    energy + log_z_hat - log_q
}

#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub loss: f64,
    pub energy: f64,
    pub log_z_hat: f64,
    pub log_q: f64,
    pub grads: Gradients,
}

/// `K̃` proposal draws used for the partition estimate of one sample.
pub fn partition_draws<R: Rng + ?Sized>(
    model: &EmShapModel,
    x: &[f64],
    c: &Coalition,
    k_tilde: usize,
    rng: &mut R,
) -> Result<Vec<ProposalSample>> {
    model.proposal.sample_proposal(x, c, k_tilde, rng)
}

/// Objective and gradients for one sample given fixed partition draws.
pub fn sample_loss(model: &EmShapModel, x: &[f64], c: &Coalition, draws: &[ProposalSample]) -> Result<SampleLoss> {
    if draws.is_empty() {
        return Err(Error::Usage("partition estimate needs at least one draw".into()));
    }
    let mut tape = Tape::new();
    let (log_q, context) = model.proposal.log_density_on_tape(&mut tape, 0, x, c)?;
    let energy = model.energy.bind(&mut tape, model.energy_base_slot());

    let g_data = energy.energy(&mut tape, x, context);
    let observed: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| if c.is_masked(i) { 0.0 } else { *v })
        .collect();
    let mut energies = Vec::with_capacity(draws.len());
    let mut neg_log_q = Vec::with_capacity(draws.len());
    for d in draws {
        let xk = reassemble(&d.values, &observed, c)?;
        energies.push(energy.energy(&mut tape, &xk, context));
        neg_log_q.push(-d.log_q);
    }
    let g_all = tape.concat(&energies);
    let neg_g = tape.neg(g_all);
    let nlq = tape.constant(neg_log_q);
    let log_w = tape.add(neg_g, nlq);
    let lse = tape.log_sum_exp(log_w);
    let log_z = tape.add_const(lse, -(draws.len() as f64).ln());
    let a = tape.add(g_data, log_z);
    let loss = tape.sub(a, log_q);

    let out = SampleLoss {
        loss: tape.scalar(loss),
        energy: tape.scalar(g_data),
        log_z_hat: tape.scalar(log_z),
        log_q: tape.scalar(log_q),
        grads: tape.backward(loss)?,
    };
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub loss: f64,
    pub grads: Gradients,
}

/// Mean objective and gradient over a batch with one coalition per sample.
pub fn loss_step<R: Rng + ?Sized>(
    batch: &[&[f64]],
    model: &EmShapModel,
    coalitions: &[Coalition],
    k_tilde: usize,
    rng: &mut R,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    if batch.len() != coalitions.len() {
        return Err(Error::Usage("one coalition per sample is required".into()));
    }
    let mut grads = Gradients::new();
    let mut total = 0.0;
    for (i, (x, c)) in batch.iter().zip(coalitions).enumerate() {
        if c.masked_count() == 0 {
            return Err(Error::Usage(format!("sample {i} has no masked feature")));
        }
        let draws = partition_draws(model, x, c, k_tilde, rng)?;
        let s = sample_loss(model, x, c, &draws)?;
        for (term, v) in [("energy", s.energy), ("log partition", s.log_z_hat), ("proposal log density", s.log_q)] {
            if !v.is_finite() {
                return Err(Error::NumericOverflow(format!("{term} of sample {i}")));
            }
        }
        total += s.loss;
        grads.add_assign(&s.grads);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok(BatchLoss {
        loss: total / n,
        grads,
    })
}

/// Negative log-likelihood of held-out samples under the model (same
/// objective as training, no gradients).
pub fn heldout_objective<R: Rng + ?Sized>(
    model: &EmShapModel,
    data: &[Vec<f64>],
    coalitions: &[Coalition],
    k_tilde: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut total = 0.0;
    for (x, c) in data.iter().zip(coalitions) {
        let cond = model.proposal.condition(x, c)?;
        let draws: Vec<ProposalSample> = (0..k_tilde).map(|_| cond.sample(rng)).collect::<Result<_>>()?;
        let est = crate::energy::estimate_partition(&model.energy, &draws, x, c, cond.context())?;
        let g = model.energy.energy(x, cond.context())?;
        let log_q = model.proposal.log_density(x, c)?.log_density;
        total += sample_objective(g, est.log_z_hat, log_q);
    }
    Ok(total / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[&Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }
}

/// One Adam step with bias correction.
pub fn adam_update(params: &mut [&mut Tensor], grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension {
            context: "adam parameter count",
            expected: state.m.len(),
            actual: grads.len(),
        });
    }
    state.step += 1;
    let bc1 = 1.0 - state.beta1.powi(state.step);
    let bc2 = 1.0 - state.beta2.powi(state.step);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Dimension {
                context: "adam gradient length",
                expected: p.len(),
                actual: g.len(),
            });
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, w) in p.as_mut_slice().iter_mut().enumerate() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Trains on `data` (rows already normalised). Deterministic given the seed.
pub fn train(data: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let d = data.first().map(Vec::len).unwrap_or(0);
    if d < 2 {
        return Err(Error::Data("training needs at least two features".into()));
    }
    if data.len() < cfg.batch_size {
        return Err(Error::Data(format!(
            "{} samples are fewer than the batch size {}",
            data.len(),
            cfg.batch_size
        )));
    }
    if data.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Data("training rows must be finite and rectangular".into()));
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = EmShapModel::new(d, cfg.context_dim, cfg.energy_hidden, &mut rng);
    model.energy.confinement = cfg.confinement;
    let mut adam = AdamState::new(&model.parameters());
    let mut schedule = cfg.schedule()?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let zeta = schedule.zeta();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            let coalitions = chunk
                .iter()
                .map(|_| draw_training_mask(d, zeta, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let step = loss_step(&batch, &model, &coalitions, cfg.k_tilde, &mut rng)?;
            if !step.loss.is_finite() || step.loss.abs() > DIVERGENCE_LIMIT || !step.grads.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: step.loss,
                });
            }
            let grads = step.grads.dense_for(&model.parameters());
            adam_update(&mut model.parameters_mut(), &grads, &mut adam, cfg.learning_rate)?;
            epoch_loss += step.loss;
            batches += 1;
        }
        epochs.push(EpochRecord {
            epoch,
            zeta,
            loss: epoch_loss / batches as f64,
        });
        schedule = schedule.advance();
    }

    Ok(TrainReport {
        epochs,
        model,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HALF_LN_2PI;

    #[test]
    fn objective_arithmetic() {
        let l = sample_objective(1.0, 1.0, -0.918939);
        assert!((l - 2.918939).abs() < 1e-12);
        // proposal term alone at its mean with unit scale
        assert!((-(-HALF_LN_2PI) - 0.918939).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut t = Tensor::vector(vec![0.5, -1.0]);
        let mut state = AdamState::new(&[&t]);
        for _ in 0..5 {
            adam_update(&mut [&mut t], &[vec![0.0, 0.0]], &mut state, 1e-3).unwrap();
        }
        assert_eq!(t.as_slice(), &[0.5, -1.0]);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut t = Tensor::vector(vec![0.0]);
        let mut state = AdamState::new(&[&t]);
        let lr = 1e-3;
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..5000 {
            adam_update(&mut [&mut t], &[vec![2.5]], &mut state, lr).unwrap();
            last_step = prev - t.as_slice()[0];
            prev = t.as_slice()[0];
        }
        assert!((last_step - lr).abs() < 1e-9, "{last_step}");
    }

    #[test]
    fn adam_matches_reference_recurrence() {
        // Scalar reference written out independently.
        let grads = [0.3, -1.2, 0.05, 2.0, -0.7, 0.0, 0.9];
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 0.25f64);
        let mut t = Tensor::vector(vec![0.25]);
        let mut state = AdamState::new(&[&t]);
        for (k, g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(k as i32 + 1));
            let vh = v / (1.0 - b2.powi(k as i32 + 1));
            w -= lr * mh / (vh.sqrt() + eps);
            adam_update(&mut [&mut t], &[vec![*g]], &mut state, lr).unwrap();
            assert!((t.as_slice()[0] - w).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.zeta_min = 0.9;
        cfg.zeta_max = 0.1;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            k_tilde: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            learning_rate: 2.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.1, -(i as f64) * 0.1]).collect();
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            context_dim: 3,
            energy_hidden: 4,
            ..TrainConfig::default()
        };
        let report = train(&data, &cfg).unwrap();
        assert!(report.epochs.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        assert_eq!(report.model, EmShapModel::new(2, 3, 4, &mut rng));
    }

    #[test]
    fn empty_batch_and_unmasked_sample_are_rejected() {
        let model = EmShapModel::new(2, 2, 3, &mut ChaCha8Rng::seed_from_u64(0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(loss_step(&[], &model, &[], 4, &mut rng).is_err());
        let x = [0.1, 0.2];
        assert!(loss_step(&[&x], &model, &[Coalition::all_observed(2)], 4, &mut rng).is_err());
    }
}
