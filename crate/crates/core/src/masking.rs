//! Feature coalitions and the Bernoulli masking schedule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Partition of `d` features into observed (`S`) and masked (`S̄`) sets.
///
/// Stored as a single bitset of masked features, so `S ∪ S̄ = D` and
/// `S ∩ S̄ = ∅` hold by construction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Coalition {
    d: usize,
    masked: Vec<u64>,
}

impl Coalition {
    /// Every feature observed.
    pub fn all_observed(d: usize) -> Self {
        Self {
            d,
            masked: vec![0; d.div_ceil(64)],
        }
    }

    /// Every feature masked.
    pub fn all_masked(d: usize) -> Self {
        let mut c = Self::all_observed(d);
        for i in 0..d {
            c.set_masked(i, true);
        }
        c
    }

    pub fn from_masked(d: usize, masked: &[usize]) -> Result<Self> {
        let mut c = Self::all_observed(d);
        for &i in masked {
            if i >= d {
                return Err(Error::Usage(format!("feature {i} out of range for {d} features")));
            }
            c.set_masked(i, true);
        }
        Ok(c)
    }

    pub fn from_observed(d: usize, observed: &[usize]) -> Result<Self> {
        let mut c = Self::all_masked(d);
        for &i in observed {
            if i >= d {
                return Err(Error::Usage(format!("feature {i} out of range for {d} features")));
            }
            c.set_masked(i, false);
        }
        Ok(c)
    }

    /// Bit `i` of `observed_bits` set means feature `i` is observed. `d <= 64`.
    pub fn from_observed_bits(d: usize, observed_bits: u64) -> Self {
        assert!(d <= 64, "bit constructor supports at most 64 features");
        let mut c = Self::all_masked(d);
        for i in 0..d {
            if observed_bits >> i & 1 == 1 {
                c.set_masked(i, false);
            }
        }
        c
    }

    pub fn observed_bits(&self) -> u64 {
        assert!(self.d <= 64, "bit view supports at most 64 features");
        let all = if self.d == 64 { u64::MAX } else { (1u64 << self.d) - 1 };
        !self.masked.first().copied().unwrap_or(0) & all
    }

    pub fn set_masked(&mut self, i: usize, masked: bool) {
        let (w, b) = (i / 64, i % 64);
        if masked {
            self.masked[w] |= 1 << b;
        } else {
            self.masked[w] &= !(1 << b);
        }
    }

    pub fn features(&self) -> usize {
        self.d
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn is_observed(&self, i: usize) -> bool {
        !self.is_masked(i)
    }

    /// Masked features in ascending index order (the canonical GRU order).
    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.d).filter(|&i| self.is_masked(i)).collect()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.d).filter(|&i| self.is_observed(i)).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn observed_count(&self) -> usize {
        self.d - self.masked_count()
    }
}

impl Serialize for Coalition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            features: usize,
            masked: Vec<usize>,
        }
        Repr {
            features: self.d,
            masked: self.masked_indices(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Coalition {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            features: usize,
            masked: Vec<usize>,
        }
        let r = Repr::deserialize(de)?;
        Coalition::from_masked(r.features, &r.masked).map_err(serde::de::Error::custom)
    }
}

/// Each feature independently masked with probability `zeta`.
pub fn draw_mask<R: Rng + ?Sized>(d: usize, zeta: f64, rng: &mut R) -> Result<Coalition> {
    if d == 0 {
        return Err(Error::Usage("a coalition needs at least one feature".into()));
    }
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::Usage(format!("masking probability {zeta} outside [0, 1]")));
    }
    let mut c = Coalition::all_observed(d);
    for i in 0..d {
        if rng.random::<f64>() < zeta {
            c.set_masked(i, true);
        }
    }
    Ok(c)
}

const MAX_REDRAWS: usize = 1000;

/// A training mask: redrawn until at least one feature is masked. If that
/// fails `MAX_REDRAWS` times (tiny `zeta`), a single uniformly chosen
/// feature is masked instead.
pub fn draw_training_mask<R: Rng + ?Sized>(d: usize, zeta: f64, rng: &mut R) -> Result<Coalition> {
    if zeta > 0.0 {
        for _ in 0..MAX_REDRAWS {
            let c = draw_mask(d, zeta, rng)?;
            if c.masked_count() > 0 {
                return Ok(c);
            }
        }
    } else {
        draw_mask(d, zeta, rng)?;
    }
    let i = rng.random_range(0..d);
    Coalition::from_masked(d, &[i])
}

/// Split `x` into masked values (ascending index order) and the observed
/// view `x * (1 - b)`, which keeps positions and zeroes masked entries.
pub fn apply_mask(x: &[f64], c: &Coalition) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("sample length", c.features(), x.len())?;
    let masked = c.masked_indices().into_iter().map(|i| x[i]).collect();
    let observed = x
        .iter()
        .enumerate()
        .map(|(i, v)| if c.is_masked(i) { 0.0 } else { *v })
        .collect();
    Ok((masked, observed))
}

/// Inverse of [`apply_mask`]: writes `masked_values` into the masked
/// positions of `observed`.
pub fn reassemble(masked_values: &[f64], observed: &[f64], c: &Coalition) -> Result<Vec<f64>> {
    check_dim("observed view length", c.features(), observed.len())?;
    check_dim("masked value count", c.masked_count(), masked_values.len())?;
    let mut x = observed.to_vec();
    for (i, v) in c.masked_indices().into_iter().zip(masked_values) {
        x[i] = *v;
    }
    Ok(x)
}

/// Linearly increasing masking rate `zeta_e = min(zeta_min + e * delta, zeta_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub zeta_min: f64,
    pub zeta_max: f64,
    pub delta: f64,
    pub epoch: usize,
}

impl MaskSchedule {
    pub fn new(zeta_min: f64, zeta_max: f64, delta: f64) -> Result<Self> {
        let s = Self {
            zeta_min,
            zeta_max,
            delta,
            epoch: 0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Increment chosen so the rate reaches `zeta_max` on the last of `epochs`.
    pub fn spanning(zeta_min: f64, zeta_max: f64, epochs: usize) -> Result<Self> {
        let delta = if epochs > 1 {
            (zeta_max - zeta_min) / (epochs - 1) as f64
        } else {
            0.0
        };
        Self::new(zeta_min, zeta_max, delta)
    }

    /// Constant rate.
    pub fn fixed(zeta: f64) -> Result<Self> {
        Self::new(zeta, zeta, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.zeta_min)
            && (0.0..=1.0).contains(&self.zeta_max)
            && self.zeta_min <= self.zeta_max
            && self.delta >= 0.0
            && self.delta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "masking schedule needs 0 <= zeta_min <= zeta_max <= 1 and delta >= 0 (got {}, {}, {})",
                self.zeta_min, self.zeta_max, self.delta
            )))
        }
    }

    pub fn zeta(&self) -> f64 {
        (self.zeta_min + self.epoch as f64 * self.delta).min(self.zeta_max)
    }

    pub fn advance(self) -> Self {
        Self {
            epoch: self.epoch + 1,
            ..self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = draw_mask(10, 0.0, &mut rng).unwrap();
        assert_eq!(c.masked_count(), 0);
        assert_eq!(c.observed_indices(), (0..10).collect::<Vec<_>>());
        let c = draw_mask(10, 1.0, &mut rng).unwrap();
        assert_eq!(c.masked_count(), 10);
    }

    #[test]
    fn mean_masked_count_matches_binomial() {
        // Binomial(196, 0.5): sd of the mean over 10k draws is 7/100.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let total: usize = (0..n)
            .map(|_| draw_mask(196, 0.5, &mut rng).unwrap().masked_count())
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 98.0).abs() < 1.5, "mean {mean}");
    }

    #[test]
    fn training_masks_are_never_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for zeta in [0.0, 1e-9, 0.05, 0.5] {
            for _ in 0..200 {
                assert!(draw_training_mask(3, zeta, &mut rng).unwrap().masked_count() >= 1);
            }
        }
    }

    #[test]
    fn schedule_reaches_maximum() {
        let mut s = MaskSchedule::new(0.2, 0.8, 0.2).unwrap();
        let expected = [0.2, 0.4, 0.6, 0.8];
        for e in expected {
            assert!((s.zeta() - e).abs() < 1e-12);
            s = s.advance();
        }
        assert_eq!(s.zeta(), 0.8);
        assert_eq!(s.advance().zeta(), 0.8);
    }

    #[test]
    fn zero_delta_is_fixed_rate() {
        let mut s = MaskSchedule::fixed(0.6).unwrap();
        for _ in 0..5 {
            assert_eq!(s.zeta(), 0.6);
            s = s.advance();
        }
    }

    #[test]
    fn spanning_schedule_ends_on_last_epoch() {
        let mut s = MaskSchedule::spanning(0.2, 0.8, 7).unwrap();
        for _ in 0..6 {
            s = s.advance();
        }
        assert!((s.zeta() - 0.8).abs() < 1e-12);
        assert!(MaskSchedule::new(0.9, 0.1, 0.1).is_err());
        assert!(MaskSchedule::new(0.1, 0.9, -0.1).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        let c = Coalition::all_observed(3);
        let (m, o) = apply_mask(&[1.0, 2.0, 3.0], &c).unwrap();
        assert!(m.is_empty());
        assert_eq!(o, vec![1.0, 2.0, 3.0]);
        let c = Coalition::from_masked(3, &[2]).unwrap();
        let (m, o) = apply_mask(&[1.0, 2.0, 3.0], &c).unwrap();
        assert_eq!(m, vec![3.0]);
        assert_eq!(o, vec![1.0, 2.0, 0.0]);
    }

    #[test]
    fn wide_coalitions_use_multiple_words() {
        let c = Coalition::from_masked(130, &[0, 64, 129]).unwrap();
        assert_eq!(c.masked_indices(), vec![0, 64, 129]);
        assert_eq!(c.observed_count(), 127);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<Coalition>(&json).unwrap(), c);
    }

    proptest! {
        #[test]
        fn round_trip_reproduces_sample(
            x in proptest::collection::vec(-1e6f64..1e6, 1..40),
            bits in any::<u64>(),
        ) {
            let d = x.len();
            let masked: Vec<usize> = (0..d).filter(|i| bits >> (i % 64) & 1 == 1).collect();
            let c = Coalition::from_masked(d, &masked).unwrap();
            let (m, o) = apply_mask(&x, &c).unwrap();
            prop_assert_eq!(reassemble(&m, &o, &c).unwrap(), x);
            prop_assert_eq!(c.masked_count() + c.observed_count(), d);
        }

        #[test]
        fn schedule_is_monotone_and_capped(
            lo in 0.0f64..1.0, span in 0.0f64..1.0, delta in 0.0f64..0.5, steps in 1usize..50,
        ) {
            let hi = (lo + span).min(1.0);
            let mut s = MaskSchedule::new(lo, hi, delta).unwrap();
            let mut prev = s.zeta();
            for _ in 0..steps {
                s = s.advance();
                prop_assert!(s.zeta() >= prev);
                prop_assert!(s.zeta() <= hi);
                prev = s.zeta();
            }
        }
    }
}
