use serde::{Deserialize, Serialize};

use crate::rng::{CounterRng, STREAM_MASKS};

/// Masks have magnitude in `[2^-MASK_LOG2_RANGE, 2^MASK_LOG2_RANGE]`.
pub const MASK_LOG2_RANGE: f64 = 8.0;
/// The comparison offset coefficient is `α·b` with `b` uniform on
/// `[-OFFSET_RANGE, OFFSET_RANGE]`, so it stays on the scale of `α`.
pub const OFFSET_RANGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskUse {
    VelocityNorm,
    MomentumNorm,
    MissDistance,
    Alpha,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub usage: MaskUse,
    /// Pipeline key index (0 or 1).
    pub pipeline: usize,
    pub value: f64,
}

/// How masks are produced. Everything other than `Fresh` exists for tests
/// and fault injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Fresh,
    /// `w = 1`; comparison masks stay random.
    UnitW,
    /// `w = 1`, `α = 1`, `β = 0`.
    Identity,
    /// The first `w` drawn is returned for every later `w`.
    ReuseW,
}

/// Log-uniform magnitude in the mask range. Always positive.
pub fn draw_magnitude(rng: &mut CounterRng) -> f64 {
    rng.uniform_range(-MASK_LOG2_RANGE, MASK_LOG2_RANGE).exp2()
}

/// Coordinator-private mask source with a log of every value handed out.
#[derive(Debug, Clone)]
pub struct MaskSampler {
    rng: CounterRng,
    mode: MaskMode,
    reused: Option<f64>,
    log: Vec<MaskRecord>,
}

impl MaskSampler {
    pub fn new(seed: u64, mode: MaskMode) -> Self {
        Self {
            rng: CounterRng::new(seed, STREAM_MASKS),
            mode,
            reused: None,
            log: Vec::new(),
        }
    }

    /// Multiplicative mask `w > 0`. The delegated replies `t^-1/2` and `√t`
    /// only carry `|w|`, so a sign would not survive unmasking.
    pub fn w(&mut self, usage: MaskUse, pipeline: usize) -> f64 {
        let value = match self.mode {
            MaskMode::UnitW | MaskMode::Identity => 1.0,
            MaskMode::ReuseW => *self.reused.get_or_insert_with(|| draw_magnitude(&mut self.rng)),
            MaskMode::Fresh => draw_magnitude(&mut self.rng),
        };
        self.record(usage, pipeline, value)
    }

    /// Comparison pair `(α, β)`: `|α|` log-uniform with a random sign, `β` uniform.
    pub fn alpha_beta(&mut self, pipeline: usize) -> (f64, f64) {
        let (alpha, beta) = if self.mode == MaskMode::Identity {
            (1.0, 0.0)
        } else {
            let mag = draw_magnitude(&mut self.rng);
            let alpha = if self.rng.coin() { -mag } else { mag };
            (alpha, alpha * self.rng.uniform_range(-OFFSET_RANGE, OFFSET_RANGE))
        };
        self.record(MaskUse::Alpha, pipeline, alpha);
        self.record(MaskUse::Beta, pipeline, beta);
        (alpha, beta)
    }

    fn record(&mut self, usage: MaskUse, pipeline: usize, value: f64) -> f64 {
        self.log.push(MaskRecord { usage, pipeline, value });
        value
    }

    pub fn log(&self) -> &[MaskRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<MaskRecord> {
        self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        let mut m = MaskSampler::new(1, MaskMode::Fresh);
        let lo = (-MASK_LOG2_RANGE).exp2();
        let hi = MASK_LOG2_RANGE.exp2();
        let mut neg = 0;
        for _ in 0..5000 {
            let w = m.w(MaskUse::MissDistance, 0);
            assert!(w >= lo && w <= hi);
            let (a, b) = m.alpha_beta(0);
            assert!(a.abs() >= lo && a.abs() <= hi);
            assert!(b.abs() <= OFFSET_RANGE * a.abs());
            neg += (a < 0.0) as u32;
        }
        assert!((2200..2800).contains(&neg), "{neg}");
    }

    #[test]
    fn log2_of_magnitude_is_uniform() {
        let mut rng = CounterRng::new(5, STREAM_MASKS);
        let n = 20_000;
        let mean = (0..n).map(|_| draw_magnitude(&mut rng).log2()).sum::<f64>() / n as f64;
        // Uniform on [-8, 8]: standard deviation 16/√12 ≈ 4.6, so the mean's is ≈ 0.033.
        assert!(mean.abs() < 0.15, "{mean}");
    }

    #[test]
    fn modes() {
        let mut unit = MaskSampler::new(1, MaskMode::UnitW);
        assert_eq!(unit.w(MaskUse::VelocityNorm, 0), 1.0);
        assert_ne!(unit.alpha_beta(0), (1.0, 0.0));

        let mut id = MaskSampler::new(1, MaskMode::Identity);
        assert_eq!(id.alpha_beta(1), (1.0, 0.0));

        let mut reuse = MaskSampler::new(1, MaskMode::ReuseW);
        let a = reuse.w(MaskUse::VelocityNorm, 0);
        assert_eq!(reuse.w(MaskUse::MomentumNorm, 0), a);
        assert_eq!(reuse.log().len(), 2);
    }

    #[test]
    fn fresh_masks_do_not_repeat() {
        let mut m = MaskSampler::new(11, MaskMode::Fresh);
        for _ in 0..1000 {
            m.w(MaskUse::VelocityNorm, 0);
            m.alpha_beta(0);
        }
        let mut vals: Vec<u64> = m.log().iter().map(|r| r.value.to_bits()).collect();
        vals.sort_unstable();
        vals.dedup();
        assert_eq!(vals.len(), m.log().len());
    }
}
