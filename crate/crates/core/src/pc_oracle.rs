//! Plaintext collision-probability references: 2-D quadrature of the
//! conjunction-plane Gaussian over the collision disk, and plain Monte Carlo.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use thiserror::Error;

use crate::geometry::ConjunctionPlaneModel;
use crate::rng::{CounterRng, ZStream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("conjunction-plane covariance is singular")]
    SingularCovariance,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("at least {required} trials are required, got {got}")]
    InsufficientTrials { required: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureScheme {
    /// Outer midpoint rule over the disk chord angle `x = r0 + R sin θ`, with
    /// the inner integral along each chord evaluated exactly through `erf`.
    Chord,
    /// Tensor-product midpoint rule on the disk's bounding square with an
    /// inside-disk mask.
    MaskedMidpoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Points per axis.
    pub resolution: usize,
    pub scheme: QuadratureScheme,
    /// When set, the resolution is doubled until successive estimates differ
    /// by less than this.
    pub refine_tol: Option<f64>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            resolution: 2048,
            scheme: QuadratureScheme::Chord,
            refine_tol: None,
        }
    }
}

pub const MIN_QUADRATURE_RESOLUTION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub stream: u64,
}

impl McConfig {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self {
            samples,
            seed,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub pc: f64,
    pub n_c: u64,
    pub samples: u64,
}

impl McEstimate {
    fn from_count(n_c: u64, samples: u64) -> Self {
        Self {
            pc: n_c as f64 / samples as f64,
            n_c,
            samples,
        }
    }
}

/// Boundary counts as inside.
#[inline]
pub fn inside_collision_disk(s: [f64; 2], r0: f64, radius: f64) -> bool {
    let dx = s[0] - r0;
    dx * dx + s[1] * s[1] <= radius * radius
}

fn check_plane_covariance(sigma: &Matrix2<f64>) -> Result<(), OracleError> {
    if !(sigma[(0, 0)] > 0.0 && sigma[(1, 1)] > 0.0 && sigma.determinant() > 0.0) {
        return Err(OracleError::SingularCovariance);
    }
    Ok(())
}

/// Collision probability by quadrature of the plane Gaussian over the disk.
pub fn pc_integral(model: &ConjunctionPlaneModel, cfg: &QuadratureConfig) -> Result<f64, OracleError> {
    check_plane_covariance(&model.sigma_xz)?;
    if cfg.resolution < MIN_QUADRATURE_RESOLUTION {
        return Err(OracleError::InvalidConfig(format!(
            "quadrature resolution {} below {MIN_QUADRATURE_RESOLUTION}",
            cfg.resolution
        )));
    }
    let eval = |n: usize| match cfg.scheme {
        QuadratureScheme::Chord => chord_rule(model, n),
        QuadratureScheme::MaskedMidpoint => masked_midpoint(model, n),
    };
    let Some(tol) = cfg.refine_tol else {
        return Ok(eval(cfg.resolution));
    };
    let cap = match cfg.scheme {
        QuadratureScheme::Chord => 1 << 22,
        QuadratureScheme::MaskedMidpoint => 1 << 14,
    };
    let mut n = cfg.resolution;
    let mut prev = eval(n);
    while n < cap {
        n *= 2;
        let next = eval(n);
        if (next - prev).abs() < tol {
            return Ok(next);
        }
        prev = next;
    }
    Ok(prev)
}

/// `P(l ≤ N(0,1) ≤ u)` without cancellation in the tails.
fn normal_interval(l: f64, u: f64) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if l > 0.0 {
        0.5 * (erfc(l * s) - erfc(u * s))
    } else if u < 0.0 {
        0.5 * (erfc(-u * s) - erfc(-l * s))
    } else {
        0.5 * (erf(u * s) - erf(l * s))
    }
}

fn chord_rule(model: &ConjunctionPlaneModel, n: usize) -> f64 {
    let (a, b, c) = (model.sigma_xz[(0, 0)], model.sigma_xz[(0, 1)], model.sigma_xz[(1, 1)]);
    let cond_sd = ((a * c - b * b) / a).sqrt();
    let slope = b / a;
    let norm_x = 1.0 / (2.0 * PI * a).sqrt();
    let dtheta = PI / n as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let theta = -PI / 2.0 + (k as f64 + 0.5) * dtheta;
        let (sin, cos) = theta.sin_cos();
        let x = model.r0 + model.radius * sin;
        let half = model.radius * cos;
        let mu = slope * x;
        let marginal = norm_x * (-0.5 * x * x / a).exp();
        let inner = normal_interval((-half - mu) / cond_sd, (half - mu) / cond_sd);
        acc += marginal * inner * half;
    }
    (acc * dtheta).clamp(0.0, 1.0)
}

fn masked_midpoint(model: &ConjunctionPlaneModel, n: usize) -> f64 {
    let inv = model.sigma_xz.try_inverse().expect("checked SPD");
    let norm = 1.0 / (2.0 * PI * model.sigma_xz.determinant().sqrt());
    let h = 2.0 * model.radius / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let x = model.r0 - model.radius + (i as f64 + 0.5) * h;
        for k in 0..n {
            let z = -model.radius + (k as f64 + 0.5) * h;
            if inside_collision_disk([x, z], model.r0, model.radius) {
                let q = inv[(0, 0)] * x * x + 2.0 * inv[(0, 1)] * x * z + inv[(1, 1)] * z * z;
                acc += (-0.5 * q).exp();
            }
        }
    }
    (acc * norm * h * h).clamp(0.0, 1.0)
}

fn plane_factor(sigma: &Matrix2<f64>) -> Result<Matrix2<f64>, OracleError> {
    nalgebra::Cholesky::new(*sigma)
        .map(|c| c.l())
        .ok_or(OracleError::NotPositiveDefinite)
}

/// Iterator over `s = L₂ z`, `z ~ N(0, I₂)`, two 64-bit words per sample.
struct PlaneSampler {
    l: Matrix2<f64>,
    rng: CounterRng,
}

impl Iterator for PlaneSampler {
    type Item = [f64; 2];

    #[inline]
    fn next(&mut self) -> Option<[f64; 2]> {
        let (z0, z1) = self.rng.normal_pair();
        let s = self.l * Vector2::new(z0, z1);
        Some([s.x, s.y])
    }
}

fn plane_sampler(sigma: &Matrix2<f64>, seed: u64, stream: u64) -> Result<PlaneSampler, OracleError> {
    Ok(PlaneSampler {
        l: plane_factor(sigma)?,
        rng: CounterRng::new(seed, stream),
    })
}

/// `n` draws from `N(0, Σ_XZ)` on stream 0 of `seed`.
pub fn sample_plane(sigma_xz: &Matrix2<f64>, n: usize, seed: u64) -> Result<Vec<[f64; 2]>, OracleError> {
    Ok(plane_sampler(sigma_xz, seed, 0)?.take(n).collect())
}

pub fn pc_monte_carlo(model: &ConjunctionPlaneModel, cfg: &McConfig) -> Result<McEstimate, OracleError> {
    check_plane_covariance(&model.sigma_xz)?;
    if cfg.samples == 0 {
        return Err(OracleError::InvalidConfig("sample count must be >= 1".into()));
    }
    let sampler = plane_sampler(&model.sigma_xz, cfg.seed, cfg.stream)?;
    let n_c = sampler
        .take(cfg.samples as usize)
        .filter(|s| inside_collision_disk(*s, model.r0, model.radius))
        .count() as u64;
    Ok(McEstimate::from_count(n_c, cfg.samples))
}

/// Plaintext version of the operator-split sampling used by the encrypted
/// protocol: `sʲ = Σᵢ Q_XZ Lᵢ zᵢʲ`, with `zᵢʲ` read from the shared [`ZStream`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPlaneModel {
    pub q_xz: Matrix2x3<f64>,
    pub factors: [Matrix3<f64>; 2],
    pub r0: f64,
    pub radius: f64,
}

impl SplitPlaneModel {
    pub fn sample(&self, z: &([f64; 3], [f64; 3])) -> [f64; 2] {
        let s = self.q_xz * (self.factors[0] * Vector3::from(z.0))
            + self.q_xz * (self.factors[1] * Vector3::from(z.1));
        [s.x, s.y]
    }

    /// Squared distance of a sample from the disk center and the squared radius.
    pub fn sides(&self, z: &([f64; 3], [f64; 3])) -> (f64, f64) {
        let s = self.sample(z);
        let dx = s[0] - self.r0;
        (dx * dx + s[1] * s[1], self.radius * self.radius)
    }
}

pub fn pc_monte_carlo_split(model: &SplitPlaneModel, stream: ZStream, samples: u64) -> Result<McEstimate, OracleError> {
    if samples == 0 {
        return Err(OracleError::InvalidConfig("sample count must be >= 1".into()));
    }
    let n_c = stream
        .iter()
        .take(samples as usize)
        .filter(|z| {
            let (lhs, rhs) = model.sides(z);
            lhs <= rhs
        })
        .count() as u64;
    Ok(McEstimate::from_count(n_c, samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeRow {
    #[serde(rename = "N")]
    pub n: u64,
    pub mae: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub rows: Vec<MaeRow>,
}

pub const MAE_CSV_HEADER: &str = "N,mae,trials";
pub const MIN_MAE_TRIALS: usize = 30;

impl MaeReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(MAE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.n, r.mae, r.trials);
        }
        out
    }

    /// Least-squares slope of `log10 MAE` against `log10 N`; `None` with fewer
    /// than two rows or a zero error.
    pub fn loglog_slope(&self) -> Option<f64> {
        if self.rows.len() < 2 || self.rows.iter().any(|r| r.mae <= 0.0) {
            return None;
        }
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| ((r.n as f64).log10(), r.mae.log10()))
            .collect();
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }
}

/// Mean absolute error of Monte Carlo against quadrature, per sample count.
/// Trial `t` at row `k` reads stream `(k << 32) | t` of `seed`.
pub fn mae_experiment(
    model: &ConjunctionPlaneModel,
    sample_counts: &[u64],
    trials: usize,
    seed: u64,
    quad: &QuadratureConfig,
) -> Result<MaeReport, OracleError> {
    if trials < MIN_MAE_TRIALS {
        return Err(OracleError::InsufficientTrials {
            required: MIN_MAE_TRIALS,
            got: trials,
        });
    }
    if sample_counts.is_empty() || sample_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(OracleError::InvalidConfig("sample counts must be non-empty and strictly increasing".into()));
    }
    let reference = pc_integral(model, quad)?;
    let mut rows = Vec::with_capacity(sample_counts.len());
    for (k, &n) in sample_counts.iter().enumerate() {
        let mut total = 0.0;
        for t in 0..trials {
            let cfg = McConfig {
                samples: n,
                seed,
                stream: ((k as u64) << 32) | t as u64,
            };
            total += (pc_monte_carlo(model, &cfg)?.pc - reference).abs();
        }
        rows.push(MaeRow {
            n,
            mae: total / trials as f64,
            trials,
        });
    }
    Ok(MaeReport { rows })
}
