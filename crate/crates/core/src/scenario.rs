//! Conjunction scenario files: two operator records plus run defaults.
//!
//! ```json
//! {
//!   "name": "example",
//!   "units": { "length": "km", "time": "s" },
//!   "operators": [
//!     { "position": [7010, 0, 0], "velocity": [0, 7.5, 0],
//!       "covariance": [[12.5, 0, 0], [0, 12.5, 0], [0, 0, 12.5]],
//!       "radius": 2.5, "epoch": 0 },
//!     { ... }
//!   ],
//!   "run": { "samples": 10000, "seed": 42 }
//! }
//! ```
//! Velocities are in length/time and covariances in length². Everything is
//! converted to km on load.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    encounter_frame, relative_state, ConjunctionPlaneModel, Covariance3, GeometryError, StateVector,
    DEFAULT_DEGENERACY_EPS,
};
use crate::pc_oracle::SplitPlaneModel;
use crate::protocol::OperatorSecret;

/// Relative asymmetry accepted (and averaged away) in covariance input.
pub const COVARIANCE_SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Km,
    M,
}

impl LengthUnit {
    fn to_km(self) -> f64 {
        match self {
            LengthUnit::Km => 1.0,
            LengthUnit::M => 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub length: LengthUnit,
    pub time: TimeUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorRecord {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub covariance: [[f64; 3]; 3],
    pub radius: f64,
    pub epoch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDefaults {
    pub samples: u64,
    pub seed: u64,
}

impl Default for RunDefaults {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default)]
    name: Option<String>,
    units: Units,
    operators: [OperatorRecord; 2],
    #[serde(default)]
    run: RunDefaults,
}

/// A validated scenario in km, km/s and km².
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub secrets: [OperatorSecret; 2],
    pub run: RunDefaults,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let fallback = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_json(&text, &fallback)
    }

    pub fn from_json(text: &str, default_name: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let scale = file.units.length.to_km();
        let secret = |o: &OperatorRecord| -> Result<OperatorSecret, GeometryError> {
            let state = StateVector::new(
                Vector3::from(o.position) * scale,
                Vector3::from(o.velocity) * scale,
                o.epoch,
            )?;
            let rows = o.covariance;
            let m = Matrix3::from_fn(|i, j| rows[i][j] * scale * scale);
            let cov = Covariance3::symmetrized(m, COVARIANCE_SYMMETRY_TOL)?;
            OperatorSecret::new(state, cov, o.radius * scale)
        };
        let secrets = [secret(&file.operators[0])?, secret(&file.operators[1])?];
        if secrets[0].state.epoch != secrets[1].state.epoch {
            return Err(GeometryError::EpochMismatch(secrets[0].state.epoch, secrets[1].state.epoch).into());
        }
        if file.run.samples == 0 {
            return Err(GeometryError::InvalidModel("run.samples must be >= 1".into()).into());
        }
        Ok(Self {
            name: file.name.unwrap_or_else(|| default_name.to_string()),
            secrets,
            run: file.run,
        })
    }

    /// Plaintext two-dimensional reduction; fails on degenerate geometry.
    pub fn plane_model(&self) -> Result<ConjunctionPlaneModel, GeometryError> {
        let [a, b] = &self.secrets;
        ConjunctionPlaneModel::from_bodies(&a.state, &a.cov, a.radius, &b.state, &b.cov, b.radius, DEFAULT_DEGENERACY_EPS)
    }

    /// Plaintext replay of the protocol's per-operator sampling.
    pub fn split_model(&self) -> Result<SplitPlaneModel, GeometryError> {
        let [a, b] = &self.secrets;
        let rel = relative_state(&a.state, &b.state)?;
        let frame = encounter_frame(&rel, DEFAULT_DEGENERACY_EPS)?;
        Ok(SplitPlaneModel {
            q_xz: frame.q_xz,
            factors: [a.cov_factor, b.cov_factor],
            r0: rel.r0,
            radius: a.radius + b.radius,
        })
    }
}
