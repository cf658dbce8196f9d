//! Conjunction-encounter geometry: relative motion, the encounter frame and
//! the projection of position uncertainty onto the conjunction plane.
//!
//! Units are km and km/s throughout. Inputs are assumed to be already at the
//! time of closest approach, with straight-line relative motion.

use nalgebra::{Cholesky, Matrix2, Matrix2x3, Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

/// Default threshold below which `‖v_rel‖` (km/s) or `‖h‖` (km²/s) counts as zero.
pub const DEFAULT_DEGENERACY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("state epochs differ: {0} vs {1}")]
    EpochMismatch(f64, f64),
    #[error("degenerate encounter geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("covariance is not symmetric positive semidefinite: {0}")]
    InvalidCovariance(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid conjunction-plane model: {0}")]
    InvalidModel(String),
}

/// Position (km), velocity (km/s) and epoch (s) of one body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub epoch: f64,
}

impl StateVector {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>, epoch: f64) -> Result<Self, GeometryError> {
        if !r.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite("position"));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite("velocity"));
        }
        if !epoch.is_finite() {
            return Err(GeometryError::NonFinite("epoch"));
        }
        Ok(Self { r, v, epoch })
    }
}

/// Symmetric positive semidefinite 3×3 position covariance (km²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(Matrix3<f64>);

impl Covariance3 {
    /// Validates symmetry (1e-12 relative) and semidefiniteness
    /// (eigenvalues ≥ −1e-12·trace).
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite("covariance"));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(GeometryError::InvalidCovariance(format!(
                "asymmetry {asym:e} exceeds tolerance"
            )));
        }
        let sym = (m + m.transpose()) * 0.5;
        let floor = -1e-12 * sym.trace().abs();
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig < floor {
            return Err(GeometryError::InvalidCovariance(format!(
                "negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self(sym))
    }

    /// Accepts a matrix whose asymmetry is within `tol` (relative to its
    /// largest entry) and symmetrizes it by averaging.
    pub fn symmetrized(m: Matrix3<f64>, tol: f64) -> Result<Self, GeometryError> {
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (m - m.transpose()).amax();
        if asym > tol * scale {
            return Err(GeometryError::InvalidCovariance(format!(
                "asymmetry {asym:e} exceeds tolerance {tol:e}"
            )));
        }
        Self::new((m + m.transpose()) * 0.5)
    }

    pub fn zero() -> Self {
        Self(Matrix3::zeros())
    }

    pub fn isotropic(variance: f64) -> Result<Self, GeometryError> {
        Self::new(Matrix3::identity() * variance)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Relative position/velocity of body 1 with respect to body 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeState {
    pub r_rel: Vector3<f64>,
    pub v_rel: Vector3<f64>,
    /// Specific angular momentum `r_rel × v_rel`.
    pub h: Vector3<f64>,
    /// Miss distance `‖r_rel‖`.
    pub r0: f64,
}

/// Encounter frame `Q = [X; Y; Z]` (rows) and its conjunction-plane rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncounterFrame {
    pub q: Matrix3<f64>,
    pub q_xz: Matrix2x3<f64>,
}

/// Selector of the X and Z rows.
pub fn projection_xz() -> Matrix2x3<f64> {
    Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
}

pub fn relative_state(s1: &StateVector, s2: &StateVector) -> Result<RelativeState, GeometryError> {
    if s1.epoch != s2.epoch {
        return Err(GeometryError::EpochMismatch(s1.epoch, s2.epoch));
    }
    let r_rel = s1.r - s2.r;
    let v_rel = s1.v - s2.v;
    Ok(RelativeState {
        r_rel,
        v_rel,
        h: r_rel.cross(&v_rel),
        r0: r_rel.norm(),
    })
}

/// Skew-symmetric embedding: `skew(a) * b == a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Checks `skew(a) − skew(b) == skew(a − b)` to 1e-14 (scaled by the inputs).
pub fn skew_difference_identity_check(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    let lhs = skew(a) - skew(b);
    let rhs = skew(&(a - b));
    let scale = 1.0_f64.max(a.amax()).max(b.amax());
    (lhs - rhs).amax() <= 1e-14 * scale
}

pub fn encounter_frame(rel: &RelativeState, eps: f64) -> Result<EncounterFrame, GeometryError> {
    let v_norm = rel.v_rel.norm();
    if v_norm <= eps {
        return Err(GeometryError::DegenerateGeometry("relative velocity vanishes"));
    }
    let h_norm = rel.h.norm();
    if h_norm <= eps {
        return Err(GeometryError::DegenerateGeometry(
            "relative position is parallel to relative velocity",
        ));
    }
    let y = rel.v_rel / v_norm;
    let z = rel.h / h_norm;
    let x = y.cross(&z);
    let q = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    Ok(EncounterFrame {
        q,
        q_xz: projection_xz() * q,
    })
}

pub fn combined_covariance(c1: &Covariance3, c2: &Covariance3) -> Covariance3 {
    Covariance3(c1.0 + c2.0)
}

/// `Q_XZ Σ Q_XZᵀ`, returned exactly symmetric.
pub fn project_covariance(frame: &EncounterFrame, c: &Covariance3) -> Matrix2<f64> {
    let p = frame.q_xz * c.0 * frame.q_xz.transpose();
    (p + p.transpose()) * 0.5
}

/// Lower Cholesky factor `L` with `L Lᵀ = Σ`. Both operators use this same
/// factorization so their transformed samples combine consistently.
pub fn factor_covariance(c: &Covariance3) -> Result<Matrix3<f64>, GeometryError> {
    Cholesky::new(c.0)
        .map(|ch| ch.l())
        .ok_or(GeometryError::NotPositiveDefinite)
}

/// Plaintext reduction of an encounter to the conjunction plane. The Gaussian
/// is centered at the origin and the collision disk at `(r0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjunctionPlaneModel {
    pub sigma_xz: Matrix2<f64>,
    pub r0: f64,
    pub radius: f64,
}

impl ConjunctionPlaneModel {
    pub fn new(sigma_xz: Matrix2<f64>, r0: f64, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GeometryError::InvalidModel(format!("radius {radius} must be > 0")));
        }
        if !(r0 >= 0.0 && r0.is_finite()) {
            return Err(GeometryError::InvalidModel(format!("miss distance {r0} must be >= 0")));
        }
        if !sigma_xz.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite("plane covariance"));
        }
        if (sigma_xz[(0, 1)] - sigma_xz[(1, 0)]).abs() > 1e-12 * sigma_xz.amax() {
            return Err(GeometryError::InvalidModel("plane covariance not symmetric".into()));
        }
        Ok(Self {
            sigma_xz,
            r0,
            radius,
        })
    }

    /// Isotropic plane model `σ² I₂`.
    pub fn isotropic(sigma: f64, r0: f64, radius: f64) -> Result<Self, GeometryError> {
        Self::new(Matrix2::identity() * (sigma * sigma), r0, radius)
    }

    /// Builds the plane model from two bodies with radii `R₁`, `R₂`.
    pub fn from_bodies(
        s1: &StateVector,
        c1: &Covariance3,
        radius1: f64,
        s2: &StateVector,
        c2: &Covariance3,
        radius2: f64,
        eps: f64,
    ) -> Result<Self, GeometryError> {
        let rel = relative_state(s1, s2)?;
        let frame = encounter_frame(&rel, eps)?;
        let sigma = project_covariance(&frame, &combined_covariance(c1, c2));
        Self::new(sigma, rel.r0, radius1 + radius2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn state(r: [f64; 3], v: [f64; 3]) -> StateVector {
        StateVector::new(Vector3::from(r), Vector3::from(v), 0.0).unwrap()
    }

    fn vec3() -> impl Strategy<Value = Vector3<f64>> {
        prop::array::uniform3(-1e4..1e4f64).prop_map(Vector3::from)
    }

    fn spd() -> impl Strategy<Value = Covariance3> {
        (prop::array::uniform9(-2.0..2.0f64), 0.01..1.0f64).prop_map(|(a, d)| {
            let a = Matrix3::from_row_slice(&a);
            Covariance3::new(a * a.transpose() + Matrix3::identity() * d).unwrap()
        })
    }

    #[test]
    fn identical_positions_give_zero_miss() {
        let rel = relative_state(&state([7000.0, 0.0, 0.0], [0.0, 7.5, 0.0]), &state([7000.0, 0.0, 0.0], [0.0, 7.5, 0.0]))
            .unwrap();
        assert_eq!(rel.r_rel, Vector3::zeros());
        assert_eq!(rel.r0, 0.0);
    }

    #[test]
    fn unit_cross_product() {
        let rel = relative_state(&state([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), &state([0.0; 3], [0.0; 3])).unwrap();
        assert_eq!(rel.h, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn epoch_mismatch_is_rejected() {
        let a = StateVector::new(Vector3::zeros(), Vector3::zeros(), 0.0).unwrap();
        let b = StateVector::new(Vector3::zeros(), Vector3::zeros(), 1.0).unwrap();
        assert!(matches!(relative_state(&a, &b), Err(GeometryError::EpochMismatch(..))));
    }

    #[test]
    fn skew_written_out() {
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
        let s = skew(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(s, Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
    }

    #[test]
    fn skew_identity_simple_cases() {
        let a = Vector3::new(1.0, 0.0, 0.0);
        let b = Vector3::new(0.0, 1.0, 0.0);
        assert!(skew_difference_identity_check(&a, &a));
        assert!(skew_difference_identity_check(&a, &b));
    }

    #[test]
    fn identity_frame() {
        let rel = relative_state(&state([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), &state([0.0; 3], [0.0; 3])).unwrap();
        let f = encounter_frame(&rel, DEFAULT_DEGENERACY_EPS).unwrap();
        assert_relative_eq!(f.q, Matrix3::identity());
        assert_relative_eq!(f.q_xz, projection_xz());
    }

    #[test]
    fn zero_relative_velocity_is_degenerate() {
        let rel = relative_state(&state([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]), &state([0.0; 3], [0.0, 1.0, 0.0])).unwrap();
        assert!(matches!(
            encounter_frame(&rel, DEFAULT_DEGENERACY_EPS),
            Err(GeometryError::DegenerateGeometry(_))
        ));
        let parallel = relative_state(&state([1.0, 0.0, 0.0], [2.0, 0.0, 0.0]), &state([0.0; 3], [0.0; 3])).unwrap();
        assert!(encounter_frame(&parallel, DEFAULT_DEGENERACY_EPS).is_err());
    }

    #[test]
    fn covariance_simple_cases() {
        let z = Covariance3::zero();
        assert_eq!(combined_covariance(&z, &z), z);
        let s = Covariance3::new(Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0))).unwrap();
        assert_eq!(combined_covariance(&s, &z), s);

        let id = EncounterFrame {
            q: Matrix3::identity(),
            q_xz: projection_xz(),
        };
        assert_eq!(project_covariance(&id, &Covariance3::isotropic(1.0).unwrap()), Matrix2::identity());
        assert_eq!(project_covariance(&id, &s), Matrix2::new(1.0, 0.0, 0.0, 3.0));
    }

    #[test]
    fn covariance_validation() {
        let asym = Matrix3::new(1.0, 0.5, 0.0, 0.4, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Covariance3::new(asym).is_err());
        let indefinite = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        assert!(Covariance3::new(indefinite).is_err());
        let nearly = Matrix3::new(1.0, 0.5, 0.0, 0.5 + 1e-11, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Covariance3::symmetrized(nearly, 1e-9).is_ok());
    }

    #[test]
    fn cholesky_simple_cases() {
        assert_eq!(factor_covariance(&Covariance3::isotropic(1.0).unwrap()).unwrap(), Matrix3::identity());
        let d = Covariance3::new(Matrix3::from_diagonal(&Vector3::new(4.0, 9.0, 16.0))).unwrap();
        assert_eq!(factor_covariance(&d).unwrap(), Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 4.0)));
        let singular = Covariance3::new(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0))).unwrap();
        assert_eq!(factor_covariance(&singular), Err(GeometryError::NotPositiveDefinite));
    }

    proptest! {
        #[test]
        fn relative_state_matches_component_formulas(r1 in vec3(), r2 in vec3(), v1 in vec3(), v2 in vec3()) {
            let rel = relative_state(&state(r1.into(), v1.into()), &state(r2.into(), v2.into())).unwrap();
            let (dr, dv) = (r1 - r2, v1 - v2);
            let h = [dr[1] * dv[2] - dr[2] * dv[1], dr[2] * dv[0] - dr[0] * dv[2], dr[0] * dv[1] - dr[1] * dv[0]];
            for k in 0..3 {
                prop_assert_eq!(rel.r_rel[k], r1[k] - r2[k]);
                prop_assert_eq!(rel.v_rel[k], v1[k] - v2[k]);
                prop_assert_eq!(rel.h[k], h[k]);
            }
            prop_assert_eq!(rel.r0, (dr[0] * dr[0] + dr[1] * dr[1] + dr[2] * dr[2]).sqrt());
        }

        #[test]
        fn skew_matches_cross(a in vec3(), b in vec3()) {
            let s = skew(&a);
            prop_assert_eq!(s, -s.transpose());
            let got = s * b;
            let want = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
            for k in 0..3 {
                prop_assert!((got[k] - want[k]).abs() <= 1e-14 * a.norm() * b.norm());
            }
            prop_assert!(skew_difference_identity_check(&a, &b));
        }

        #[test]
        fn frame_is_proper_rotation(r in vec3(), v in vec3()) {
            let rel = relative_state(&state(r.into(), v.into()), &state([0.0; 3], [0.0; 3])).unwrap();
            prop_assume!(rel.v_rel.norm() > 1e-3 && rel.h.norm() > 1e-3 * rel.r0 * rel.v_rel.norm());
            let f = encounter_frame(&rel, DEFAULT_DEGENERACY_EPS).unwrap();
            prop_assert!((f.q * f.q.transpose() - Matrix3::identity()).amax() < 1e-10);
            prop_assert!((f.q.determinant() - 1.0).abs() < 1e-10);
            prop_assert_eq!(f.q_xz, projection_xz() * f.q);
            // Y depends only on v_rel.
            let y = rel.v_rel / rel.v_rel.norm();
            prop_assert!((f.q.row(1).transpose() - y).amax() < 1e-15);
        }

        #[test]
        fn combined_spd_stays_spd(a in spd(), b in spd()) {
            let c = combined_covariance(&a, &b);
            prop_assert!(SymmetricEigen::new(*c.matrix()).eigenvalues.min() > 0.0);
        }

        #[test]
        fn projection_matches_two_step_and_is_linear(r in vec3(), v in vec3(), a in spd(), b in spd()) {
            let rel = relative_state(&state(r.into(), v.into()), &state([0.0; 3], [0.0; 3])).unwrap();
            prop_assume!(rel.v_rel.norm() > 1e-3 && rel.h.norm() > 1e-3 * rel.r0 * rel.v_rel.norm());
            let f = encounter_frame(&rel, DEFAULT_DEGENERACY_EPS).unwrap();
            let xyz = f.q * a.matrix() * f.q.transpose();
            let two_step = projection_xz() * xyz * projection_xz().transpose();
            let one_step = project_covariance(&f, &a);
            prop_assert!((two_step - one_step).amax() <= 1e-12 * a.matrix().amax());
            let split = project_covariance(&f, &a) + project_covariance(&f, &b);
            let joint = project_covariance(&f, &combined_covariance(&a, &b));
            prop_assert!((split - joint).amax() <= 1e-12 * joint.amax());
        }

        #[test]
        fn cholesky_reconstructs(c in spd()) {
            let l = factor_covariance(&c).unwrap();
            prop_assert_eq!(l.upper_triangle() - Matrix3::from_diagonal(&l.diagonal()), Matrix3::zeros());
            prop_assert!((l * l.transpose() - c.matrix()).amax() <= 1e-10 * c.matrix().norm());
        }
    }
}
