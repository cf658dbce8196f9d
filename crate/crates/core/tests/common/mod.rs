#![allow(dead_code)]

use std::path::PathBuf;

use encpc::geometry::{Covariance3, StateVector};
use encpc::protocol::OperatorSecret;
use encpc::rng::CounterRng;
use encpc::scenario::Scenario;
use nalgebra::{Matrix3, Vector3};

pub const FIXTURES: [&str; 5] = ["isotropic", "leo_crossing", "correlated", "high_pc", "shallow_crossing"];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

pub fn fixture(name: &str) -> Scenario {
    Scenario::load(&fixture_path(name)).unwrap()
}

pub fn secret(r: [f64; 3], v: [f64; 3], cov: Matrix3<f64>, radius: f64) -> OperatorSecret {
    let state = StateVector::new(Vector3::from(r), Vector3::from(v), 0.0).unwrap();
    OperatorSecret::new(state, Covariance3::new(cov).unwrap(), radius).unwrap()
}

/// Isotropic encounter: combined per-axis σ, miss distance `r0`, combined radius.
pub fn isotropic_pair(sigma: f64, r0: f64, radius: f64) -> [OperatorSecret; 2] {
    let c = Matrix3::identity() * (sigma * sigma / 2.0);
    [
        secret([7000.0 + r0, 0.0, 0.0], [0.0, 7.5, 0.0], c, radius / 2.0),
        secret([7000.0, 0.0, 0.0], [0.0, 0.0, 7.5], c, radius / 2.0),
    ]
}

fn random_spd(rng: &mut CounterRng, scale: f64) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.uniform_range(-1.0, 1.0));
    (a * a.transpose() + Matrix3::identity() * 0.05) * scale
}

fn random_unit(rng: &mut CounterRng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.uniform_range(-1.0, 1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random non-degenerate encounter with `r_rel ⊥ v_rel` and a collision
/// probability that is neither negligible nor certain.
pub fn random_pair(seed: u64) -> [OperatorSecret; 2] {
    let mut rng = CounterRng::new(seed, 77);
    let r2 = random_unit(&mut rng) * rng.uniform_range(6600.0, 7400.0);
    let v2 = random_unit(&mut rng) * 7.5;
    let v1 = random_unit(&mut rng) * 7.5;
    let v_rel = v1 - v2;
    let u = random_unit(&mut rng);
    let dir = (u - v_rel * (u.dot(&v_rel) / v_rel.norm_squared())).normalize();
    let sigma = rng.uniform_range(0.05, 2.0);
    let r0 = sigma * rng.uniform_range(0.0, 2.5);
    let r1 = r2 + dir * r0;
    let c1 = random_spd(&mut rng, sigma * sigma);
    let c2 = random_spd(&mut rng, sigma * sigma);
    let (ra, rb) = (sigma * rng.uniform_range(0.1, 0.8), sigma * rng.uniform_range(0.1, 0.8));
    [
        secret(r1.into(), v1.into(), c1, ra),
        secret(r2.into(), v2.into(), c2, rb),
    ]
}

pub fn scenario_of(secrets: [OperatorSecret; 2]) -> Scenario {
    Scenario {
        name: "generated".into(),
        secrets,
        run: Default::default(),
    }
}
