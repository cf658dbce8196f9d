//! Acceptance run: one line per criterion, nonzero exit if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use clap::Parser;
use common::{fixture, fixture_path, random_pair, scenario_of, FIXTURES};
use encpc::audit::{audit_run, protocol_mask_probe, ProbeMasks, Rule};
use encpc::cli::{cmd_encrypted, Cli, Command};
use encpc::geometry::ConjunctionPlaneModel;
use encpc::he::{BackendConfig, HeBackend, HeError, ReferenceBackend, Tensor, DEFAULT_LEVEL_BUDGET};
use encpc::pc_oracle::{mae_experiment, pc_integral, pc_monte_carlo, pc_monte_carlo_split, McConfig, QuadratureConfig};
use encpc::protocol::compare::{decide, mask_comparison};
use encpc::protocol::masks::{draw_magnitude, OFFSET_RANGE};
use encpc::protocol::{execute, run_protocol, Fault, ProtocolOptions, Seeds};
use encpc::rng::{CounterRng, ZStream};

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const MC_TRIALS: u64 = 100;
const MC_SAMPLES: u64 = 1_000_000;

fn oracle_self_consistency() -> Outcome {
    let start = Instant::now();
    let quad = QuadratureConfig::default();
    let mut worst = (u64::MAX, "");
    for name in FIXTURES {
        let model = fixture(name).plane_model().unwrap();
        let p = pc_integral(&model, &quad).unwrap();
        let bound = 3.0 * (p * (1.0 - p) / MC_SAMPLES as f64).sqrt();
        let within = (0..MC_TRIALS)
            .filter(|&t| {
                let cfg = McConfig {
                    samples: MC_SAMPLES,
                    seed: 1,
                    stream: t,
                };
                (pc_monte_carlo(&model, &cfg).unwrap().pc - p).abs() <= bound
            })
            .count() as u64;
        if within < worst.0 {
            worst = (within, name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 >= 95 && secs < 60.0,
        format!("worst fixture {} with {}/100 trials inside 3 sigma, {secs:.1}s (target < 60s)", worst.1, worst.0),
    )
}

fn closed_form() -> Outcome {
    let m = ConjunctionPlaneModel::isotropic(5.0, 0.0, 5.0).unwrap();
    let q = pc_integral(&m, &QuadratureConfig::default()).unwrap();
    let exact = 1.0 - (-0.5f64).exp();
    let err = (q - exact).abs();
    outcome(err <= 1e-6, format!("|quadrature - closed form| = {err:.3e} at resolution 2048 (tol 1e-6)"))
}

fn mae_slope() -> Outcome {
    let start = Instant::now();
    let model = fixture("isotropic").plane_model().unwrap();
    let counts = [100, 1_000, 10_000, 100_000, 1_000_000];
    let report = mae_experiment(&model, &counts, 100, 7, &QuadratureConfig::default()).unwrap();
    let slope = report.loglog_slope().unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (-0.6..=-0.4).contains(&slope) && secs < 600.0,
        format!("log-log slope {slope:.4} over N = 1e2..1e6 with 100 trials, {secs:.1}s (target < 600s)"),
    )
}

fn equivalence() -> Outcome {
    let n = 10_000;
    let mut matched = 0;
    let mut worst_pc: f64 = 0.0;
    for k in 0..20 {
        let secrets = random_pair(1000 + k);
        let split = scenario_of(secrets.clone()).split_model().unwrap();
        let seeds = Seeds::from_master(500 + k);
        let out = run_protocol(secrets, n, seeds, BackendConfig::default(), ProtocolOptions::default()).unwrap();
        let plain = pc_monte_carlo_split(&split, ZStream::new(seeds.samples), n).unwrap();
        matched += (out.n_c == plain.n_c) as u32;
        worst_pc = worst_pc.max((out.pc - plain.pc).abs());
    }
    outcome(
        matched == 20 && worst_pc <= 1e-12,
        format!("{matched}/20 scenarios with equal counts at N = 1e4, max |pc difference| {worst_pc:.1e}"),
    )
}

fn masked_comparison() -> Outcome {
    let be = ReferenceBackend::new(BackendConfig::default(), 3);
    let k = be.keygen();
    let mut rng = CounterRng::new(42, 9);
    let (mut ok, mut neg, mut pos, mut ties) = (0, 0, 0, 0);
    let total = 10_000;
    for i in 0..total {
        let scale = 10f64.powf(rng.uniform_range(-6.0, 6.0));
        let lhs = rng.uniform() * scale;
        let rhs = if i % 10 == 0 { lhs } else { rng.uniform() * scale };
        let mag = draw_magnitude(&mut rng);
        let alpha = if rng.coin() { -mag } else { mag };
        let beta = alpha * rng.uniform_range(-OFFSET_RANGE, OFFSET_RANGE);
        let cl = be.encrypt_tensor(Tensor::scalar(lhs), &k.public);
        let cr = be.encrypt_tensor(Tensor::scalar(rhs), &k.public);
        let (f, s) = mask_comparison(&be, &cl, &cr, alpha, beta, &k.public).unwrap();
        let dec = |c| be.decrypt(c, &k.secret).unwrap().tensor.as_scalar().unwrap();
        ok += (decide(dec(&f), dec(&s)) == (lhs <= rhs)) as u32;
        if alpha < 0.0 { neg += 1 } else { pos += 1 }
        ties += (lhs == rhs) as u32;
    }
    outcome(
        ok == total && neg > 0 && pos > 0 && ties > 0,
        format!("{ok}/{total} inferences correct ({pos} with alpha > 0, {neg} with alpha < 0, {ties} ties)"),
    )
}

fn key_level_discipline() -> Outcome {
    let be = ReferenceBackend::new(BackendConfig::default(), 4);
    let (a, b) = (be.keygen(), be.keygen());
    let mut rng = CounterRng::new(8, 1);
    let (mut cross, mut cross_ok) = (0, 0);
    let is_mismatch = |r: Result<(), HeError>| matches!(r, Err(HeError::KeyMismatch { .. }));
    for _ in 0..500 {
        let n = 1 + (rng.next_u64() % 4) as usize;
        let v = |rng: &mut CounterRng| Tensor::vector(&(0..n).map(|_| rng.uniform_range(-10.0, 10.0)).collect::<Vec<_>>());
        let x = be.encrypt_tensor(v(&mut rng), &a.public);
        let y = be.encrypt_tensor(v(&mut rng), &b.public);
        let checks = [
            is_mismatch(be.add(&x, &y).map(drop)),
            is_mismatch(be.add(&y, &x).map(drop)),
            is_mismatch(be.mul(&x, &y).map(drop)),
            is_mismatch(be.stack_rows(&[x.clone(), y.clone()]).map(drop)),
            is_mismatch(be.decrypt(&x, &b.secret).map(drop)),
            is_mismatch(be.decrypt_outer(&be.encrypt_ciphertext(&x, &b.public).unwrap(), &a.secret).map(drop)),
        ];
        cross += checks.len();
        cross_ok += checks.iter().filter(|c| **c).count();
    }
    let (mut chains, mut chains_ok) = (0, 0);
    for len in 1..=DEFAULT_LEVEL_BUDGET + 3 {
        let c = be.encrypt_tensor(Tensor::scalar(1.0001), &a.public);
        let mut acc = Ok(c.clone());
        for _ in 0..len {
            acc = acc.and_then(|p| be.mul(&p, &c));
        }
        chains += 1;
        let expect_err = len > DEFAULT_LEVEL_BUDGET;
        chains_ok += match acc {
            Ok(p) => !expect_err && p.level() == len,
            Err(HeError::LevelBudgetExceeded { .. }) => expect_err,
            Err(_) => false,
        } as u32;
    }
    let mut depth = 0;
    for name in FIXTURES {
        let sc = fixture(name);
        let out = run_protocol(sc.secrets, 1000, Seeds::from_master(3), BackendConfig::default(), ProtocolOptions::default()).unwrap();
        depth = depth.max(out.max_level);
    }
    outcome(
        cross_ok == cross && chains_ok == chains && depth <= 6,
        format!(
            "{cross_ok}/{cross} cross-key ops rejected, {chains_ok}/{chains} multiplication chains as expected (budget {DEFAULT_LEVEL_BUDGET}), max protocol depth {depth}"
        ),
    )
}

fn leakage_audit() -> Outcome {
    let opts = ProtocolOptions::default();
    let mut compliant = 0;
    for name in FIXTURES {
        let sc = fixture(name);
        let seeds = Seeds::from_master(21);
        let run = execute(sc.secrets.clone(), 2000, seeds, BackendConfig::default(), opts).unwrap();
        compliant += audit_run(&run, &sc.secrets, &seeds, &opts).unwrap().passed as u32;
    }
    let faults = [
        (Fault::SkipMasking, Rule::UnmaskedChannel),
        (Fault::ReuseMask, Rule::MaskReuse),
        (Fault::WrongKeyRoute, Rule::KeyRoute),
        (Fault::UnmaskedMissDistance, Rule::UnmaskedChannel),
        (Fault::PlaintextCovarianceUpload, Rule::DisallowedTag),
    ];
    let sc = fixture("leo_crossing");
    let mut detected = 0;
    for (fault, rule) in faults {
        let opts = ProtocolOptions {
            fault: Some(fault),
            ..ProtocolOptions::default()
        };
        let seeds = Seeds::from_master(22);
        let run = execute(sc.secrets.clone(), 200, seeds, BackendConfig::default(), opts).unwrap();
        let report = audit_run(&run, &sc.secrets, &seeds, &opts).unwrap();
        detected += (!report.passed && report.count(rule) > 0) as u32;
    }
    let near = common::isotropic_pair(5.0, 1.0, 5.0);
    let far = common::isotropic_pair(5.0, 40.0, 5.0);
    let fresh = protocol_mask_probe([&near, &far], 1000, 23, ProbeMasks::Fresh).unwrap();
    let reused = protocol_mask_probe([&near, &far], 1000, 23, ProbeMasks::ReusedAcrossTrials).unwrap();
    let min_p = |r: &encpc::audit::ProbeReport| {
        r.against_reference.iter().map(|k| k.p_value).fold(r.between_groups.p_value, f64::min)
    };
    outcome(
        compliant == 5 && detected == 5 && fresh.passed && !reused.passed,
        format!(
            "{compliant}/5 fixtures compliant, {detected}/5 faults detected, probe min p = {:.3} fresh / {:.1e} reused (1000 trials, alpha 0.01)",
            min_p(&fresh),
            min_p(&reused)
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture_path("correlated");
    let run = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let t = dir.path().join(format!("{tag}.jsonl"));
        let m = dir.path().join(format!("{tag}.csv"));
        let cli = Cli::try_parse_from([
            "encpc",
            "encrypted",
            "--scenario",
            scenario.to_str().unwrap(),
            "--samples",
            "5000",
            "--seed",
            "77",
            "--audit",
            "--dump-payloads",
            "--transcript-out",
            t.to_str().unwrap(),
            "--metrics-out",
            m.to_str().unwrap(),
        ])
        .unwrap();
        let Command::Encrypted(args) = cli.command else { unreachable!() };
        let mut out = Vec::new();
        cmd_encrypted(&args, &mut out).unwrap();
        (out, std::fs::read(t).unwrap(), std::fs::read(m).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    outcome(
        a == b,
        format!("report {} B, transcript {} B, metrics {} B; identical = {}", a.0.len(), a.1.len(), a.2.len(), a == b),
    )
}

fn quantized_backend() -> Outcome {
    let n = 10_000u64;
    let mut worst: f64 = 0.0;
    for name in FIXTURES {
        let sc = fixture(name);
        let seeds = Seeds::from_master(sc.run.seed);
        let exact = run_protocol(sc.secrets.clone(), n, seeds, BackendConfig::default(), ProtocolOptions::default()).unwrap();
        let q = run_protocol(sc.secrets, n, seeds, BackendConfig::quantized(40), ProtocolOptions::default()).unwrap();
        worst = worst.max((q.pc - exact.pc).abs());
    }
    let tol = 2.0 / n as f64;
    outcome(worst <= tol, format!("max |pc difference| {worst:.1e} at 40 fractional bits, N = 1e4 (tol {tol:.0e})"))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("oracle self-consistency", oracle_self_consistency),
        ("closed-form centered isotropic case", closed_form),
        ("MAE slope", mae_slope),
        ("encrypted/plaintext equivalence", equivalence),
        ("masked comparison soundness", masked_comparison),
        ("key and level discipline", key_level_discipline),
        ("leakage audit", leakage_audit),
        ("determinism", determinism),
        ("quantized backend", quantized_backend),
    ];
    let mut failed = 0;
    let mut total = Duration::ZERO;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        total += took;
        failed += !o.pass as u32;
        println!(
            "[{}] {}. {}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            name,
            o.detail,
            took.as_secs_f64()
        );
    }
    println!("{}/9 criteria passed in {:.1}s", 9 - failed, total.as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
