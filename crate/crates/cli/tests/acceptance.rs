//! End-to-end acceptance run: one line per criterion, non-zero exit if any fails.

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use probshield::envs::BuiltinEnv;
use probshield::fixtures;
use probshield::geometry::{enumerate_vertices, g_encode, HalfspaceCoefficients};
use probshield::learner::{train_shielded, LearnerConfig};
use probshield::random_models::random_mdp;
use probshield::reach::{certify_inductive, interval_iteration, IntervalConfig};
use probshield::shield::{
    rollout_lifted, rollout_shield, ProfileFamily, Shield, ShieldSession, TabularShieldPolicy, DEFAULT_CLOSURE_LIMIT,
};
use probshield::verify::{brute_force_rcop, lifted_value, verify_with_oracle};
use probshield::{Mdp, StateId};
use probshield_cli::commands::train::run_settings;
use probshield_cli::config::{RunConfig, TrainSettings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/support/geometry_reference.rs"]
mod geometry_reference;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn shield_for(m: &Mdp, p: f64) -> Arc<Shield> {
    let cert = interval_iteration(m, IntervalConfig::with_epsilon(1e-9)).expect("certifies");
    Arc::new(Shield::new(m, &cert, p, ProfileFamily::default()).expect("feasible"))
}

fn certificate_correctness() -> Verdict {
    let t = Instant::now();
    let m = fixtures::f1();
    let cert = interval_iteration(&m, IntervalConfig::with_epsilon(1e-9)).unwrap();
    let elapsed = t.elapsed();
    let b = &cert.beta;
    let pass = b[0] >= 2.0 / 7.0
        && b[0] <= 2.0 / 7.0 + 1e-9
        && b[1] == 0.0
        && b[2] == 1.0
        && certify_inductive(&m, b)
        && elapsed < Duration::from_secs(1);
    verdict(pass, format!("beta(s0) - 2/7 = {:.3e}, beta(g) = {}, beta(u) = {}, {elapsed:?}", b[0] - 2.0 / 7.0, b[1], b[2]))
}

/// Value iteration from zero with its own zero-state computation.
fn independent_lower(m: &Mdp) -> Vec<f64> {
    let n = m.state_count();
    let mut keep: Vec<bool> = m.states().map(|s| !m.is_unsafe(s)).collect();
    loop {
        let next: Vec<bool> = m
            .states()
            .map(|s| keep[s.0] && m.actions(s).iter().any(|a| a.dist.support().all(|t| keep[t.0])))
            .collect();
        if next == keep {
            break;
        }
        keep = next;
    }
    let mut x: Vec<f64> = m.states().map(|s| if m.is_unsafe(s) { 1.0 } else { 0.0 }).collect();
    for _ in 0..2_000_000 {
        let mut change: f64 = 0.0;
        for s in 0..n {
            if m.is_unsafe(StateId(s)) || keep[s] {
                continue;
            }
            let v = m
                .actions(StateId(s))
                .iter()
                .map(|a| a.dist.iter().map(|(t, p)| p * x[t.0]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            change = change.max(v - x[s]);
            x[s] = v;
        }
        if change < 1e-16 {
            break;
        }
    }
    x
}

fn certificate_soundness() -> Verdict {
    let eps = 1e-6;
    let mut failures = Vec::new();
    let mut widest: f64 = 0.0;
    for seed in 0..500 {
        let m = random_mdp(seed, 50, 4);
        let cert = match interval_iteration(&m, IntervalConfig::with_epsilon(eps)) {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("{seed}: {e}"));
                continue;
            }
        };
        let lo = independent_lower(&m);
        let ok = cert.inductive
            && certify_inductive(&m, &cert.beta)
            && (0..m.state_count()).all(|s| {
                let b = cert.beta[s];
                widest = widest.max(b - lo[s]);
                lo[s] <= b + 1e-12 && b - lo[s] <= eps + 1e-12 && cert.lower[s] <= b
            });
        if !ok {
            failures.push(seed.to_string());
        }
    }
    verdict(
        failures.is_empty(),
        format!("500 models, widest beta - lower {widest:.2e}, failures {failures:?}"),
    )
}

fn geometry_oracle() -> Verdict {
    use geometry_reference::{dist, reference_vertices};
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    for _ in 0..10_000 {
        let d = rng.gen_range(1..=5);
        let c: Vec<f64> = (0..d)
            .map(|_| match rng.gen_range(0..6) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen::<f64>(),
            })
            .collect();
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let q = if rng.gen_bool(0.1) { lo } else { lo + rng.gen::<f64>() * (1.0 - lo) };
        let coeffs = HalfspaceCoefficients::new(c.clone(), q);
        let got = enumerate_vertices(&coeffs).unwrap();
        let want = reference_vertices(&c, q);
        let mut ok = got.len() == want.len()
            && got.vertices().iter().all(|v| want.iter().any(|w| dist(v, w) < 1e-9));
        let mut image = Vec::new();
        for i in 0..d {
            for j in 0..d {
                let x = g_encode(&coeffs, &got, i, j).unwrap();
                ok &= x.iter().all(|&v| v >= 0.0)
                    && (x.iter().sum::<f64>() - 1.0).abs() < 1e-12
                    && coeffs.expected_level(&x) <= q + 1e-12;
                image.push(x);
            }
        }
        ok &= got.vertices().iter().all(|v| image.iter().any(|x| dist(x, v) < 1e-9));
        failures += usize::from(!ok);
    }
    verdict(failures == 0, format!("10000 instances, {failures} failures"))
}

fn exact_safety_suite() -> Verdict {
    let t = Instant::now();
    let cases: [(&str, Mdp, f64); 4] = [
        ("F1", fixtures::f1(), 0.3),
        ("F2", fixtures::f2(), 0.2),
        ("colour-bomb-v1", BuiltinEnv::ColourBombV1.build().unwrap(), 0.05),
        ("bridge-v1", BuiltinEnv::BridgeV1.build().unwrap(), 0.01),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, m, p) in cases {
        let sh = shield_for(&m, p);
        let closure = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
        let (mut worst, mut disagreement, mut failures): (f64, f64, usize) = (0.0, 0.0, 0);
        for seed in 0..100 {
            let support = 1 + (seed as usize % 3);
            let pol = TabularShieldPolicy::random(sh.action_space(), &closure, support, seed).unwrap();
            let (report, bracket, exact) = verify_with_oracle(&sh, &pol, 1e-11, 100_000_000).unwrap();
            worst = worst.max(report.probability);
            for s in 0..exact.len() {
                disagreement = disagreement
                    .max((bracket.lower[s] - exact[s]).abs())
                    .max((bracket.upper[s] - exact[s]).abs());
            }
            failures += usize::from(report.probability > p + 1e-9);
        }
        pass &= failures == 0 && disagreement <= 1e-9;
        parts.push(format!("{name}: max {worst:.3e} <= {p}, oracle gap {disagreement:.1e}"));
    }
    let elapsed = t.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    verdict(pass, format!("{}; {elapsed:.1?}", parts.join("; ")))
}

fn settings(env: &str, shielded: bool) -> TrainSettings {
    TrainSettings::resolve(RunConfig {
        env: Some(env.into()),
        shielded: Some(shielded),
        seeds: Some("0..10".into()),
        ..RunConfig::default()
    })
    .unwrap()
}

fn training_safety_and_reward() -> (Verdict, Verdict) {
    let mut safety = Vec::new();
    let mut safe = true;
    let mut cb_returns = Vec::new();
    for env in ["colour-bomb-v1", "bridge-v1"] {
        let s = settings(env, true);
        let runs = run_settings(&s).unwrap();
        let p = s.p;
        let mut worst: f64 = 0.0;
        for r in &runs {
            let n = r.summary.episodes as f64;
            let limit = p + 2.0 * (p * (1.0 - p) / n).sqrt();
            safe &= r.summary.violation_rate <= limit && r.all_reports_pass() && r.summary.snapshots.len() == 10;
            worst = worst.max(r.summary.violation_rate);
            if env == "colour-bomb-v1" {
                cb_returns.push(r.summary.final_mean_return);
            }
        }
        safety.push(format!("{env}: worst rate {worst:.5} (p = {p}), snapshots pass"));
    }
    let base = run_settings(&settings("bridge-v1", false)).unwrap();
    let base_rate = base.iter().map(|r| r.summary.violation_rate).sum::<f64>() / base.len() as f64;
    safe &= base_rate > 0.01;
    safety.push(format!("unshielded bridge-v1 mean rate {base_rate:.3}"));

    let media = run_settings(&settings("media-streaming", true)).unwrap();
    let head = |k: usize| {
        media
            .iter()
            .map(|r| r.curve.episodes.iter().take(k).map(|e| e.ret).sum::<f64>() / k as f64)
            .sum::<f64>()
            / media.len() as f64
    };
    let first = head(100);
    let last = media.iter().map(|r| r.summary.final_mean_return).sum::<f64>() / media.len() as f64;
    let media_ok = last > first && media.iter().all(|r| r.summary.final_mean_return < 0.0);
    let cb_min = cb_returns.iter().copied().fold(f64::INFINITY, f64::min);
    let reward = verdict(
        cb_min >= 0.9 && media_ok,
        format!("colour-bomb-v1 worst final mean {cb_min:.3} at 1x budget; media-streaming {first:.2} -> {last:.2}"),
    );
    (verdict(safe, safety.join("; ")), reward)
}

fn optimality() -> Verdict {
    let m = fixtures::f2();
    let rcop = brute_force_rcop(&m, 0.2, 0.5, 1000, 0).unwrap();
    let cert = interval_iteration(&m, IntervalConfig::with_epsilon(1e-9)).unwrap();
    let sh = Arc::new(Shield::new(&m, &cert, 0.2, ProfileFamily::uniform_slack(4)).unwrap());
    let mut worst = f64::INFINITY;
    for seed in 0..10 {
        let cfg = LearnerConfig {
            gamma: 0.5,
            total_timesteps: 50_000,
            episode_length: 10,
            seed,
            ..LearnerConfig::default()
        };
        let run = train_shielded(sh.clone(), &cfg).unwrap();
        worst = worst.min(lifted_value(&sh, &run.greedy, 0.5).unwrap());
    }
    let mut fidelity = true;
    for (m, p) in [(fixtures::f2(), 0.2), (BuiltinEnv::ColourBombV1.build().unwrap(), 0.05)] {
        let sh = shield_for(&m, p);
        let closure = sh.reachable_levels(DEFAULT_CLOSURE_LIMIT).unwrap();
        for seed in 0..10 {
            let pol = TabularShieldPolicy::random(sh.action_space(), &closure, 3, seed).unwrap();
            let mut session = ShieldSession::new(sh.clone(), Some(100), 0);
            let a = rollout_shield(&mut session, &pol, seed, seed + 1, 5_000).unwrap();
            let b = rollout_lifted(&sh, &pol, Some(100), seed, seed + 1, 5_000).unwrap();
            let ret = |t: &[(StateId, f64)]| t.iter().map(|e| e.1).sum::<f64>();
            fidelity &= a == b && ret(&a) == ret(&b);
        }
    }
    verdict(
        (rcop.value - 0.38).abs() <= 1e-6 && worst >= 0.38 * 0.95 && fidelity,
        format!(
            "grid optimum J = {:.9} (x = {}), learned lifted J >= {worst:.6} over 10 seeds, lift traces identical: {fidelity}",
            rcop.value,
            rcop.policy.row(StateId(0))[0]
        ),
    )
}

fn feasibility_gate() -> Verdict {
    let f1 = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/f1.json");
    let status = Command::new(env!("CARGO_BIN_EXE_probshield"))
        .args(["train", "--model", f1, "--shielded", "--p", "0.2"])
        .output()
        .expect("binary runs")
        .status;
    verdict(status.code() == Some(2), format!("F1 with p = 0.2 exits {:?}", status.code()))
}

fn main() -> ExitCode {
    let t = Instant::now();
    let (safety, reward) = training_safety_and_reward();
    let results = [
        ("certificate correctness", certificate_correctness()),
        ("certificate soundness", certificate_soundness()),
        ("geometry oracle", geometry_oracle()),
        ("exact shield safety", exact_safety_suite()),
        ("training safety", safety),
        ("reward", reward),
        ("optimality", optimality()),
        ("feasibility gate", feasibility_gate()),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria pass ({:.1?})", results.len() - failed, results.len(), t.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
