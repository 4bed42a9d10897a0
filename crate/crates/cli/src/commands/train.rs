use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use probshield::learner::{train_shielded, train_unshielded, LearningCurve};
use probshield::shield::Shield;
use probshield::verify::{verify_shield_policy_exact, SafetyReport};
use probshield::{Mdp, SafetyCertificate};
use serde::Serialize;

use crate::commands::{certificate, print_stdout, to_json};
use crate::config::{write, TrainSettings};
use crate::error::{CliError, CliResult};
use crate::TrainArgs;

/// Tail length for the reported final mean return.
pub const FINAL_EPISODES: usize = 100;

#[derive(Clone, Debug, Serialize)]
pub struct SnapshotReport {
    pub step: usize,
    pub epsilon: f64,
    pub report: SafetyReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub source: String,
    pub shielded: bool,
    pub p: f64,
    pub seed: u64,
    pub beta_initial: Option<f64>,
    pub episodes: usize,
    pub steps: usize,
    pub violations: usize,
    pub violation_rate: f64,
    pub final_mean_return: f64,
    pub greedy: Option<SafetyReport>,
    pub snapshots: Vec<SnapshotReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub summary: TrainSummary,
    pub curve: LearningCurve,
    pub policy_json: String,
}

impl TrainOutcome {
    pub fn all_reports_pass(&self) -> bool {
        self.summary.snapshots.iter().all(|s| s.report.pass) && self.summary.greedy.as_ref().map_or(true, |r| r.pass)
    }
}

pub struct Prepared {
    pub mdp: Mdp,
    pub cert: Option<SafetyCertificate>,
    pub shield: Option<Arc<Shield>>,
}

/// Certifies and builds the shield once; shared by every seed.
pub fn prepare(settings: &TrainSettings) -> CliResult<Prepared> {
    let mdp = settings.source.load()?;
    if !settings.shielded {
        return Ok(Prepared {
            mdp,
            cert: None,
            shield: None,
        });
    }
    let cert = certificate(&mdp, settings.cert.as_deref(), settings.epsilon)?;
    let shield = Shield::new(&mdp, &cert, settings.p, settings.family()?)?;
    Ok(Prepared {
        mdp,
        cert: Some(cert),
        shield: Some(Arc::new(shield)),
    })
}

pub fn train_one(settings: &TrainSettings, m: &Mdp, shield: Option<&Arc<Shield>>, seed: u64) -> CliResult<TrainOutcome> {
    let cfg = probshield::learner::LearnerConfig {
        seed,
        ..settings.learner.clone()
    };
    let (curve, policy_json, beta_initial, greedy, snapshots) = match shield {
        Some(shield) => {
            let run = train_shielded(shield.clone(), &cfg)?;
            let snapshots = run
                .snapshots
                .iter()
                .map(|s| {
                    Ok(SnapshotReport {
                        step: s.step,
                        epsilon: s.epsilon,
                        report: verify_shield_policy_exact(shield, &s.policy)?,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            let greedy = verify_shield_policy_exact(shield, &run.greedy)?;
            let beta = shield.beta()[m.initial().0];
            (run.curve, run.greedy.to_json(), Some(beta), Some(greedy), snapshots)
        }
        None => {
            let run = train_unshielded(m, &cfg)?;
            (run.curve, to_json(&run.greedy), None, None, Vec::new())
        }
    };
    let summary = TrainSummary {
        source: settings.source.label(),
        shielded: shield.is_some(),
        p: settings.p,
        seed,
        beta_initial,
        episodes: curve.episodes.len(),
        steps: curve.episodes.last().map_or(0, |e| e.steps),
        violations: curve.violations(),
        violation_rate: curve.violation_rate(),
        final_mean_return: curve.tail_mean_return(FINAL_EPISODES),
        greedy,
        snapshots,
    };
    Ok(TrainOutcome {
        summary,
        curve,
        policy_json,
    })
}

/// `curves.csv`, `policy.json`, `summary.json` and one report per snapshot.
pub fn write_artifacts(dir: &Path, outcome: &TrainOutcome) -> CliResult<()> {
    write(&dir.join("curves.csv"), &outcome.curve.to_csv())?;
    write(&dir.join("policy.json"), &outcome.policy_json)?;
    write(&dir.join("summary.json"), &to_json(&outcome.summary))?;
    for s in &outcome.summary.snapshots {
        write(&dir.join("snapshots").join(format!("step-{:09}.json", s.step)), &to_json(s))?;
    }
    Ok(())
}

pub fn run_settings(settings: &TrainSettings) -> CliResult<Vec<TrainOutcome>> {
    let Prepared { mdp: m, cert, shield } = prepare(settings)?;
    if let (Some(dir), Some(cert)) = (&settings.out_dir, &cert) {
        write(&dir.join("certificate.json"), &cert.to_json())?;
    }
    let seeds: Vec<u64> = settings.seeds.clone().collect();
    let outcomes: Vec<CliResult<TrainOutcome>> = thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let (m, shield) = (&m, shield.as_ref());
                scope.spawn(move || train_one(settings, m, shield, seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let outcomes = outcomes.into_iter().collect::<CliResult<Vec<_>>>()?;
    if let Some(dir) = &settings.out_dir {
        for o in &outcomes {
            write_artifacts(&seed_dir(dir, settings, o.summary.seed), o)?;
        }
    }
    Ok(outcomes)
}

fn seed_dir(dir: &Path, settings: &TrainSettings, seed: u64) -> PathBuf {
    if settings.seeds.end - settings.seeds.start > 1 {
        dir.join(format!("seed-{seed}"))
    } else {
        dir.to_path_buf()
    }
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let settings = TrainSettings::resolve(args.run_config()?)?;
    let outcomes = run_settings(&settings)?;
    let mut failed = Vec::new();
    for o in &outcomes {
        let s = &o.summary;
        eprintln!(
            "seed {}: {} episodes, violation rate {:.5}, final mean return {:.4}",
            s.seed, s.episodes, s.violation_rate, s.final_mean_return
        );
        if !o.all_reports_pass() {
            failed.push(s.seed);
        }
    }
    if settings.out_dir.is_none() {
        for o in &outcomes {
            print_stdout(&to_json(&o.summary))?;
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Verification(format!("snapshot policies above the bound for seeds {failed:?}")));
    }
    Ok(())
}
