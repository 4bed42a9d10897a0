use std::sync::Arc;

use probshield::shield::{Shield, TabularShieldPolicy};
use probshield::verify::{lifted_value, monte_carlo_safety, verify_shield_policy_exact, MonteCarloEstimate, SafetyReport};
use serde::Serialize;

use crate::commands::{certificate, emit, to_json};
use crate::config::{profile_family, read, ModelSource};
use crate::error::{CliError, CliResult};
use crate::VerifyArgs;

#[derive(Clone, Debug, Serialize)]
pub struct VerifyOutput {
    pub report: SafetyReport,
    pub monte_carlo: Option<MonteCarloEstimate>,
    pub lifted_value: Option<f64>,
}

pub fn run(args: &VerifyArgs) -> CliResult<()> {
    let source = ModelSource::from_options(args.source.env.as_deref(), args.source.model.as_deref())?;
    let m = source.load()?;
    let p = match (args.p, source.builtin()) {
        (Some(p), _) => p,
        (None, Some(env)) => env.params().safety_bound,
        (None, None) => return Err(CliError::Usage("a safety bound p is required for model files".into())),
    };
    let cert = certificate(&m, args.cert.as_deref(), args.epsilon)?;
    let family = profile_family(args.profiles.as_deref(), args.slack_steps)?;
    let shield = Arc::new(Shield::new(&m, &cert, p, family)?);
    let policy = TabularShieldPolicy::from_json(&read(&args.policy)?)?;
    if policy.action_space() != shield.action_space() {
        return Err(CliError::Usage(format!(
            "policy was trained on {:?} but the shield has {:?}",
            policy.action_space(),
            shield.action_space()
        )));
    }
    let report = verify_shield_policy_exact(&shield, &policy)?;
    let monte_carlo = args
        .monte_carlo
        .map(|n| monte_carlo_safety(&shield, &policy, n, args.seed))
        .transpose()?;
    let lifted = args.gamma.map(|g| lifted_value(&shield, &policy, g)).transpose()?;
    eprintln!(
        "P(reach unsafe) = {:.12e} against bound {} over {} shield states: {}",
        report.probability,
        report.bound,
        report.chain_states,
        if report.pass { "pass" } else { "FAIL" }
    );
    let pass = report.pass;
    emit(
        args.out.as_deref(),
        &to_json(&VerifyOutput {
            report,
            monte_carlo,
            lifted_value: lifted,
        }),
    )?;
    if !pass {
        return Err(CliError::Verification("policy exceeds the safety bound".into()));
    }
    Ok(())
}
