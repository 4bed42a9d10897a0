use probshield::reach::{certify_inductive, interval_iteration, IntervalConfig};

use crate::commands::emit;
use crate::config::ModelSource;
use crate::error::{CliError, CliResult};
use crate::CertifyArgs;

pub fn run(args: &CertifyArgs) -> CliResult<()> {
    let source = ModelSource::from_options(args.source.env.as_deref(), args.source.model.as_deref())?;
    let m = source.load()?;
    let mut cfg = IntervalConfig::with_epsilon(args.epsilon);
    if let Some(n) = args.max_iterations {
        cfg.max_iterations = n;
    }
    let cert = interval_iteration(&m, cfg)?;
    if !cert.inductive || !certify_inductive(&m, &cert.beta) {
        return Err(CliError::Core(probshield::Error::NotInductive));
    }
    eprintln!(
        "{}: beta(initial) = {:.12e}, gap {:.3e} after {} sweeps",
        source.label(),
        cert.beta(m.initial()),
        cert.max_gap(),
        cert.iterations
    );
    emit(args.out.as_deref(), &cert.to_json())
}
