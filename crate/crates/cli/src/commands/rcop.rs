use probshield::verify::{brute_force_rcop_with, DEFAULT_GRID_BUDGET};

use crate::commands::{emit, to_json};
use crate::config::ModelSource;
use crate::error::{CliError, CliResult};
use crate::RcopArgs;

pub fn run(args: &RcopArgs) -> CliResult<()> {
    let source = ModelSource::from_options(args.source.env.as_deref(), args.source.model.as_deref())?;
    let m = source.load()?;
    if !(0.0..=1.0).contains(&args.p) {
        return Err(CliError::Usage(format!("p = {} outside [0, 1]", args.p)));
    }
    let sol = brute_force_rcop_with(&m, args.p, args.gamma, args.grid, args.samples, DEFAULT_GRID_BUDGET, args.seed)?;
    eprintln!("J = {:.9}, reach = {:.9}, {} candidates", sol.value, sol.reach, sol.candidates);
    emit(args.out.as_deref(), &to_json(&sol))
}
