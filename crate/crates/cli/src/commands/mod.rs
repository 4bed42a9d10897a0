use std::path::Path;

use probshield::reach::{interval_iteration, IntervalConfig};
use probshield::{Mdp, SafetyCertificate};

use crate::config::{read, write};
use crate::error::{CliError, CliResult};

pub mod certify;
pub mod env;
pub mod rcop;
pub mod train;
pub mod verify;

/// Writes to `out` when given, otherwise prints.
pub(crate) fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write(path, text),
        None => print_stdout(text),
    }
}

/// Prints a line, treating a closed pipe as success.
pub(crate) fn print_stdout(text: &str) -> CliResult<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io("<stdout>", e)),
        _ => Ok(()),
    }
}

pub(crate) fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

/// Loads `cert` when given, otherwise certifies `m` at `epsilon`.
pub(crate) fn certificate(m: &Mdp, cert: Option<&Path>, epsilon: f64) -> CliResult<SafetyCertificate> {
    match cert {
        Some(path) => {
            let c = SafetyCertificate::from_json(&read(path)?)?;
            if c.beta.len() != m.state_count() {
                return Err(CliError::Usage(format!(
                    "certificate covers {} states, model has {}",
                    c.beta.len(),
                    m.state_count()
                )));
            }
            Ok(c)
        }
        None => Ok(interval_iteration(m, IntervalConfig::with_epsilon(epsilon))?),
    }
}
