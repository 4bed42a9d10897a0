use probshield::envs::BuiltinEnv;

use crate::commands::{emit, print_stdout};
use crate::error::CliResult;
use crate::EnvCommand;

pub fn run(cmd: &EnvCommand) -> CliResult<()> {
    match cmd {
        EnvCommand::Export { name, out } => {
            let env: BuiltinEnv = name.parse()?;
            emit(out.as_deref(), &env.build()?.to_json())
        }
        EnvCommand::List => {
            for env in BuiltinEnv::ALL {
                let t = env.params();
                print_stdout(&format!(
                    "{:<16} p={:<6} episode_length={:<4} total_timesteps={}",
                    env.name(),
                    t.safety_bound,
                    t.episode_length,
                    t.total_timesteps
                ))?;
            }
            Ok(())
        }
    }
}
