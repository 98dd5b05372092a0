pub mod efficiency;
pub mod evidence;
pub mod postprocess;
pub mod smc;

use std::path::Path;

use zvcv::smc::{read_system, ParticleSystem};

use crate::{CliError, CliResult};

pub(crate) fn load_run(dir: &Path) -> CliResult<ParticleSystem> {
    if !dir.is_dir() {
        return Err(CliError::Io(format!("{} is not a run directory", dir.display())));
    }
    Ok(read_system(dir)?.0)
}
