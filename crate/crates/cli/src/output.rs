use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::CliResult;

/// Pretty JSON with a trailing newline, to `path` or stdout.
pub(crate) fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// `out.json` → `out.json.timing.json`. Wall times live only here so the
/// main outputs stay byte-identical between runs.
pub(crate) fn timing_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".timing.json");
    PathBuf::from(s)
}

pub(crate) fn seconds(d: Duration) -> f64 {
    d.as_secs_f64()
}
