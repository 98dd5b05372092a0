use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::efficiency::{efficiency_table, to_csv, to_markdown, Gold, Table};
use crate::output::timing_path;
use crate::{CliError, CliResult, EfficiencyArgs};

use super::postprocess::EstimatesFile;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Estimate rows from `postprocess` or `evidence` output, plus per-method
/// mean times from the timing sidecars that exist.
pub fn load_estimates(paths: &[impl AsRef<Path>]) -> CliResult<(Table, BTreeMap<String, f64>)> {
    let mut table = Table::new();
    let mut time_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for p in paths {
        let p = p.as_ref();
        let file: EstimatesFile = read_json(p).or_else(|_| {
            #[derive(serde::Deserialize)]
            struct ResultsOnly {
                results: Vec<super::postprocess::ResultRow>,
            }
            read_json::<ResultsOnly>(p).map(|r| EstimatesFile { n: 0, dim: 0, temperature: None, seed: 0, results: r.results })
        })?;
        for r in file.results {
            table.entry((r.integrand, r.method)).or_default().push(r.estimate);
        }
        let tp = timing_path(p);
        if tp.exists() {
            let v: serde_json::Value = read_json(&tp)?;
            if let Some(m) = v.get("method_seconds").and_then(|m| m.as_object()) {
                for (k, s) in m {
                    if let Some(s) = s.as_f64() {
                        let e = time_sums.entry(k.clone()).or_default();
                        e.0 += s;
                        e.1 += 1;
                    }
                }
            }
        }
    }
    let times = time_sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
    Ok((table, times))
}

pub fn run(a: &EfficiencyArgs) -> CliResult<()> {
    let (table, times) = load_estimates(&a.estimates)?;
    let gold = match (&a.gold, &a.gold_file, &a.gold_method) {
        (Some(v), _, _) => Gold::Value(*v),
        (_, Some(f), _) => Gold::PerIntegrand(read_json(f)?),
        (_, _, Some(m)) => Gold::Method(m.clone()),
        _ => Gold::BestMethod,
    };
    let rows = efficiency_table(&table, &gold, &a.baseline, &times)?;
    if let Some(out) = &a.out {
        fs::write(out, to_csv(&rows)?)?;
    }
    match &a.markdown {
        Some(md) => fs::write(md, to_markdown(&rows))?,
        None if a.out.is_none() => print!("{}", to_markdown(&rows)),
        None => {}
    }
    Ok(())
}
