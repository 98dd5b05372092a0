//! Efficiency of each method relative to a baseline over replicate runs.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::{CliError, CliResult};

/// Ratios are reported as this when the method's MSE is zero and the
/// baseline's is not.
pub const EFFICIENCY_CAP: f64 = 1e12;

/// Estimates of one method for one integrand, one per replicate.
pub type Table = BTreeMap<(String, String), Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub enum Gold {
    Value(f64),
    PerIntegrand(BTreeMap<String, f64>),
    /// Replicate mean of the named method.
    Method(String),
    /// Replicate mean of the lowest-variance method for each integrand.
    BestMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub integrand: String,
    pub method: String,
    pub replicates: usize,
    pub mean: f64,
    pub variance: f64,
    pub mse: f64,
    pub gold: f64,
    pub efficiency: f64,
    /// MSE·time ratio; only when both methods have recorded times.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overall_efficiency: Option<f64>,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn mse(x: &[f64], gold: f64) -> f64 {
    x.iter().map(|v| (v - gold).powi(2)).sum::<f64>() / x.len() as f64
}

/// `baseline / method`, guarded against zero denominators.
pub fn ratio(baseline: f64, method: f64) -> f64 {
    if method <= 0.0 {
        if baseline <= 0.0 {
            1.0
        } else {
            EFFICIENCY_CAP
        }
    } else {
        (baseline / method).min(EFFICIENCY_CAP)
    }
}

fn gold_for(table: &Table, integrand: &str, gold: &Gold) -> CliResult<f64> {
    match gold {
        Gold::Value(v) => Ok(*v),
        Gold::PerIntegrand(m) => m
            .get(integrand)
            .copied()
            .ok_or_else(|| CliError::config(format!("no gold value for {integrand}"))),
        Gold::Method(name) => table
            .get(&(integrand.to_string(), name.clone()))
            .map(|v| mean(v))
            .ok_or_else(|| CliError::config(format!("gold method {name} has no estimates of {integrand}"))),
        Gold::BestMethod => table
            .iter()
            .filter(|((i, _), _)| i == integrand)
            .min_by(|a, b| variance(a.1).total_cmp(&variance(b.1)))
            .map(|(_, v)| mean(v))
            .ok_or_else(|| CliError::config(format!("no estimates of {integrand}"))),
    }
}

/// One row per (integrand, method). `times` holds mean seconds per method.
pub fn efficiency_table(
    table: &Table,
    gold: &Gold,
    baseline: &str,
    times: &BTreeMap<String, f64>,
) -> CliResult<Vec<Row>> {
    let mut rows = Vec::new();
    for ((integrand, method), est) in table {
        let g = gold_for(table, integrand, gold)?;
        let base = table
            .get(&(integrand.clone(), baseline.to_string()))
            .ok_or_else(|| CliError::config(format!("baseline {baseline} has no estimates of {integrand}")))?;
        let (mb, mm) = (mse(base, g), mse(est, g));
        let overall = match (times.get(baseline), times.get(method)) {
            (Some(&tb), Some(&tm)) => Some(ratio(mb * tb, mm * tm)),
            _ => None,
        };
        rows.push(Row {
            integrand: integrand.clone(),
            method: method.clone(),
            replicates: est.len(),
            mean: mean(est),
            variance: variance(est),
            mse: mm,
            gold: g,
            efficiency: ratio(mb, mm),
            overall_efficiency: overall,
        });
    }
    Ok(rows)
}

pub fn to_csv(rows: &[Row]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["integrand", "method", "replicates", "mean", "variance", "mse", "gold", "efficiency", "overall_efficiency"])?;
    for r in rows {
        w.write_record([
            r.integrand.clone(),
            r.method.clone(),
            r.replicates.to_string(),
            r.mean.to_string(),
            r.variance.to_string(),
            r.mse.to_string(),
            r.gold.to_string(),
            r.efficiency.to_string(),
            r.overall_efficiency.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

pub fn to_markdown(rows: &[Row]) -> String {
    let mut s = String::from("| integrand | method | mean | MSE | efficiency | overall |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let overall = r.overall_efficiency.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        let eff = if r.efficiency >= EFFICIENCY_CAP { "> 1e12".to_string() } else { format!("{:.3}", r.efficiency) };
        s.push_str(&format!(
            "| {} | {} | {:.6} | {:.3e} | {} | {} |\n",
            r.integrand, r.method, r.mean, r.mse, eff, overall
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &str, &[f64])]) -> Table {
        rows.iter().map(|(i, m, v)| ((i.to_string(), m.to_string()), v.to_vec())).collect()
    }

    #[test]
    fn identical_methods_give_one() {
        let v = [1.0, 2.0, 3.0, 0.5];
        let t = table(&[("x", "vanilla", &v), ("x", "zv", &v)]);
        let rows = efficiency_table(&t, &Gold::Value(1.5), "vanilla", &BTreeMap::new()).unwrap();
        assert!(rows.iter().all(|r| r.efficiency == 1.0));
    }

    #[test]
    fn known_mses() {
        // errors ±2 and ±1 around zero
        let t = table(&[("x", "vanilla", &[2.0, -2.0]), ("x", "zv", &[1.0, -1.0])]);
        let rows = efficiency_table(&t, &Gold::Value(0.0), "vanilla", &BTreeMap::new()).unwrap();
        let zv = rows.iter().find(|r| r.method == "zv").unwrap();
        assert_eq!(zv.mse, 1.0);
        assert_eq!(zv.efficiency, 4.0);
    }

    #[test]
    fn zero_variance_is_capped() {
        let t = table(&[("x", "vanilla", &[0.9, 1.1]), ("x", "zv", &[1.0, 1.0])]);
        let rows = efficiency_table(&t, &Gold::Value(1.0), "vanilla", &BTreeMap::new()).unwrap();
        let zv = rows.iter().find(|r| r.method == "zv").unwrap();
        assert_eq!(zv.efficiency, EFFICIENCY_CAP);
        assert!(to_markdown(&rows).contains("> 1e12"));
        assert_eq!(ratio(0.0, 0.0), 1.0);
    }

    #[test]
    fn best_method_gold_and_overall() {
        let t = table(&[("x", "vanilla", &[2.0, -2.0]), ("x", "zv", &[1.0, -1.0])]);
        let times = BTreeMap::from([("vanilla".to_string(), 1.0), ("zv".to_string(), 2.0)]);
        let rows = efficiency_table(&t, &Gold::BestMethod, "vanilla", &times).unwrap();
        let zv = rows.iter().find(|r| r.method == "zv").unwrap();
        assert_eq!(zv.gold, 0.0);
        assert_eq!(zv.overall_efficiency, Some(2.0));
        assert!(efficiency_table(&t, &Gold::Value(0.0), "cf", &times).is_err());
    }
}
