//! CSV sample archive.
//!
//! Header `theta_1..theta_d,grad_1..grad_d,weight[,log_like,log_prior]`, one
//! row per sample. Floats are written in shortest round-trip form so a
//! write/read cycle is lossless.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::SampleSet;
use crate::error::{Error, Result};

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_archive_to<W: Write>(s: &SampleSet, out: W) -> Result<()> {
    let (n, d) = (s.count(), s.dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=d).map(|k| format!("theta_{k}")).collect();
    header.extend((1..=d).map(|k| format!("grad_{k}")));
    header.push("weight".into());
    let with_logs = s.log_like().is_some() && s.log_prior().is_some();
    if with_logs {
        header.push("log_like".into());
        header.push("log_prior".into());
    }
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..n {
        row.clear();
        row.extend((0..d).map(|k| fmt_f64(s.theta()[(i, k)])));
        row.extend((0..d).map(|k| fmt_f64(s.grad_log_target()[(i, k)])));
        row.push(fmt_f64(s.weights()[i]));
        if with_logs {
            row.push(fmt_f64(s.log_like().unwrap()[i]));
            row.push(fmt_f64(s.log_prior().unwrap()[i]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_archive(s: &SampleSet, path: impl AsRef<Path>) -> Result<()> {
    write_archive_to(s, File::create(path)?)
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<SampleSet> {
    read_archive_from(File::open(path)?)
}

pub fn read_archive_from<R: Read>(input: R) -> Result<SampleSet> {
    let mut r = csv::ReaderBuilder::new().flexible(false).from_reader(input);
    let header = r.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let d = cols.iter().take_while(|c| c.starts_with("theta_")).count();
    let expect_core = 2 * d + 1;
    let with_logs = match cols.len() {
        l if l == expect_core => false,
        l if l == expect_core + 2 => true,
        l => {
            return Err(Error::invalid(format!(
                "archive header has {l} columns; expected {expect_core} or {}",
                expect_core + 2
            )))
        }
    };
    for k in 0..d {
        if cols[k] != format!("theta_{}", k + 1) || cols[d + k] != format!("grad_{}", k + 1) {
            return Err(Error::invalid("archive header columns out of order"));
        }
    }
    if cols[2 * d] != "weight" || (with_logs && (cols[2 * d + 1] != "log_like" || cols[2 * d + 2] != "log_prior")) {
        return Err(Error::invalid("archive header is missing weight/log columns"));
    }
    if d == 0 {
        return Err(Error::invalid("archive has no theta columns"));
    }

    let mut theta = Vec::new();
    let mut grad = Vec::new();
    let mut weights = Vec::new();
    let mut ll = Vec::new();
    let mut lp = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |j: usize| -> Result<f64> {
            rec[j]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad number {:?}: {e}", &rec[j])))
        };
        for k in 0..d {
            theta.push(parse(k)?);
        }
        for k in 0..d {
            grad.push(parse(d + k)?);
        }
        weights.push(parse(2 * d)?);
        if with_logs {
            ll.push(parse(2 * d + 1)?);
            lp.push(parse(2 * d + 2)?);
        }
    }
    let n = weights.len();
    let theta = DMatrix::from_row_slice(n, d, &theta);
    let grad = DMatrix::from_row_slice(n, d, &grad);
    let available: Vec<usize> = (0..d)
        .filter(|&k| !grad.column(k).iter().all(|v| v.is_nan()))
        .collect();
    let set = if available.len() == d {
        SampleSet::new(theta, grad, weights)?
    } else {
        let block = grad.select_columns(&available);
        SampleSet::with_partial_gradients(theta, &block, &available, weights)?
    };
    if with_logs {
        set.with_log_densities(ll, lp)
    } else {
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_ragged_rows() {
        let data = "theta_1,grad_1,weight\n0.5,1.0,1.0\n0.5,1.0\n";
        assert!(read_archive_from(data.as_bytes()).is_err());
    }

    #[test]
    fn rejects_wrong_column_count() {
        let data = "theta_1,grad_1,weight,log_like\n0.5,1.0,1.0,2.0\n";
        assert!(read_archive_from(data.as_bytes()).is_err());
    }

    #[test]
    fn masked_gradients_survive() {
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let g = DMatrix::from_row_slice(2, 1, &[0.1, 0.2]);
        let s = SampleSet::with_partial_gradients(theta, &g, &[1], vec![0.5, 0.5]).unwrap();
        let mut buf = Vec::new();
        write_archive_to(&s, &mut buf).unwrap();
        let back = read_archive_from(buf.as_slice()).unwrap();
        assert!(!back.has_gradient(0) && back.has_gradient(1));
        assert_eq!(back.grad_log_target()[(1, 1)], 0.2);
    }

    proptest! {
        #[test]
        fn lossless_round_trip(vals in proptest::collection::vec(-1e300f64..1e300, 12), tiny in 1e-310f64..1e-300) {
            let mut v = vals.clone();
            v[0] = tiny;
            let theta = DMatrix::from_row_slice(3, 2, &v[..6]);
            let grad = DMatrix::from_row_slice(3, 2, &v[6..]);
            let w = vec![0.2, 0.3, 0.5];
            let s = SampleSet::new(theta, grad, w).unwrap()
                .with_log_densities(vec![-1.5, 0.1, 1e-7], vec![3.0, 2.0, 1.0]).unwrap();
            let mut buf = Vec::new();
            write_archive_to(&s, &mut buf).unwrap();
            let back = read_archive_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
