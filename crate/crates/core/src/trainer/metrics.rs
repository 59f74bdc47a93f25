//! Evaluation metrics and the JSON-lines run log.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{domain, shape, Error, Result};

/// `Σ‖u − û‖² / Σ‖u‖²`.
pub fn nmse(truth: &[Vec<Complex64>], est: &[Vec<Complex64>]) -> Result<f64> {
    if truth.len() != est.len() || truth.iter().zip(est).any(|(a, b)| a.len() != b.len()) {
        return shape("nmse operands differ in shape");
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (u, v) in truth.iter().zip(est) {
        for (a, b) in u.iter().zip(v) {
            num += (a - b).norm_sqr();
            den += a.norm_sqr();
        }
    }
    if den == 0.0 {
        return domain("nmse of an all-zero reference");
    }
    Ok(num / den)
}

/// [`nmse`] over real-packed rows.
pub fn nmse_packed(truth: &[f64], est: &[f64]) -> Result<f64> {
    if truth.len() != est.len() {
        return shape("nmse operands differ in length");
    }
    let num: f64 = truth.iter().zip(est).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = truth.iter().map(|a| a * a).sum();
    if den == 0.0 {
        return domain("nmse of an all-zero reference");
    }
    Ok(num / den)
}

/// Fraction of exact index matches.
pub fn beam_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return shape("prediction and label counts differ");
    }
    if pred.is_empty() {
        return domain("accuracy of an empty set");
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Eigenvalues of a Hermitian matrix packed as `[re; im]`, from the real
/// symmetric embedding `[[A, −B], [B, A]]` (each eigenvalue appears twice).
pub fn hermitian_eigenvalues(packed: &[f64], n: usize) -> Result<Vec<f64>> {
    if packed.len() != 2 * n * n {
        return shape(format!("{} values do not pack an {n}x{n} matrix", packed.len()));
    }
    let (re, im) = packed.split_at(n * n);
    let m = DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, ii) = (i / n, i % n);
        let (bj, jj) = (j / n, j % n);
        let a = re[ii * n + jj];
        let b = im[ii * n + jj];
        match (bi, bj) {
            (0, 0) | (1, 1) => a,
            (0, 1) => -b,
            _ => b,
        }
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Whether a packed Hermitian matrix is positive semi-definite up to
/// `1e−9 · (Σ|λ|)`.
pub fn is_psd(packed: &[f64], n: usize) -> Result<bool> {
    let ev = hermitian_eigenvalues(packed, n)?;
    let size: f64 = ev.iter().map(|v| v.abs()).sum();
    Ok(ev[0] >= -1e-9 * size.max(f64::MIN_POSITIVE))
}

/// Population variance (mean squared deviation).
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// One line per training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub run_id: String,
    pub scheme: String,
    pub task: String,
    pub epoch: usize,
    pub rho: f64,
    pub loss_total: f64,
    pub loss_asn: f64,
    pub loss_aden: f64,
    /// Holdout NMSE (channel, ccm) or accuracy (beam).
    pub metric: f64,
    pub s: Vec<usize>,
}

/// Closing line of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub run_id: String,
    pub scheme: String,
    pub task: String,
    pub seed: u64,
    pub m_t: usize,
    pub metric_name: String,
    pub holdout_metric: f64,
    pub frozen_s: Vec<usize>,
    /// Final scaled probabilities; empty for fixed selections.
    pub soft: Vec<f64>,
    pub final_loss_asn: f64,
    /// Share of predicted covariances that are PSD (ccm task only).
    pub psd_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricsLine {
    Epoch(EpochRecord),
    Summary(Summary),
}

pub fn write_metrics<W: Write>(out: &mut W, history: &[EpochRecord], summary: &Summary) -> Result<()> {
    let enc = |e: serde_json::Error| Error::Format(e.to_string());
    for r in history {
        writeln!(out, "{}", serde_json::to_string(r).map_err(enc)?)?;
    }
    writeln!(out, "{}", serde_json::to_string(summary).map_err(enc)?)?;
    Ok(())
}

/// Parses a metrics file; `label` names the source in error messages.
pub fn read_metrics<R: Read>(input: R, label: &str) -> Result<Vec<MetricsLine>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsLine = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{label}:{}: {e}", i + 1)))?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Format(format!("{label}: no metrics records")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn nmse_examples() {
        let u = vec![vec![c(1.0, 2.0), c(-1.0, 0.5)], vec![c(0.0, 1.0), c(3.0, 0.0)]];
        let zero: Vec<_> = u.iter().map(|v| vec![c(0.0, 0.0); v.len()]).collect();
        let double: Vec<_> = u.iter().map(|v| v.iter().map(|x| x * 2.0).collect()).collect();
        assert_eq!(nmse(&u, &u).unwrap(), 0.0);
        assert_eq!(nmse(&u, &zero).unwrap(), 1.0);
        assert!((nmse(&u, &double).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&zero, &u).is_err());
        assert!(nmse_packed(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(beam_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(beam_accuracy(&[1, 2], &[3, 4]).unwrap(), 0.0);
        assert_eq!(beam_accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]).unwrap(), 0.5);
        assert!(beam_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn variance_is_population_variance() {
        assert_eq!(variance(&[1.0, 3.0]), 1.0);
        assert_eq!(variance(&[2.0, 2.0]), 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn eigenvalues_of_a_hermitian_matrix() {
        // [[2, j], [−j, 2]] has eigenvalues 1 and 3
        let packed = [2.0, 0.0, 0.0, 2.0, 0.0, 1.0, -1.0, 0.0];
        let ev = hermitian_eigenvalues(&packed, 2).unwrap();
        for (a, b) in ev.iter().zip([1.0, 1.0, 3.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(is_psd(&packed, 2).unwrap());
        let neg = [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(!is_psd(&neg, 2).unwrap());
    }

    #[test]
    fn metrics_lines_round_trip() {
        let rec = EpochRecord {
            run_id: "r".into(),
            scheme: "asn_aden".into(),
            task: "channel".into(),
            epoch: 0,
            rho: 5.0,
            loss_total: 1.5,
            loss_asn: 0.5,
            loss_aden: 0.2,
            metric: 0.1,
            s: vec![0, 3],
        };
        let sum = Summary {
            run_id: "r".into(),
            scheme: "asn_aden".into(),
            task: "channel".into(),
            seed: 1,
            m_t: 2,
            metric_name: "nmse".into(),
            holdout_metric: 0.1,
            frozen_s: vec![0, 3],
            soft: vec![1.0, 0.0, 0.0, 1.0],
            final_loss_asn: 0.0,
            psd_fraction: None,
        };
        let mut buf = Vec::new();
        write_metrics(&mut buf, std::slice::from_ref(&rec), &sum).unwrap();
        let back = read_metrics(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, vec![MetricsLine::Epoch(rec), MetricsLine::Summary(sum)]);
        assert!(read_metrics(&b""[..], "empty").is_err());
        let err = read_metrics(&b"{\"run_id\": 3}\n"[..], "bad").unwrap_err();
        assert!(err.to_string().contains("bad:1"));
    }
}
