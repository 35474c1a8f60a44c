use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, BootstrapSettings, Counts, MetricKind, PredictionSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

/// Metrics of one slice. Undefined values are `None`; the reason is listed in
/// `notes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub counts: Counts,
    pub acc_a: Option<f64>,
    pub acc_d: Option<f64>,
    pub diff_bias_a: Option<f64>,
    pub diff_bias_d: Option<f64>,
    pub ci: BTreeMap<MetricKind, Interval>,
    pub invalid_rate_a: Option<f64>,
    pub invalid_rate_d: Option<f64>,
    pub bound_slack_a: Option<f64>,
    pub bound_slack_d: Option<f64>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn value(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::AccA => self.acc_a,
            MetricKind::AccD => self.acc_d,
            MetricKind::DiffBiasA => self.diff_bias_a,
            MetricKind::DiffBiasD => self.diff_bias_d,
        }
    }

    pub fn n(&self, kind: MetricKind) -> u64 {
        match kind.view() {
            crate::benchmark::View::Ambiguous => self.counts.n_a,
            crate::benchmark::View::Disambiguated => self.counts.n_s + self.counts.n_c,
        }
    }

    pub fn invalid_rate(&self, kind: MetricKind) -> Option<f64> {
        match kind.view() {
            crate::benchmark::View::Ambiguous => self.invalid_rate_a,
            crate::benchmark::View::Disambiguated => self.invalid_rate_d,
        }
    }
}

fn ratio_f64(r: num_rational::Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Point values, bound slacks and bootstrap intervals for every defined metric.
pub fn compute_report(ps: &PredictionSet, boot: &BootstrapSettings) -> Result<MetricReport> {
    let counts = ps.counts();
    let mut notes = Vec::new();
    let mut values = BTreeMap::new();
    let mut ci = BTreeMap::new();
    for kind in MetricKind::ALL {
        match counts.value(kind) {
            Ok(v) => {
                values.insert(kind, v);
                let b = bootstrap_ci(ps, kind, boot.resamples, boot.level, boot.seed)?;
                if b.flagged {
                    notes.push(format!("{kind}: {} of {} resamples undefined", b.dropped, b.resamples));
                }
                ci.insert(kind, Interval { low: b.low, high: b.high });
            }
            Err(Error::UndefinedMetric(why)) => notes.push(why),
            Err(e) => return Err(e),
        }
    }
    Ok(MetricReport {
        counts,
        acc_a: values.get(&MetricKind::AccA).copied(),
        acc_d: values.get(&MetricKind::AccD).copied(),
        diff_bias_a: values.get(&MetricKind::DiffBiasA).copied(),
        diff_bias_d: values.get(&MetricKind::DiffBiasD).copied(),
        ci,
        invalid_rate_a: counts.invalid_rate_a(),
        invalid_rate_d: counts.invalid_rate_d(),
        bound_slack_a: counts.bound_slack_a().ok().map(ratio_f64),
        bound_slack_d: counts.bound_slack_d().ok().map(ratio_f64),
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub slice: String,
    pub metric: String,
    pub value: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: u64,
    pub invalid_rate: Option<f64>,
}

impl MetricRow {
    pub fn from_report(run_id: &str, slice: &str, report: &MetricReport) -> Vec<MetricRow> {
        MetricKind::ALL
            .iter()
            .map(|&kind| {
                let ci = report.ci.get(&kind);
                MetricRow {
                    run_id: run_id.to_string(),
                    slice: slice.to_string(),
                    metric: kind.as_str().to_string(),
                    value: report.value(kind),
                    ci_low: ci.map(|c| c.low),
                    ci_high: ci.map(|c| c.high),
                    n: report.n(kind),
                    invalid_rate: report.invalid_rate(kind),
                }
            })
            .collect()
    }
}

/// CSV with header `run_id,slice,metric,value,ci_low,ci_high,n,invalid_rate`.
pub fn write_metric_rows<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(format!("csv: {e}")))?;
    }
    if rows.is_empty() {
        w.write_record(["run_id", "slice", "metric", "value", "ci_low", "ci_high", "n", "invalid_rate"])
            .map_err(|e| Error::Input(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Input(format!("csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{AmbiguousPrediction, Outcome};

    #[test]
    fn ambiguous_only_report() {
        let ps = PredictionSet {
            ambiguous: (0..10)
                .map(|i| AmbiguousPrediction {
                    instance_id: i.to_string(),
                    outcome: if i < 6 { Outcome::Unknown } else if i < 9 { Outcome::Stereo } else { Outcome::Invalid },
                })
                .collect(),
            disambiguated: vec![],
        };
        let r = compute_report(&ps, &BootstrapSettings { resamples: 1000, ..Default::default() }).unwrap();
        assert_eq!(r.acc_a, Some(0.6));
        assert_eq!(r.diff_bias_a, Some(0.3));
        assert_eq!(r.acc_d, None);
        assert_eq!(r.invalid_rate_a, Some(0.1));
        assert!((r.bound_slack_a.unwrap() - 0.1).abs() < 1e-12);
        assert!(r.ci.contains_key(&MetricKind::AccA) && !r.ci.contains_key(&MetricKind::AccD));
        assert_eq!(r.notes.len(), 2);

        let rows = MetricRow::from_report("run", "slice", &r);
        let mut buf = Vec::new();
        write_metric_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run_id,slice,metric,value,ci_low,ci_high,n,invalid_rate\n"));
        assert!(text.contains("run,slice,acc_a,0.6,"));
        assert!(text.contains("run,slice,acc_d,,,,0,\n"));
    }
}
