//! Relevance against bias-level diagnostics for retrieved sets, and rank
//! agreement.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::{generate_all, CachedGenerator, Impression, Request, Task};
use crate::retrieval::cosine;

/// Share of unscorable documents above which a bias level is unreliable.
pub const MAX_EXCLUDED_SHARE: f64 = 0.2;
pub const JUDGE_MAX_TOKENS: u32 = 8;

/// Mean cosine similarity between the query and each document.
pub fn relevance_score(query: &[f32], docs: &[(&str, &[f32])]) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::Input("relevance needs at least one document".into()));
    }
    let mut total = 0.0;
    for (id, v) in docs {
        total += cosine(query, v).map_err(|e| match e {
            Error::ZeroVector(_) => Error::ZeroVector(format!("query or document `{id}`")),
            e => e,
        })?;
    }
    Ok(total / docs.len() as f64)
}

/// First integer in a judge reply, if it lies on the -3..=3 scale.
pub fn parse_judge_score(raw: &str) -> Option<i32> {
    let bytes = raw.as_bytes();
    let start = bytes.iter().position(u8::is_ascii_digit)?;
    let end = bytes[start..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |n| start + n);
    let magnitude: i32 = raw[start..end].parse().ok()?;
    let sign = match start.checked_sub(1).map(|i| bytes[i]) {
        Some(b'-') => -1,
        _ => 1,
    };
    let v = sign * magnitude;
    (-3..=3).contains(&v).then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasLevel {
    /// Mean over scored documents; `None` when none could be scored.
    pub score: Option<f64>,
    pub per_doc: Vec<(String, Option<i32>)>,
    pub excluded: usize,
    pub unreliable: bool,
}

/// Judge every document once and average the scores. The judge sees the
/// document text only.
pub fn bias_level_score(
    docs: &[Impression],
    judge: &CachedGenerator,
    prompt: &str,
    max_in_flight: usize,
) -> Result<BiasLevel> {
    if docs.is_empty() {
        return Err(Error::Input("bias level needs at least one document".into()));
    }
    let reqs: Vec<Request> = docs
        .iter()
        .map(|d| Request {
            system: prompt.to_string(),
            user: d.text.clone(),
            max_tokens: JUDGE_MAX_TOKENS,
            task: Task::JudgeBias { doc: d.clone() },
        })
        .collect();
    let replies = generate_all(judge, &reqs, max_in_flight)?;
    let per_doc: Vec<(String, Option<i32>)> = docs
        .iter()
        .zip(replies)
        .map(|(d, r)| {
            let score = match r {
                Ok(g) => parse_judge_score(&g.response),
                Err(e) => {
                    log::warn!("judge failed on `{}`: {e}", d.doc_id);
                    None
                }
            };
            (d.doc_id.clone(), score)
        })
        .collect();
    let scores: Vec<i32> = per_doc.iter().filter_map(|(_, s)| *s).collect();
    let excluded = per_doc.len() - scores.len();
    Ok(BiasLevel {
        score: (!scores.is_empty()).then(|| scores.iter().map(|&s| s as f64).sum::<f64>() / scores.len() as f64),
        unreliable: excluded as f64 > MAX_EXCLUDED_SHARE * per_doc.len() as f64,
        per_doc,
        excluded,
    })
}

/// `2·r·|b| / (r + |b|)`, zero when either side is zero.
pub fn harmonic_impact(relevance: f64, bias_level: f64) -> Result<f64> {
    if relevance < 0.0 {
        return Err(Error::Input(format!("harmonic impact needs relevance ≥ 0, got {relevance}")));
    }
    let b = bias_level.abs();
    if relevance == 0.0 || b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * relevance * b / (relevance + b))
}

/// Ranks starting at 1, tied values sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho as the Pearson correlation of average ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Input(format!("spearman: {} xs vs {} ys", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Input("spearman needs at least 3 pairs".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Input("spearman: non-finite input".into()));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    for (side, s) in [("xs", sxx), ("ys", syy)] {
        if s == 0.0 {
            return Err(Error::UndefinedMetric(format!("spearman: {side} is constant")));
        }
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub k: usize,
    pub relevance: f64,
    pub bias_level: f64,
    pub harmonic: f64,
}

impl TradeoffRow {
    pub fn new(k: usize, relevance: f64, bias_level: f64) -> Result<Self> {
        Ok(TradeoffRow {
            k,
            relevance,
            bias_level,
            harmonic: harmonic_impact(relevance, bias_level)?,
        })
    }
}

/// CSV with header `k,relevance,bias_level,harmonic`.
pub fn write_tradeoff_csv<W: Write>(rows: &[TradeoffRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Input(format!("csv: {e}"));
    w.write_record(["k", "relevance", "bias_level", "harmonic"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            format!("{:.3}", r.relevance),
            format!("{:.3}", r.bias_level),
            format!("{:.3}", r.harmonic),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Input(format!("csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::corpus::Polarity;
    use crate::generation::{Generator, MockGenerator, MockPolicy};

    #[test]
    fn relevance_examples() {
        let q = [1.0f32, 0.0];
        assert!((relevance_score(&q, &[("a", &[2.0, 0.0][..]), ("b", &[3.0, 0.0][..])]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(relevance_score(&q, &[("a", &[0.0, 1.0][..])]).unwrap(), 0.0);
        let c9 = [0.9f32, (1.0f32 - 0.81).sqrt()];
        let c7 = [0.7f32, (1.0f32 - 0.49).sqrt()];
        assert!((relevance_score(&q, &[("a", &c9[..]), ("b", &c7[..])]).unwrap() - 0.8).abs() < 1e-6);
        let err = relevance_score(&q, &[("a", &[1.0, 0.0][..]), ("z", &[0.0, 0.0][..])]).unwrap_err();
        assert!(err.to_string().contains("`z`"), "{err}");
    }

    #[test]
    fn judge_parsing() {
        assert_eq!(parse_judge_score("-2"), Some(-2));
        assert_eq!(parse_judge_score("Score: +3."), Some(3));
        assert_eq!(parse_judge_score("5"), None);
        assert_eq!(parse_judge_score("-12"), None);
        assert_eq!(parse_judge_score("neutral"), None);
    }

    fn docs(polarities: &[Polarity]) -> Vec<Impression> {
        polarities
            .iter()
            .enumerate()
            .map(|(i, &p)| Impression {
                doc_id: format!("d{i}"),
                text: format!("doc {i}"),
                polarity: Some(p),
                sources: vec![],
            })
            .collect()
    }

    struct Fixed(&'static str);

    impl Generator for Fixed {
        fn tag(&self) -> String {
            "fixed".into()
        }
        fn generate(&self, _: &Request) -> Result<String> {
            Ok(self.0.into())
        }
    }

    #[test]
    fn bias_level_examples() {
        use Polarity::*;
        let mock = CachedGenerator::new(Arc::new(MockGenerator::new(MockPolicy::AlwaysUnknown)), None);
        let out = bias_level_score(&docs(&[Stereotype, Stereotype, Stereotype, AntiStereotype]), &mock, "judge", 2).unwrap();
        assert_eq!(out.score, Some(1.0));
        assert!(!out.unreliable);

        let zero = CachedGenerator::new(Arc::new(Fixed("0")), None);
        assert_eq!(bias_level_score(&docs(&[Stereotype; 3]), &zero, "judge", 2).unwrap().score, Some(0.0));

        let five = CachedGenerator::new(Arc::new(Fixed("5")), None);
        let out = bias_level_score(&docs(&[Stereotype; 3]), &five, "judge", 2).unwrap();
        assert_eq!((out.score, out.excluded, out.unreliable), (None, 3, true));
    }

    #[test]
    fn harmonic_examples() {
        assert!((harmonic_impact(0.835, -0.384).unwrap() - 0.526).abs() <= 0.001);
        assert!((harmonic_impact(0.846, -0.198).unwrap() - 0.320).abs() <= 0.001);
        assert_eq!(harmonic_impact(0.7, 0.0).unwrap(), 0.0);
        assert!(harmonic_impact(-0.1, 0.5).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8);
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let err = spearman_rho(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap_err();
        assert!(err.to_string().contains("ys is constant"));
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0]), vec![1.5, 3.0, 1.5]);
    }

    #[test]
    fn tradeoff_csv_layout() {
        let rows = vec![TradeoffRow::new(10, 0.835, -0.384).unwrap()];
        let mut buf = Vec::new();
        write_tradeoff_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,relevance,bias_level,harmonic\n10,0.835,-0.384,0.526\n");
    }

    proptest! {
        #[test]
        fn harmonic_bounds(r in 0.0f64..1.0, b in -3.0f64..3.0) {
            let h = harmonic_impact(r, b).unwrap();
            let a = b.abs();
            prop_assert!((h - harmonic_impact(a, r).unwrap()).abs() < 1e-12);
            prop_assert!(h <= (2.0 * r).min(2.0 * a) + 1e-12);
            prop_assert!(h <= r.max(a) + 1e-12);
        }

        #[test]
        fn spearman_monotone_invariance(xs in prop::collection::vec(-100.0f64..100.0, 3..30), ys_seed in prop::collection::vec(-100.0f64..100.0, 30)) {
            let ys = &ys_seed[..xs.len()];
            if let Ok(rho) = spearman_rho(&xs, ys) {
                let tx: Vec<f64> = xs.iter().map(|x| x.powi(3) + 7.0).collect();
                let ty: Vec<f64> = ys.iter().map(|y| (y / 10.0).exp()).collect();
                prop_assert!((spearman_rho(&tx, &ty).unwrap() - rho).abs() < 1e-9);
            }
        }
    }
}
