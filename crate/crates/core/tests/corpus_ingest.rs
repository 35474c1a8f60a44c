//! Nine heterogeneous sources with the published per-source counts.

use std::path::Path;

use serde_json::json;

use ragbias::corpus::{
    build_collection, collection_stats, load_sources, AdapterConfig, BiasCategory, CollectionSpec, Language,
    PolarityFilter,
};

const CATEGORIES: [&str; 4] = ["gender", "age", "race", "religion"];

struct Source {
    tag: &'static str,
    ext: &'static str,
    counts: [usize; 4],
}

const SOURCES: [Source; 9] = [
    Source { tag: "bbq", ext: "jsonl", counts: [219, 682, 830, 886] },
    Source { tag: "stereoset", ext: "csv", counts: [1744, 0, 5894, 482] },
    Source { tag: "redditbias", ext: "tsv", counts: [4065, 0, 2553, 26948] },
    Source { tag: "crowspairs", ext: "csv", counts: [261, 182, 1016, 222] },
    Source { tag: "chbias", ext: "jsonl", counts: [0, 2406, 0, 0] },
    Source { tag: "winobias", ext: "tsv", counts: [3168, 0, 0, 0] },
    Source { tag: "winogenerated", ext: "jsonl", counts: [3420, 0, 0, 0] },
    Source { tag: "gest", ext: "csv", counts: [7130, 0, 0, 0] },
    Source { tag: "fsb", ext: "jsonl", counts: [2034, 0, 0, 0] },
];

const BAD_ROWS: usize = 3;

/// Rows as (text, polarity label, category); stereoset uses its own labels.
fn rows(s: &Source) -> Vec<[String; 3]> {
    let (stereo, anti) = if s.tag == "stereoset" { ("stereo", "antistereo") } else { ("stereotype", "anti_stereotype") };
    let mut out = Vec::new();
    for (c, &n) in CATEGORIES.iter().zip(&s.counts) {
        for i in 0..n {
            let pol = if i % 2 == 0 { stereo } else { anti };
            out.push([format!("{} sentence {c} {i}", s.tag), pol.to_string(), c.to_string()]);
        }
    }
    out
}

fn write_source(dir: &Path, s: &Source) -> AdapterConfig {
    let path = dir.join(format!("{}.{}", s.tag, s.ext));
    let mut rows = rows(s);
    if s.tag == "redditbias" {
        rows.push(["".into(), "stereotype".into(), "religion".into()]);
        rows.push(["no label".into(), "neutral".into(), "religion".into()]);
        rows.push(["no label either".into(), "".into(), "race".into()]);
    }
    // chbias and winobias carry a single category, supplied by the adapter.
    let single = matches!(s.tag, "chbias" | "winobias");
    let (text_col, pol_col, cat_col) = if s.tag == "stereoset" { ("sentence", "label", "bias_type") } else { ("text", "polarity", "category") };
    match s.ext {
        "jsonl" => {
            let body: String = rows
                .iter()
                .map(|[t, p, c]| {
                    let mut v = json!({ text_col: t, pol_col: p });
                    if !single {
                        v[cat_col] = json!(c);
                    }
                    format!("{v}\n")
                })
                .collect();
            std::fs::write(&path, body).unwrap();
        }
        _ => {
            let delim = if s.ext == "tsv" { b'\t' } else { b',' };
            let mut w = csv::WriterBuilder::new().delimiter(delim).from_path(&path).unwrap();
            if single {
                w.write_record([text_col, pol_col]).unwrap();
            } else {
                w.write_record([text_col, pol_col, cat_col]).unwrap();
            }
            for r in &rows {
                if single {
                    w.write_record(&r[..2]).unwrap();
                } else {
                    w.write_record(r).unwrap();
                }
            }
            w.flush().unwrap();
        }
    }
    let mut adapter = json!({"version": 1, "source_tag": s.tag, "path": path});
    match s.tag {
        "stereoset" => {
            adapter["columns"] = json!({"text": "sentence", "polarity": "label", "category": "bias_type",
                "polarity_values": {"stereo": "stereotype", "antistereo": "anti_stereotype"}});
        }
        "chbias" => adapter["defaults"] = json!({"bias_category": "age", "language": "zh"}),
        "winobias" => adapter["defaults"] = json!({"bias_category": "gender"}),
        _ => {}
    }
    serde_json::from_value(adapter).unwrap()
}

#[test]
fn full_set_matches_published_counts() {
    let dir = tempfile::tempdir().unwrap();
    let adapters: Vec<AdapterConfig> = SOURCES.iter().map(|s| write_source(dir.path(), s)).collect();
    let loaded = load_sources(&adapters).unwrap();
    assert_eq!(loaded.rejects.len(), BAD_ROWS, "{:?}", loaded.rejects);
    assert!(loaded.rejects.iter().all(|r| r.source_tag == "redditbias"));
    assert_eq!(loaded.rows_read, 64_142 + BAD_ROWS);

    let spec = CollectionSpec::new(
        PolarityFilter::Full,
        CATEGORIES.map(BiasCategory::from),
        [Language::En, Language::Zh],
    );
    let full = build_collection(&loaded.documents, &spec).unwrap();
    assert_eq!(full.len(), 64_142);

    let stats = collection_stats(&full);
    assert_eq!(stats.total, 64_142);
    let totals: Vec<usize> = CATEGORIES.iter().map(|c| stats.category_total(&BiasCategory::from(*c))).collect();
    assert_eq!(totals, [22_041, 3_270, 10_293, 28_538]);
    assert_eq!(stats.rows.iter().map(|r| r.count).sum::<usize>(), 64_142);

    let english_only = CollectionSpec::new(PolarityFilter::Full, CATEGORIES.map(BiasCategory::from), [Language::En]);
    assert_eq!(build_collection(&loaded.documents, &english_only).unwrap().len(), 64_142 - 2_406);

    let stereo = CollectionSpec::new(PolarityFilter::StereoOnly, CATEGORIES.map(BiasCategory::from), [Language::En, Language::Zh]);
    let stereo = build_collection(&loaded.documents, &stereo).unwrap();
    assert!(stereo.stereo_fraction() == 1.0);
}

#[test]
fn stats_csv_has_zero_rows_for_empty_cells() {
    let dir = tempfile::tempdir().unwrap();
    let adapters = vec![write_source(dir.path(), &SOURCES[5])];
    let loaded = load_sources(&adapters).unwrap();
    let spec = CollectionSpec::new(PolarityFilter::Full, [BiasCategory::Gender, BiasCategory::Age], [Language::En]);
    let c = build_collection(&loaded.documents, &spec).unwrap();
    let stats = collection_stats(&c);
    let path = dir.path().join("stats.csv");
    stats.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("category,polarity,language,count\n"));
    assert!(text.contains("age,stereotype,en,0\n"), "{text}");
    assert!(text.contains("gender,stereotype,en,1584\n"), "{text}");
    assert_eq!(stats.category_total(&BiasCategory::Age), 0);
}
