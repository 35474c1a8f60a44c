use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BiasCategory, Collection, Language, Polarity};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub category: BiasCategory,
    pub polarity: Polarity,
    pub language: Language,
    pub count: usize,
}

/// Document counts per category × polarity × language. Every combination the
/// spec admits gets a row, even when its count is zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub rows: Vec<StatsRow>,
    pub total: usize,
    /// Documents offered to the collection builder before filtering.
    pub input_total: usize,
}

impl CollectionStats {
    pub fn category_total(&self, category: &BiasCategory) -> usize {
        self.rows
            .iter()
            .filter(|r| &r.category == category)
            .map(|r| r.count)
            .sum()
    }

    pub fn polarity_total(&self, polarity: Polarity) -> usize {
        self.rows
            .iter()
            .filter(|r| r.polarity == polarity)
            .map(|r| r.count)
            .sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        w.write_record(["category", "polarity", "language", "count"])
            .map_err(|e| Error::parse(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.category.to_string(),
                r.polarity.to_string(),
                r.language.to_string(),
                r.count.to_string(),
            ])
            .map_err(|e| Error::parse(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn collection_stats(c: &Collection) -> CollectionStats {
    let spec = c.spec();
    let mut counts: BTreeMap<(BiasCategory, Polarity, Language), usize> = BTreeMap::new();
    for cat in &spec.categories {
        for pol in Polarity::ALL {
            for lang in &spec.languages {
                counts.insert((cat.clone(), pol, lang.clone()), 0);
            }
        }
    }
    for d in c.documents() {
        *counts
            .entry((d.bias_category.clone(), d.polarity, d.language.clone()))
            .or_default() += 1;
    }
    let rows: Vec<StatsRow> = counts
        .into_iter()
        .map(|((category, polarity, language), count)| StatsRow {
            category,
            polarity,
            language,
            count,
        })
        .collect();
    CollectionStats {
        total: c.len(),
        input_total: c.input_count(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_collection, CollectionSpec, Document, PolarityFilter};

    fn d(id: &str, cat: BiasCategory, pol: Polarity, lang: Language) -> Document {
        Document {
            id: id.into(),
            text: "x".into(),
            bias_category: cat,
            polarity: pol,
            source_dataset: "t".into(),
            language: lang,
        }
    }

    fn seven() -> Vec<Document> {
        use BiasCategory::*;
        use Polarity::*;
        vec![
            d("1", Gender, Stereotype, Language::En),
            d("2", Gender, Stereotype, Language::En),
            d("3", Gender, AntiStereotype, Language::En),
            d("4", Age, Stereotype, Language::En),
            d("5", Age, AntiStereotype, Language::Zh),
            d("6", Race, AntiStereotype, Language::Zh),
            d("7", Race, AntiStereotype, Language::En),
        ]
    }

    #[test]
    fn seven_doc_hand_tally() {
        let spec = CollectionSpec::new(
            PolarityFilter::Full,
            [BiasCategory::Gender, BiasCategory::Age, BiasCategory::Race],
            [Language::En, Language::Zh],
        );
        let c = build_collection(&seven(), &spec).unwrap();
        let s = collection_stats(&c);
        // 3 categories x 2 polarities x 2 languages
        assert_eq!(s.rows.len(), 12);
        assert_eq!(s.total, 7);
        assert_eq!(s.rows.iter().map(|r| r.count).sum::<usize>(), 7);
        assert_eq!(s.category_total(&BiasCategory::Gender), 3);
        assert_eq!(s.category_total(&BiasCategory::Age), 2);
        assert_eq!(s.category_total(&BiasCategory::Race), 2);
        assert_eq!(s.polarity_total(Polarity::Stereotype), 3);
        assert_eq!(s.polarity_total(Polarity::AntiStereotype), 4);
        let zh_race_anti = s
            .rows
            .iter()
            .find(|r| r.category == BiasCategory::Race && r.language == Language::Zh && r.polarity == Polarity::AntiStereotype)
            .unwrap();
        assert_eq!(zh_race_anti.count, 1);
    }

    #[test]
    fn requested_category_without_documents_gets_zero_row() {
        let spec = CollectionSpec::new(
            PolarityFilter::Full,
            [BiasCategory::Gender, BiasCategory::Religion],
            [Language::En],
        );
        let c = build_collection(&seven(), &spec).unwrap();
        let s = collection_stats(&c);
        assert_eq!(s.category_total(&BiasCategory::Religion), 0);
        assert!(s.rows.iter().any(|r| r.category == BiasCategory::Religion && r.count == 0));
        assert_eq!(s.input_total, 7);
    }
}
