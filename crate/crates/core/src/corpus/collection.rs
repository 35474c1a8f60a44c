use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BiasCategory, Document, Language, Polarity};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, sha256_parts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarityFilter {
    Full,
    StereoOnly,
    AntiOnly,
    Mixture,
}

impl fmt::Display for PolarityFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PolarityFilter::Full => "full",
            PolarityFilter::StereoOnly => "stereo_only",
            PolarityFilter::AntiOnly => "anti_only",
            PolarityFilter::Mixture => "mixture",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSpec {
    pub polarity_filter: PolarityFilter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_stereo_fraction: Option<f64>,
    pub categories: BTreeSet<BiasCategory>,
    pub languages: BTreeSet<Language>,
    #[serde(default)]
    pub seed: u64,
}

impl CollectionSpec {
    pub fn new(
        polarity_filter: PolarityFilter,
        categories: impl IntoIterator<Item = BiasCategory>,
        languages: impl IntoIterator<Item = Language>,
    ) -> Self {
        CollectionSpec {
            polarity_filter,
            mixture_stereo_fraction: None,
            categories: categories.into_iter().collect(),
            languages: languages.into_iter().collect(),
            seed: 0,
        }
    }

    pub fn mixture(
        stereo_fraction: f64,
        categories: impl IntoIterator<Item = BiasCategory>,
        languages: impl IntoIterator<Item = Language>,
        seed: u64,
    ) -> Self {
        CollectionSpec {
            polarity_filter: PolarityFilter::Mixture,
            mixture_stereo_fraction: Some(stereo_fraction),
            categories: categories.into_iter().collect(),
            languages: languages.into_iter().collect(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.polarity_filter, self.mixture_stereo_fraction) {
            (PolarityFilter::Mixture, None) => {
                return Err(Error::Config("mixture filter requires mixture_stereo_fraction".into()))
            }
            (PolarityFilter::Mixture, Some(f)) if !(0.0..=1.0).contains(&f) => {
                return Err(Error::Config(format!("mixture_stereo_fraction {f} outside [0, 1]")))
            }
            (PolarityFilter::Mixture, Some(_)) => {}
            (other, Some(_)) => {
                return Err(Error::Config(format!(
                    "mixture_stereo_fraction is only valid for the mixture filter, not `{other}`"
                )))
            }
            (_, None) => {}
        }
        if self.categories.is_empty() {
            return Err(Error::Config("collection spec lists no categories".into()));
        }
        if self.languages.is_empty() {
            return Err(Error::Config("collection spec lists no languages".into()));
        }
        Ok(())
    }

    /// Category and language predicate shared by every polarity filter.
    pub fn admits_scope(&self, doc: &Document) -> bool {
        self.categories.contains(&doc.bias_category) && self.languages.contains(&doc.language)
    }

    /// Full predicate a member of the resulting collection must satisfy.
    pub fn admits(&self, doc: &Document) -> bool {
        self.admits_scope(doc)
            && match self.polarity_filter {
                PolarityFilter::StereoOnly => doc.polarity == Polarity::Stereotype,
                PolarityFilter::AntiOnly => doc.polarity == Polarity::AntiStereotype,
                PolarityFilter::Full | PolarityFilter::Mixture => true,
            }
    }

    fn describe(&self) -> String {
        let cats: Vec<String> = self.categories.iter().map(|c| c.to_string()).collect();
        let langs: Vec<String> = self.languages.iter().map(|l| l.to_string()).collect();
        let mut s = format!(
            "{} categories=[{}] languages=[{}]",
            self.polarity_filter,
            cats.join(","),
            langs.join(",")
        );
        if let Some(f) = self.mixture_stereo_fraction {
            s.push_str(&format!(" stereo_fraction={f}"));
        }
        s
    }
}

/// An immutable, id-sorted set of documents selected by a [`CollectionSpec`].
#[derive(Debug, Clone)]
pub struct Collection {
    documents: Vec<Document>,
    spec: CollectionSpec,
    fingerprint: String,
    input_count: usize,
    by_id: HashMap<String, usize>,
}

impl Collection {
    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn spec(&self) -> &CollectionSpec {
        &self.spec
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Number of documents offered to the builder before any filtering.
    pub fn input_count(&self) -> usize {
        self.input_count
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn stereo_fraction(&self) -> f64 {
        if self.documents.is_empty() {
            return 0.0;
        }
        let stereo = self
            .documents
            .iter()
            .filter(|d| d.polarity == Polarity::Stereotype)
            .count();
        stereo as f64 / self.documents.len() as f64
    }
}

fn fingerprint(docs: &[Document], spec: &CollectionSpec) -> String {
    let spec_json = serde_json::to_string(spec).expect("spec serializes");
    sha256_parts(
        docs.iter()
            .map(|d| d.id.as_bytes())
            .chain(std::iter::once(spec_json.as_bytes())),
    )
}

/// Select documents according to `spec`.
///
/// Mixtures are drawn from seeded permutations of the id-sorted stereotype and
/// anti-stereotype pools. The full anti pool is kept and a prefix of the
/// stereotype permutation is added; when the stereotype pool is too small for
/// the target, the whole stereotype pool is kept and the anti pool is
/// subsampled instead. Because prefixes come from the same permutations,
/// mixtures built with one seed are nested as the target fraction changes.
pub fn build_collection(docs: &[Document], spec: &CollectionSpec) -> Result<Collection> {
    spec.validate()?;
    if docs.is_empty() {
        return Err(Error::Input("cannot build a collection from zero documents".into()));
    }

    let mut pool: Vec<&Document> = docs.iter().filter(|d| spec.admits_scope(d)).collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));

    let mut selected: Vec<&Document> = match spec.polarity_filter {
        PolarityFilter::Full => pool,
        PolarityFilter::StereoOnly | PolarityFilter::AntiOnly => {
            pool.into_iter().filter(|d| spec.admits(d)).collect()
        }
        PolarityFilter::Mixture => {
            let fraction = spec.mixture_stereo_fraction.expect("validated");
            mix(pool, fraction, spec.seed)?
        }
    };

    if selected.is_empty() {
        return Err(Error::EmptyCollection {
            filter: spec.describe(),
        });
    }
    selected.sort_by(|a, b| a.id.cmp(&b.id));
    let documents: Vec<Document> = selected.into_iter().cloned().collect();
    super::ensure_unique_ids(&documents)?;

    let by_id = documents
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.clone(), i))
        .collect();
    Ok(Collection {
        fingerprint: fingerprint(&documents, spec),
        documents,
        spec: spec.clone(),
        input_count: docs.len(),
        by_id,
    })
}

fn mix(pool: Vec<&Document>, fraction: f64, seed: u64) -> Result<Vec<&Document>> {
    let (mut stereo, mut anti): (Vec<&Document>, Vec<&Document>) =
        pool.into_iter().partition(|d| d.polarity == Polarity::Stereotype);
    stereo.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)));
    anti.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)));

    let n_stereo = stereo.len();
    let n_anti = anti.len();
    let unreachable = |min: f64, max: f64| Error::UnreachableMixture {
        requested: fraction,
        min_achievable: min,
        max_achievable: max,
    };
    if n_stereo + n_anti == 0 {
        return Ok(Vec::new());
    }
    if n_stereo == 0 && fraction > 0.0 {
        return Err(unreachable(0.0, 0.0));
    }
    if n_anti == 0 && fraction < 1.0 {
        return Err(unreachable(1.0, 1.0));
    }

    let (take_stereo, take_anti) = if fraction >= 1.0 {
        (n_stereo, 0)
    } else {
        let wanted = (fraction * n_anti as f64 / (1.0 - fraction)).round() as usize;
        if wanted <= n_stereo {
            (wanted, n_anti)
        } else {
            let anti = (n_stereo as f64 * (1.0 - fraction) / fraction).round() as usize;
            (n_stereo, anti.min(n_anti))
        }
    };

    let mut out: Vec<&Document> = stereo.into_iter().take(take_stereo).collect();
    out.extend(anti.into_iter().take(take_anti));
    Ok(out)
}
