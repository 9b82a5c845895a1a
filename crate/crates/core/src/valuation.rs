//! Datasets and valuation functions.
//!
//! A [`Valuation`] maps a set of atomic data items to a nonnegative real. The
//! allocation and mechanism code only sees this trait, so any valuation can be
//! plugged in. Two concrete ones are provided: [`CoverageValuation`] counts
//! distinct items, and [`EntropyValuation`] sums the per-class empirical
//! entropies of feature-vectored items.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValuationError {
    #[error("datum {id} has no feature vector")]
    MissingFeatures { id: DatumId },
    #[error("datum {id} has {got} features, schema declares {expected} classes")]
    FeatureArity {
        id: DatumId,
        got: usize,
        expected: usize,
    },
    #[error("datum {id}: feature {value} out of range for class {class} (dim {dim})")]
    FeatureOutOfRange {
        id: DatumId,
        class: usize,
        value: u32,
        dim: usize,
    },
    #[error("datum {id} outside universe of size {universe}")]
    InvalidDatum { id: DatumId, universe: u64 },
    #[error("invalid feature schema: {0}")]
    InvalidSchema(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatumId(pub u64);

impl fmt::Display for DatumId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

/// One indivisible piece of data, e.g. a single image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicDatum {
    pub id: DatumId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<u32>>,
}

impl AtomicDatum {
    pub fn new(id: u64) -> Self {
        AtomicDatum {
            id: DatumId(id),
            features: None,
        }
    }

    pub fn with_features(id: u64, features: Vec<u32>) -> Self {
        AtomicDatum {
            id: DatumId(id),
            features: Some(features),
        }
    }
}

/// A set of atomic data keyed by id. Set operations compare ids only.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<AtomicDatum>", into = "Vec<AtomicDatum>")]
pub struct Dataset {
    items: BTreeMap<DatumId, AtomicDatum>,
}

impl Dataset {
    pub const fn new() -> Self {
        Dataset {
            items: BTreeMap::new(),
        }
    }

    pub fn from_ids<I: IntoIterator<Item = u64>>(ids: I) -> Self {
        ids.into_iter().map(AtomicDatum::new).collect()
    }

    /// Inserts a datum; returns false (and keeps the existing entry) if the
    /// id is already present.
    pub fn insert(&mut self, datum: AtomicDatum) -> bool {
        use std::collections::btree_map::Entry;
        match self.items.entry(datum.id) {
            Entry::Vacant(e) => {
                e.insert(datum);
                true
            }
            Entry::Occupied(_) => false,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, id: DatumId) -> bool {
        self.items.contains_key(&id)
    }

    pub fn get(&self, id: DatumId) -> Option<&AtomicDatum> {
        self.items.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AtomicDatum> + '_ {
        self.items.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = DatumId> + '_ {
        self.items.keys().copied()
    }

    pub fn is_subset_of(&self, other: &Dataset) -> bool {
        self.items.keys().all(|id| other.items.contains_key(id))
    }

    pub fn extend_from(&mut self, other: &Dataset) {
        for d in other.iter() {
            self.insert(d.clone());
        }
    }

    pub fn union(&self, other: &Dataset) -> Dataset {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    /// Items selected by a bitmask over `self.iter()` order.
    pub fn select(&self, mask: u64) -> Dataset {
        self.iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, d)| d.clone())
            .collect()
    }
}

impl FromIterator<AtomicDatum> for Dataset {
    fn from_iter<I: IntoIterator<Item = AtomicDatum>>(iter: I) -> Self {
        let mut ds = Dataset::new();
        for d in iter {
            ds.insert(d);
        }
        ds
    }
}

impl From<Vec<AtomicDatum>> for Dataset {
    fn from(v: Vec<AtomicDatum>) -> Self {
        v.into_iter().collect()
    }
}

impl From<Dataset> for Vec<AtomicDatum> {
    fn from(d: Dataset) -> Self {
        d.items.into_values().collect()
    }
}

/// Value of a set of distinct items.
///
/// Implementations should be monotone and bounded with `v(∅) = 0`; the
/// property checkers in [`crate::verify`] rely on that for their bounds.
pub trait Valuation: Send + Sync {
    /// `items` are distinct by id.
    fn value(&self, items: &[&AtomicDatum]) -> Result<f64, ValuationError>;

    fn value_of(&self, data: &Dataset) -> Result<f64, ValuationError> {
        let items: Vec<&AtomicDatum> = data.iter().collect();
        self.value(&items)
    }
}

impl<V: Valuation + ?Sized> Valuation for &V {
    fn value(&self, items: &[&AtomicDatum]) -> Result<f64, ValuationError> {
        (**self).value(items)
    }
}

impl<V: Valuation + ?Sized> Valuation for Box<V> {
    fn value(&self, items: &[&AtomicDatum]) -> Result<f64, ValuationError> {
        (**self).value(items)
    }
}

/// Number of distinct items, with ids restricted to `0..universe_size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageValuation {
    pub universe_size: u64,
}

impl CoverageValuation {
    pub fn new(universe_size: u64) -> Self {
        CoverageValuation { universe_size }
    }
}

impl Valuation for CoverageValuation {
    fn value(&self, items: &[&AtomicDatum]) -> Result<f64, ValuationError> {
        if let Some(bad) = items.iter().find(|d| d.id.0 >= self.universe_size) {
            return Err(ValuationError::InvalidDatum {
                id: bad.id,
                universe: self.universe_size,
            });
        }
        Ok(items.len() as f64)
    }
}

pub fn coverage_valuation(dataset: &Dataset, universe_size: u64) -> Result<f64, ValuationError> {
    CoverageValuation::new(universe_size).value_of(dataset)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureClass {
    pub name: String,
    pub dim: usize,
}

/// `m` independent target classes, each with a finite feature space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct FeatureSchema {
    classes: Vec<FeatureClass>,
}

#[derive(Deserialize)]
struct RawSchema {
    classes: Vec<FeatureClass>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = ValuationError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        FeatureSchema::new(raw.classes)
    }
}

impl FeatureSchema {
    pub fn new(classes: Vec<FeatureClass>) -> Result<Self, ValuationError> {
        if classes.is_empty() {
            return Err(ValuationError::InvalidSchema(
                "at least one class is required".into(),
            ));
        }
        if let Some(c) = classes.iter().find(|c| c.dim == 0) {
            return Err(ValuationError::InvalidSchema(format!(
                "class {:?} has an empty feature space",
                c.name
            )));
        }
        Ok(FeatureSchema { classes })
    }

    /// Convenience constructor from `(name, dim)` pairs.
    pub fn from_dims<'a, I: IntoIterator<Item = (&'a str, usize)>>(
        dims: I,
    ) -> Result<Self, ValuationError> {
        Self::new(
            dims.into_iter()
                .map(|(name, dim)| FeatureClass {
                    name: name.to_string(),
                    dim,
                })
                .collect(),
        )
    }

    pub fn classes(&self) -> &[FeatureClass] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// `Σ_j log₂|X^j|`, the largest value the entropy valuation can reach.
    pub fn max_entropy(&self) -> f64 {
        self.classes.iter().map(|c| (c.dim as f64).log2()).sum()
    }

    fn check(&self, d: &AtomicDatum) -> Result<(), ValuationError> {
        let features = d
            .features
            .as_ref()
            .ok_or(ValuationError::MissingFeatures { id: d.id })?;
        if features.len() != self.classes.len() {
            return Err(ValuationError::FeatureArity {
                id: d.id,
                got: features.len(),
                expected: self.classes.len(),
            });
        }
        for (class, (&x, c)) in features.iter().zip(&self.classes).enumerate() {
            if x as usize >= c.dim {
                return Err(ValuationError::FeatureOutOfRange {
                    id: d.id,
                    class,
                    value: x,
                    dim: c.dim,
                });
            }
        }
        Ok(())
    }
}

/// Per-class empirical feature distributions of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub per_class: Vec<Vec<f64>>,
    /// Set for the empty dataset, whose vectors are all zero.
    pub empty: bool,
}

fn class_counts(
    items: &[&AtomicDatum],
    schema: &FeatureSchema,
) -> Result<Vec<Vec<u32>>, ValuationError> {
    let mut counts: Vec<Vec<u32>> = schema.classes.iter().map(|c| vec![0; c.dim]).collect();
    for d in items {
        schema.check(d)?;
        // check() guarantees features are present and in range
        for (j, &x) in d.features.as_ref().unwrap().iter().enumerate() {
            counts[j][x as usize] += 1;
        }
    }
    Ok(counts)
}

pub fn distribution(
    dataset: &Dataset,
    schema: &FeatureSchema,
) -> Result<Distribution, ValuationError> {
    let items: Vec<&AtomicDatum> = dataset.iter().collect();
    let counts = class_counts(&items, schema)?;
    let n = items.len() as f64;
    let per_class = counts
        .into_iter()
        .map(|c| {
            c.into_iter()
                .map(|k| if n > 0.0 { k as f64 / n } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(Distribution {
        per_class,
        empty: items.is_empty(),
    })
}

/// Shannon entropy in bits of a count vector; zero counts contribute nothing.
fn entropy_bits(counts: &[u32], total: u32) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Joint entropy over independent classes: `v(D) = Σ_j H(q^j)` in bits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntropyValuation {
    pub schema: FeatureSchema,
}

impl EntropyValuation {
    pub fn new(schema: FeatureSchema) -> Self {
        EntropyValuation { schema }
    }
}

impl Valuation for EntropyValuation {
    fn value(&self, items: &[&AtomicDatum]) -> Result<f64, ValuationError> {
        let counts = class_counts(items, &self.schema)?;
        let total = items.len() as u32;
        Ok(counts.iter().map(|c| entropy_bits(c, total)).sum())
    }
}

pub fn entropy_valuation(dataset: &Dataset, schema: &FeatureSchema) -> Result<f64, ValuationError> {
    EntropyValuation::new(schema.clone()).value_of(dataset)
}

/// Wraps a closure over item slices. Handy for synthetic set functions.
pub struct FnValuation<F>(pub F);

impl<F> Valuation for FnValuation<F>
where
    F: Fn(&[&AtomicDatum]) -> f64 + Send + Sync,
{
    fn value(&self, items: &[&AtomicDatum]) -> Result<f64, ValuationError> {
        Ok((self.0)(items))
    }
}

/// Memoizing wrapper keyed by the sorted id set.
///
/// The cache is cleared wholesale when it reaches `capacity` entries.
pub struct Memoized<V> {
    inner: V,
    capacity: usize,
    cache: Mutex<HashMap<Vec<u64>, f64>>,
}

impl<V: Valuation> Memoized<V> {
    pub fn new(inner: V, capacity: usize) -> Self {
        Memoized {
            inner,
            capacity: capacity.max(1),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &V {
        &self.inner
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }
}

impl<V: Valuation> Valuation for Memoized<V> {
    fn value(&self, items: &[&AtomicDatum]) -> Result<f64, ValuationError> {
        let mut key: Vec<u64> = items.iter().map(|d| d.id.0).collect();
        key.sort_unstable();
        if let Some(&v) = self.cache.lock().unwrap().get(&key) {
            return Ok(v);
        }
        let v = self.inner.value(items)?;
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= self.capacity {
            cache.clear();
        }
        cache.insert(key, v);
        Ok(v)
    }
}
