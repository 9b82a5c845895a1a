//! Standard and layered Shapley values over datasets.
//!
//! Within a layer every coalition is evaluated on top of the union of all
//! shallower layers' data. The exact path tabulates `v(prior ∪ D_S)` for every
//! subset `S` of the layer, walking subsets in Gray-code order so each step
//! adds or removes a single worker's data; the sampled path averages marginal
//! contributions over seeded random orderings of the layer.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{LayeredDag, WorkerId};
use crate::par::{self, Execution};
use crate::valuation::{AtomicDatum, Dataset, DatumId, Valuation, ValuationError};

/// Largest coalition (layer) evaluated by full subset enumeration.
pub const EXACT_CAP: usize = 20;

/// Layers narrower than this are tabulated on the calling thread.
const PAR_MIN_WIDTH: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("coalition of {size} workers exceeds the exact cap of {cap}; enable sampling")]
    Capacity { size: usize, cap: usize },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error(transparent)]
    Valuation(#[from] ValuationError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

/// Per-worker data contribution (`φ_i` or `φ̂_i`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataContribution {
    pub values: BTreeMap<WorkerId, f64>,
    pub method: Method,
}

impl DataContribution {
    pub fn get(&self, w: WorkerId) -> f64 {
        self.values.get(&w).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.values.values().sum()
    }
}

/// Dense local indexing of every datum a layer computation can touch.
struct Pool<'a> {
    items: Vec<&'a AtomicDatum>,
    prior: Vec<u32>,
    members: Vec<Vec<usize>>,
}

impl<'a> Pool<'a> {
    fn new(prior: &'a Dataset, members: &[&'a Dataset]) -> Self {
        let mut index: HashMap<DatumId, usize> = HashMap::new();
        let mut items = Vec::new();
        let mut intern = |d: &'a AtomicDatum| {
            *index.entry(d.id).or_insert_with(|| {
                items.push(d);
                items.len() - 1
            })
        };
        let prior_idx: Vec<usize> = prior.iter().map(&mut intern).collect();
        let members: Vec<Vec<usize>> = members
            .iter()
            .map(|ds| ds.iter().map(&mut intern).collect())
            .collect();
        let mut prior_counts = vec![0u32; items.len()];
        for i in prior_idx {
            prior_counts[i] = 1;
        }
        Pool {
            items,
            prior: prior_counts,
            members,
        }
    }

    fn walker(&self) -> Walker<'_, 'a> {
        Walker {
            pool: self,
            counts: self.prior.clone(),
            scratch: Vec::with_capacity(self.items.len()),
        }
    }
}

/// Multiset union of the prior data and a changing coalition.
struct Walker<'p, 'a> {
    pool: &'p Pool<'a>,
    counts: Vec<u32>,
    scratch: Vec<&'a AtomicDatum>,
}

impl Walker<'_, '_> {
    fn reset(&mut self, mask: u64) {
        self.counts.copy_from_slice(&self.pool.prior);
        for m in 0..self.pool.members.len() {
            if mask >> m & 1 == 1 {
                self.add(m);
            }
        }
    }

    fn add(&mut self, m: usize) {
        for &i in &self.pool.members[m] {
            self.counts[i] += 1;
        }
    }

    fn remove(&mut self, m: usize) {
        for &i in &self.pool.members[m] {
            self.counts[i] -= 1;
        }
    }

    fn value(&mut self, v: &dyn Valuation) -> Result<f64, ValuationError> {
        self.scratch.clear();
        self.scratch.extend(
            self.counts
                .iter()
                .zip(&self.pool.items)
                .filter(|(&c, _)| c > 0)
                .map(|(_, &d)| d),
        );
        v.value(&self.scratch)
    }
}

fn gray(i: u64) -> u64 {
    i ^ (i >> 1)
}

/// `table[mask] = v(prior ∪ D_mask)` for every subset of the members.
fn subset_table(
    pool: &Pool<'_>,
    v: &dyn Valuation,
    exec: Execution,
) -> Result<Vec<f64>, ValuationError> {
    let k = pool.members.len();
    let n: u64 = 1 << k;
    let exec = if k >= PAR_MIN_WIDTH {
        exec
    } else {
        Execution::Sequential
    };
    let chunks: u64 = if exec.is_parallel() {
        1 << (k - 8).min(10)
    } else {
        1
    };
    let chunk_len = n / chunks;
    let parts = par::map_range(exec, chunks as usize, |c| {
        let start = c as u64 * chunk_len;
        let end = start + chunk_len;
        let mut walker = pool.walker();
        walker.reset(gray(start));
        let mut out = Vec::with_capacity(chunk_len as usize);
        for i in start..end {
            out.push(walker.value(v)?);
            if i + 1 < end {
                let bit = (i + 1).trailing_zeros() as usize;
                if gray(i + 1) >> bit & 1 == 1 {
                    walker.add(bit);
                } else {
                    walker.remove(bit);
                }
            }
        }
        Ok::<_, ValuationError>((start, out))
    });
    let mut table = vec![0.0; n as usize];
    for part in parts {
        let (start, values) = part?;
        for (off, val) in values.into_iter().enumerate() {
            table[gray(start + off as u64) as usize] = val;
        }
    }
    Ok(table)
}

/// `1 / (k · C(k-1, s))`, the Shapley weight of a coalition of size `s`.
fn shapley_weights(k: usize) -> Vec<f64> {
    let mut binom = 1.0f64;
    (0..k)
        .map(|s| {
            if s > 0 {
                binom = binom * (k - s) as f64 / s as f64;
            }
            1.0 / (k as f64 * binom)
        })
        .collect()
}

fn exact_values(
    prior: &Dataset,
    members: &[&Dataset],
    v: &dyn Valuation,
    exec: Execution,
) -> Result<Vec<f64>, AllocationError> {
    let k = members.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    if k > EXACT_CAP {
        return Err(AllocationError::Capacity {
            size: k,
            cap: EXACT_CAP,
        });
    }
    let pool = Pool::new(prior, members);
    let table = subset_table(&pool, v, exec)?;
    let weights = shapley_weights(k);
    let exec = if k >= PAR_MIN_WIDTH {
        exec
    } else {
        Execution::Sequential
    };
    Ok(par::map_range(exec, k, |i| {
        let bit = 1usize << i;
        // group by coalition size so each weight multiplies one partial sum
        let mut by_size = vec![0.0f64; k];
        for mask in (0..table.len()).filter(|m| m & bit == 0) {
            by_size[mask.count_ones() as usize] += table[mask | bit] - table[mask];
        }
        by_size.iter().zip(&weights).map(|(s, w)| s * w).sum()
    }))
}

fn sample_seed(seed: u64, layer: usize, sample: usize) -> u64 {
    // splitmix64 finaliser over the three coordinates
    let mut z = seed
        ^ (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (sample as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sampled_values(
    prior: &Dataset,
    members: &[&Dataset],
    v: &dyn Valuation,
    samples: usize,
    seed: u64,
    layer: usize,
    exec: Execution,
) -> Result<Vec<f64>, AllocationError> {
    if samples == 0 {
        return Err(AllocationError::NoSamples);
    }
    let k = members.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let pool = Pool::new(prior, members);
    let per_sample = par::map_range(exec, samples, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, layer, t));
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut walker = pool.walker();
        let mut prev = walker.value(v)?;
        let mut marginal = vec![0.0; k];
        for m in order {
            walker.add(m);
            let cur = walker.value(v)?;
            marginal[m] = cur - prev;
            prev = cur;
        }
        Ok::<_, ValuationError>(marginal)
    });
    // summed in sample order, so the result does not depend on `exec`
    let mut acc = vec![0.0; k];
    for marginal in per_sample {
        for (a, m) in acc.iter_mut().zip(marginal?) {
            *a += m;
        }
    }
    Ok(acc.into_iter().map(|a| a / samples as f64).collect())
}

fn dataset_of<'a>(
    datasets: &'a BTreeMap<WorkerId, Dataset>,
    w: WorkerId,
    empty: &'a Dataset,
) -> &'a Dataset {
    datasets.get(&w).unwrap_or(empty)
}

/// Standard Shapley value of each worker over the whole coalition (exact).
pub fn shapley(
    workers: &[WorkerId],
    datasets: &BTreeMap<WorkerId, Dataset>,
    v: &dyn Valuation,
) -> Result<DataContribution, AllocationError> {
    shapley_with(workers, datasets, v, None, Execution::default())
}

/// Standard Shapley value; coalitions over [`EXACT_CAP`] fall back to
/// `sampling` when given.
pub fn shapley_with(
    workers: &[WorkerId],
    datasets: &BTreeMap<WorkerId, Dataset>,
    v: &dyn Valuation,
    sampling: Option<(usize, u64)>,
    exec: Execution,
) -> Result<DataContribution, AllocationError> {
    let empty = Dataset::new();
    let members: Vec<&Dataset> = workers
        .iter()
        .map(|&w| dataset_of(datasets, w, &empty))
        .collect();
    let (vals, method) = match sampling {
        Some((samples, seed)) if workers.len() > EXACT_CAP => (
            sampled_values(&empty, &members, v, samples, seed, 0, exec)?,
            Method::Sampled { samples, seed },
        ),
        _ => (exact_values(&empty, &members, v, exec)?, Method::Exact),
    };
    Ok(DataContribution {
        values: workers.iter().copied().zip(vals).collect(),
        method,
    })
}

/// How each layer of a layered computation is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerEstimator {
    /// Exact; layers over the cap are an error.
    Exact,
    /// Exact up to the cap, sampled beyond it.
    ExactOrSampled { samples: usize, seed: u64 },
    /// Sampled for every layer.
    Sampled { samples: usize, seed: u64 },
}

/// Layered Shapley values, exact, with the default execution mode.
///
/// Workers without an entry in `datasets` hold no data.
pub fn layered_shapley(
    dag: &LayeredDag,
    datasets: &BTreeMap<WorkerId, Dataset>,
    v: &dyn Valuation,
) -> Result<DataContribution, AllocationError> {
    layered_shapley_with(
        dag,
        datasets,
        v,
        LayerEstimator::Exact,
        Execution::default(),
    )
}

/// Monte-Carlo layered Shapley values from `samples` random orderings per
/// layer. Deterministic for a given seed.
pub fn sampled_layered_shapley(
    dag: &LayeredDag,
    datasets: &BTreeMap<WorkerId, Dataset>,
    v: &dyn Valuation,
    samples: usize,
    seed: u64,
) -> Result<DataContribution, AllocationError> {
    layered_shapley_with(
        dag,
        datasets,
        v,
        LayerEstimator::Sampled { samples, seed },
        Execution::default(),
    )
}

pub fn layered_shapley_with(
    dag: &LayeredDag,
    datasets: &BTreeMap<WorkerId, Dataset>,
    v: &dyn Valuation,
    estimator: LayerEstimator,
    exec: Execution,
) -> Result<DataContribution, AllocationError> {
    let empty = Dataset::new();
    let mut prior = Dataset::new();
    let mut values = BTreeMap::new();
    let mut sampled = false;
    for (li, layer) in dag.layers().iter().enumerate() {
        let members: Vec<&Dataset> = layer
            .iter()
            .map(|&w| dataset_of(datasets, w, &empty))
            .collect();
        let vals = match estimator {
            LayerEstimator::Exact => exact_values(&prior, &members, v, exec)?,
            LayerEstimator::ExactOrSampled { samples, seed } if layer.len() > EXACT_CAP => {
                sampled = true;
                sampled_values(&prior, &members, v, samples, seed, li, exec)?
            }
            LayerEstimator::ExactOrSampled { .. } => exact_values(&prior, &members, v, exec)?,
            LayerEstimator::Sampled { samples, seed } => {
                sampled = true;
                sampled_values(&prior, &members, v, samples, seed, li, exec)?
            }
        };
        values.extend(layer.iter().copied().zip(vals));
        for d in members {
            prior.extend_from(d);
        }
    }
    let method = match estimator {
        LayerEstimator::Sampled { samples, seed }
        | LayerEstimator::ExactOrSampled { samples, seed }
            if sampled =>
        {
            Method::Sampled { samples, seed }
        }
        _ => Method::Exact,
    };
    Ok(DataContribution { values, method })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::layerize;
    use crate::network::tests::{ten_worker_dag, net, w};
    use crate::valuation::{CoverageValuation, FnValuation};

    fn data(pairs: &[(u32, &[u64])]) -> BTreeMap<WorkerId, Dataset> {
        pairs
            .iter()
            .map(|&(x, ids)| (w(x), Dataset::from_ids(ids.iter().copied())))
            .collect()
    }

    /// Average marginal contribution over all orderings.
    fn permutation_oracle(members: &[&Dataset], prior: &Dataset, v: &dyn Valuation) -> Vec<f64> {
        fn perms(k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(k - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, k - 1);
                    out.push(q);
                }
            }
            out
        }
        let k = members.len();
        let all = perms(k);
        let mut acc = vec![0.0; k];
        for order in &all {
            let mut cur = prior.clone();
            let mut prev = v.value_of(&cur).unwrap();
            for &m in order {
                cur.extend_from(members[m]);
                let now = v.value_of(&cur).unwrap();
                acc[m] += now - prev;
                prev = now;
            }
        }
        acc.iter().map(|a| a / all.len() as f64).collect()
    }

    #[test]
    fn duplicate_pair_splits_evenly() {
        let ds = data(&[(1, &[1, 2, 3]), (2, &[1, 2, 3])]);
        let phi = shapley(&[w(1), w(2)], &ds, &CoverageValuation::new(10)).unwrap();
        assert_eq!(phi.get(w(1)), 1.5);
        assert_eq!(phi.get(w(2)), 1.5);
    }

    #[test]
    fn singleton_gets_full_value() {
        let ds = data(&[(4, &[0, 5])]);
        let phi = shapley(&[w(4)], &ds, &CoverageValuation::new(10)).unwrap();
        assert_eq!(phi.get(w(4)), 2.0);
    }

    #[test]
    fn disjoint_trio_matches_permutation_oracle() {
        let ds = data(&[(1, &[0]), (2, &[1, 2]), (3, &[3, 4, 5])]);
        let v = CoverageValuation::new(10);
        let phi = shapley(&[w(1), w(2), w(3)], &ds, &v).unwrap();
        let members: Vec<&Dataset> = [1, 2, 3].iter().map(|&x| &ds[&w(x)]).collect();
        let oracle = permutation_oracle(&members, &Dataset::new(), &v);
        assert_eq!(oracle, vec![1.0, 2.0, 3.0]);
        for (i, x) in [1, 2, 3].into_iter().enumerate() {
            assert!((phi.get(w(x)) - oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn over_cap_requires_sampling() {
        let workers: Vec<WorkerId> = (1..=21).map(w).collect();
        let ds: BTreeMap<_, _> = workers
            .iter()
            .map(|&x| (x, Dataset::from_ids([x.0 as u64])))
            .collect();
        let v = CoverageValuation::new(100);
        assert!(matches!(
            shapley(&workers, &ds, &v),
            Err(AllocationError::Capacity { size: 21, cap: 20 })
        ));
        let phi = shapley_with(&workers, &ds, &v, Some((8, 1)), Execution::default()).unwrap();
        for &x in &workers {
            assert!((phi.get(x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn first_layer_worker_closed_form() {
        let dag = layerize(&ten_worker_dag()).unwrap();
        // one item per first-layer worker, plus deeper workers with data
        let ds = data(&[(1, &[0]), (2, &[1]), (3, &[2]), (5, &[0, 3])]);
        // weighted monotone valuation with an interaction term
        let val = FnValuation(|items: &[&AtomicDatum]| {
            let has = |i| items.iter().any(|d| d.id.0 == i);
            let mut s = 0.0;
            if has(0) {
                s += 3.0;
            }
            if has(1) {
                s += 2.0;
            }
            if has(2) {
                s += 1.5;
            }
            if has(0) && has(1) {
                s += 0.7;
            }
            if has(3) {
                s += 1.0;
            }
            s
        });
        let phi = layered_shapley(&dag, &ds, &val).unwrap();
        let v = |ids: &[u64]| {
            val.value_of(&Dataset::from_ids(ids.iter().copied()))
                .unwrap()
        };
        let closed = (2.0 * v(&[0]) - v(&[1]) - v(&[2]) + v(&[0, 1]) + v(&[0, 2])
            - 2.0 * v(&[1, 2])
            + 2.0 * v(&[0, 1, 2]))
            / 6.0;
        assert!((phi.get(w(1)) - closed).abs() < 1e-12);
    }

    #[test]
    fn fully_redundant_worker_gets_zero() {
        let dag = layerize(&ten_worker_dag()).unwrap();
        let ds = data(&[(1, &[0, 1]), (2, &[2]), (4, &[1]), (9, &[0, 2])]);
        let phi = layered_shapley(&dag, &ds, &CoverageValuation::new(10)).unwrap();
        assert_eq!(phi.get(w(4)), 0.0);
        assert_eq!(phi.get(w(9)), 0.0);
    }

    #[test]
    fn equivalent_workers_get_equal_values() {
        let dag = layerize(&ten_worker_dag()).unwrap();
        let ds = data(&[(1, &[0]), (4, &[1, 2]), (5, &[1, 2]), (6, &[3])]);
        let phi = layered_shapley(&dag, &ds, &CoverageValuation::new(10)).unwrap();
        assert_eq!(phi.get(w(4)), phi.get(w(5)));
        assert_eq!(phi.get(w(4)), 1.0);
    }

    #[test]
    fn layer_efficiency_and_earlier_layers_fixed() {
        let dag = layerize(&ten_worker_dag()).unwrap();
        let ds = data(&[
            (1, &[0, 1]),
            (2, &[1, 2]),
            (3, &[3]),
            (4, &[0, 4]),
            (5, &[4, 5]),
            (7, &[6]),
            (9, &[7, 0]),
        ]);
        let v = CoverageValuation::new(10);
        let phi = layered_shapley(&dag, &ds, &v).unwrap();
        let all: Dataset = ds.values().fold(Dataset::new(), |a, d| a.union(d));
        assert!((phi.total() - v.value_of(&all).unwrap()).abs() < 1e-9);

        // more data in layer 3 leaves layers 1 and 2 untouched
        let mut more = ds.clone();
        more.insert(w(8), Dataset::from_ids([8, 9, 1]));
        let phi2 = layered_shapley(&dag, &more, &v).unwrap();
        for x in 1..=6 {
            assert_eq!(phi.get(w(x)), phi2.get(w(x)));
        }
    }

    #[test]
    fn exact_matches_permutation_oracle_with_prior() {
        let prior = Dataset::from_ids([0, 1]);
        let ds: Vec<Dataset> = vec![
            Dataset::from_ids([0, 2, 3]),
            Dataset::from_ids([2, 4]),
            Dataset::from_ids([5]),
            Dataset::from_ids([3, 4, 5, 6]),
            Dataset::from_ids([1]),
        ];
        let members: Vec<&Dataset> = ds.iter().collect();
        let v = CoverageValuation::new(10);
        let got = exact_values(&prior, &members, &v, Execution::Sequential).unwrap();
        let oracle = permutation_oracle(&members, &prior, &v);
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn wide_layer_parallel_matches_sequential() {
        let ds: Vec<Dataset> = (0..14u64)
            .map(|i| Dataset::from_ids([i % 5, i % 7 + 5, i + 20]))
            .collect();
        let members: Vec<&Dataset> = ds.iter().collect();
        let v = CoverageValuation::new(64);
        let a = exact_values(&Dataset::new(), &members, &v, Execution::Sequential).unwrap();
        let b = exact_values(&Dataset::new(), &members, &v, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let total: f64 = a.iter().sum();
        let all = ds.iter().fold(Dataset::new(), |x, d| x.union(d));
        assert!((total - v.value_of(&all).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn sampled_single_worker_layers_are_exact() {
        let dag = layerize(&net(&[(0, 1), (1, 2), (2, 3)])).unwrap();
        let ds = data(&[(1, &[0, 1]), (2, &[1, 2, 3]), (3, &[0, 4])]);
        let v = CoverageValuation::new(10);
        let s = sampled_layered_shapley(&dag, &ds, &v, 1, 99).unwrap();
        let e = layered_shapley(&dag, &ds, &v).unwrap();
        assert_eq!(s.values, e.values);
        assert_eq!(
            s.method,
            Method::Sampled {
                samples: 1,
                seed: 99
            }
        );
    }

    #[test]
    fn sampled_converges_and_is_deterministic() {
        let dag = layerize(&net(&[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)])).unwrap();
        let ds = data(&[
            (1, &[0, 1, 2]),
            (2, &[1, 2, 3]),
            (3, &[3, 4]),
            (4, &[5]),
            (5, &[0, 5, 6, 7]),
        ]);
        let v = CoverageValuation::new(10);
        let exact = layered_shapley(&dag, &ds, &v).unwrap();
        let s1 = sampled_layered_shapley(&dag, &ds, &v, 20_000, 7).unwrap();
        let s2 = layered_shapley_with(
            &dag,
            &ds,
            &v,
            LayerEstimator::Sampled {
                samples: 20_000,
                seed: 7,
            },
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(s1.values, s2.values);
        for x in 1..=5 {
            let (e, s) = (exact.get(w(x)), s1.get(w(x)));
            assert!(
                (e - s).abs() <= 0.01 * e,
                "worker {x}: exact {e}, sampled {s}"
            );
        }
        assert!(matches!(
            sampled_layered_shapley(&dag, &ds, &v, 0, 7),
            Err(AllocationError::NoSamples)
        ));
    }

    #[test]
    fn weights_sum_to_one_per_size_class() {
        // Σ_s C(k-1, s) · w(s) = 1
        for k in 1..=20 {
            let w = shapley_weights(k);
            let mut binom = 1.0;
            let mut total = 0.0;
            for (s, ws) in w.iter().enumerate() {
                if s > 0 {
                    binom = binom * (k - s) as f64 / s as f64;
                }
                total += binom * ws;
            }
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
