//! Problem instances: a base network plus every worker's true dataset, and
//! the JSON instance file format.
//!
//! ```json
//! {
//!   "requester": 0,
//!   "edges": [[0, 1], [1, 2]],
//!   "directed": true,
//!   "datasets": {"1": [3, 4], "2": [[0, 2], {"id": 9, "features": [1, 1]}]},
//!   "schema": {"classes": [{"name": "animals", "dim": 3}, {"name": "plants", "dim": 5}]}
//! }
//! ```
//!
//! A dataset entry is an item id, a bare feature row, or an `{id, features}`
//! object. Bare rows are distinct items and receive fresh ids above every
//! explicit id in the file. Undirected edges are expanded into both
//! directions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::network::{Network, NetworkError, Report, ReportProfile, WorkerId};
use crate::valuation::{AtomicDatum, Dataset, FeatureSchema};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("malformed instance: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dataset key {0:?} is not a worker id")]
    BadWorkerKey(String),
    #[error("dataset given for the requester")]
    RequesterData,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub network: Network,
    pub datasets: BTreeMap<WorkerId, Dataset>,
    pub schema: Option<FeatureSchema>,
}

static EMPTY: Dataset = Dataset::new();

impl Instance {
    pub fn new(network: Network, datasets: BTreeMap<WorkerId, Dataset>) -> Self {
        Instance {
            network,
            datasets,
            schema: None,
        }
    }

    /// True dataset of a worker (empty if none was given).
    pub fn dataset(&self, w: WorkerId) -> &Dataset {
        self.datasets.get(&w).unwrap_or(&EMPTY)
    }

    /// Every worker reachable from the requester reports its full dataset
    /// and invites all of its children; unreachable workers stay nil.
    pub fn truthful_profile(&self) -> ReportProfile {
        let s = self.network.requester();
        let reach = self.network.reachable();
        let mut p = ReportProfile::new();
        for w in self.network.workers().filter(|w| reach.contains(w)) {
            let children = self.network.children(w).iter().copied().filter(|&c| c != s);
            p.set(w, Some(Report::new(self.dataset(w).clone(), children)));
        }
        p
    }

    /// Union of every worker's true data.
    pub fn all_data(&self) -> Dataset {
        let mut out = Dataset::new();
        for d in self.datasets.values() {
            out.extend_from(d);
        }
        out
    }

    pub fn from_json_str(s: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(s)?;
        file.into_instance()
    }

    pub fn from_path(path: &Path) -> Result<Self, InstanceError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> InstanceFile {
        let datasets = self
            .datasets
            .iter()
            .map(|(w, d)| {
                let items = d
                    .iter()
                    .map(|x| match &x.features {
                        None => DatumSpec::Id(x.id.0),
                        Some(_) => DatumSpec::Full(x.clone()),
                    })
                    .collect();
                (w.0.to_string(), items)
            })
            .collect();
        InstanceFile {
            requester: self.network.requester().0,
            edges: self.network.edges().map(|(a, b)| (a.0, b.0)).collect(),
            directed: true,
            workers: self.network.workers().map(|w| w.0).collect(),
            datasets,
            schema: self.schema.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("instance serializes")
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatumSpec {
    Id(u64),
    Row(Vec<u32>),
    Full(AtomicDatum),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub requester: u32,
    #[serde(default)]
    pub edges: Vec<(u32, u32)>,
    #[serde(default = "default_directed")]
    pub directed: bool,
    /// Isolated vertices or vertices known only by id.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workers: Vec<u32>,
    #[serde(default)]
    pub datasets: BTreeMap<String, Vec<DatumSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<FeatureSchema>,
}

fn default_directed() -> bool {
    true
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<Instance, InstanceError> {
        let s = WorkerId(self.requester);
        let mut keyed: Vec<(WorkerId, Vec<DatumSpec>)> = Vec::new();
        for (k, items) in self.datasets {
            let id: u32 = k
                .trim()
                .parse()
                .map_err(|_| InstanceError::BadWorkerKey(k.clone()))?;
            if id == self.requester {
                return Err(InstanceError::RequesterData);
            }
            keyed.push((WorkerId(id), items));
        }
        keyed.sort_by_key(|(w, _)| *w);

        let mut next_id = keyed
            .iter()
            .flat_map(|(_, items)| items)
            .filter_map(|d| match d {
                DatumSpec::Id(i) => Some(*i),
                DatumSpec::Full(a) => Some(a.id.0),
                DatumSpec::Row(_) => None,
            })
            .max()
            .map_or(0, |m| m + 1);
        let mut datasets = BTreeMap::new();
        for (w, items) in &keyed {
            let ds: Dataset = items
                .iter()
                .map(|d| match d {
                    DatumSpec::Id(i) => AtomicDatum::new(*i),
                    DatumSpec::Full(a) => a.clone(),
                    DatumSpec::Row(r) => {
                        next_id += 1;
                        AtomicDatum::with_features(next_id - 1, r.clone())
                    }
                })
                .collect();
            datasets.insert(*w, ds);
        }

        let mut edges: BTreeSet<(WorkerId, WorkerId)> = BTreeSet::new();
        for &(a, b) in &self.edges {
            edges.insert((WorkerId(a), WorkerId(b)));
            if !self.directed {
                edges.insert((WorkerId(b), WorkerId(a)));
            }
        }
        let extra = self
            .workers
            .iter()
            .map(|&w| WorkerId(w))
            .chain(keyed.iter().map(|(w, _)| *w))
            .chain(std::iter::once(s));
        let network = Network::from_edges(s, edges, extra)?;
        Ok(Instance {
            network,
            datasets,
            schema: self.schema,
        })
    }
}
