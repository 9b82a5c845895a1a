//! Social graph, report profiles and BFS layering.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::valuation::Dataset;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetworkError {
    #[error("self-loop on {0}")]
    SelfLoop(WorkerId),
    #[error("edge ({0}, {1}) has an undeclared endpoint")]
    UndeclaredEndpoint(WorkerId, WorkerId),
    #[error("requester {0} is not a vertex of the graph")]
    MissingRequester(WorkerId),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid deviation by {worker}: {reason}")]
    InvalidDeviation { worker: WorkerId, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerId(pub u32);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

static NO_NEIGHBOURS: BTreeSet<WorkerId> = BTreeSet::new();

/// Directed graph with a distinguished requester vertex.
///
/// The graph may be arbitrary (cycles, edges into the requester); use
/// [`layerize`] to obtain the single-source DAG the mechanism runs on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    requester: WorkerId,
    nodes: BTreeSet<WorkerId>,
    edges: BTreeSet<(WorkerId, WorkerId)>,
    children: BTreeMap<WorkerId, BTreeSet<WorkerId>>,
    parents: BTreeMap<WorkerId, BTreeSet<WorkerId>>,
}

impl Network {
    /// Builds a network over `requester ∪ workers`. Every edge endpoint must
    /// be declared.
    pub fn new<W, E>(requester: WorkerId, workers: W, edges: E) -> Result<Self, NetworkError>
    where
        W: IntoIterator<Item = WorkerId>,
        E: IntoIterator<Item = (WorkerId, WorkerId)>,
    {
        let mut nodes: BTreeSet<WorkerId> = workers.into_iter().collect();
        nodes.insert(requester);
        let edges: Vec<_> = edges.into_iter().collect();
        for &(a, b) in &edges {
            if !nodes.contains(&a) || !nodes.contains(&b) {
                return Err(NetworkError::UndeclaredEndpoint(a, b));
            }
        }
        Self::assemble(requester, nodes, edges)
    }

    /// Builds a network whose vertex set is exactly the edge endpoints plus
    /// `extra` vertices. The requester is a vertex only if it appears there.
    pub fn from_edges<E, X>(requester: WorkerId, edges: E, extra: X) -> Result<Self, NetworkError>
    where
        E: IntoIterator<Item = (WorkerId, WorkerId)>,
        X: IntoIterator<Item = WorkerId>,
    {
        let edges: Vec<_> = edges.into_iter().collect();
        let mut nodes: BTreeSet<WorkerId> = extra.into_iter().collect();
        for &(a, b) in &edges {
            nodes.insert(a);
            nodes.insert(b);
        }
        Self::assemble(requester, nodes, edges)
    }

    fn assemble(
        requester: WorkerId,
        nodes: BTreeSet<WorkerId>,
        edge_list: Vec<(WorkerId, WorkerId)>,
    ) -> Result<Self, NetworkError> {
        let mut edges = BTreeSet::new();
        let mut children: BTreeMap<WorkerId, BTreeSet<WorkerId>> = BTreeMap::new();
        let mut parents: BTreeMap<WorkerId, BTreeSet<WorkerId>> = BTreeMap::new();
        for (a, b) in edge_list {
            if a == b {
                return Err(NetworkError::SelfLoop(a));
            }
            edges.insert((a, b));
            children.entry(a).or_default().insert(b);
            parents.entry(b).or_default().insert(a);
        }
        Ok(Network {
            requester,
            nodes,
            edges,
            children,
            parents,
        })
    }

    pub fn requester(&self) -> WorkerId {
        self.requester
    }

    pub fn has_requester(&self) -> bool {
        self.nodes.contains(&self.requester)
    }

    pub fn contains(&self, id: WorkerId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn is_worker(&self, id: WorkerId) -> bool {
        id != self.requester && self.nodes.contains(&id)
    }

    /// All vertices other than the requester.
    pub fn workers(&self) -> impl Iterator<Item = WorkerId> + '_ {
        let s = self.requester;
        self.nodes.iter().copied().filter(move |&w| w != s)
    }

    pub fn num_workers(&self) -> usize {
        self.workers().count()
    }

    pub fn edges(&self) -> impl Iterator<Item = (WorkerId, WorkerId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: WorkerId, b: WorkerId) -> bool {
        self.edges.contains(&(a, b))
    }

    pub fn children(&self, id: WorkerId) -> &BTreeSet<WorkerId> {
        self.children.get(&id).unwrap_or(&NO_NEIGHBOURS)
    }

    pub fn parents(&self, id: WorkerId) -> &BTreeSet<WorkerId> {
        self.parents.get(&id).unwrap_or(&NO_NEIGHBOURS)
    }

    /// Shortest-path distances from the requester; unreachable vertices are
    /// absent.
    pub fn bfs_depths(&self) -> BTreeMap<WorkerId, usize> {
        let mut depth = BTreeMap::new();
        if !self.has_requester() {
            return depth;
        }
        depth.insert(self.requester, 0);
        let mut queue = VecDeque::from([self.requester]);
        while let Some(u) = queue.pop_front() {
            let d = depth[&u];
            for &c in self.children(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = depth.entry(c) {
                    e.insert(d + 1);
                    queue.push_back(c);
                }
            }
        }
        depth
    }

    pub fn reachable(&self) -> BTreeSet<WorkerId> {
        self.bfs_depths().into_keys().collect()
    }

    /// Vertex- and edge-wise containment.
    pub fn is_subgraph_of(&self, other: &Network) -> bool {
        self.requester == other.requester
            && self.nodes.is_subset(&other.nodes)
            && self.edges.is_subset(&other.edges)
    }

    /// Subgraph induced on `keep`.
    pub fn induced(&self, keep: &BTreeSet<WorkerId>) -> Network {
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|(a, b)| keep.contains(a) && keep.contains(b));
        let nodes: BTreeSet<_> = self.nodes.intersection(keep).copied().collect();
        // edges are a subset of an already valid edge set
        Self::assemble(self.requester, nodes, edges.collect()).expect("induced subgraph")
    }
}

/// A worker's declared type: the data offered and the children invited.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: Dataset,
    pub children: BTreeSet<WorkerId>,
}

impl Report {
    pub fn new<C: IntoIterator<Item = WorkerId>>(dataset: Dataset, children: C) -> Self {
        Report {
            dataset,
            children: children.into_iter().collect(),
        }
    }
}

/// Reports of all workers. A worker without an entry (or with `None`) is nil:
/// not invited, or declining to take part.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportProfile {
    reports: BTreeMap<WorkerId, Option<Report>>,
}

impl ReportProfile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, worker: WorkerId, report: Option<Report>) {
        self.reports.insert(worker, report);
    }

    pub fn with(mut self, worker: WorkerId, report: Report) -> Self {
        self.set(worker, Some(report));
        self
    }

    pub fn get(&self, worker: WorkerId) -> Option<&Report> {
        self.reports.get(&worker).and_then(Option::as_ref)
    }

    pub fn is_nil(&self, worker: WorkerId) -> bool {
        self.get(worker).is_none()
    }

    /// Workers with a non-nil report.
    pub fn participants(&self) -> impl Iterator<Item = (WorkerId, &Report)> + '_ {
        self.reports
            .iter()
            .filter_map(|(&w, r)| r.as_ref().map(|r| (w, r)))
    }

    /// Every worker mentioned, nil or not.
    pub fn keys(&self) -> impl Iterator<Item = WorkerId> + '_ {
        self.reports.keys().copied()
    }

    /// Dataset reported by `worker`, empty when nil.
    pub fn dataset(&self, worker: WorkerId) -> Dataset {
        self.get(worker)
            .map(|r| r.dataset.clone())
            .unwrap_or_default()
    }

    fn validate(&self, base: &Network) -> Result<(), NetworkError> {
        for (&w, report) in &self.reports {
            if !base.is_worker(w) {
                return Err(NetworkError::InvalidProfile(format!("unknown worker {w}")));
            }
            if let Some(r) = report {
                if let Some(c) = r.children.iter().find(|c| !base.children(w).contains(c)) {
                    return Err(NetworkError::InvalidProfile(format!(
                        "worker {w} invites {c}, which is not one of its children"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The network generated by a report profile: the requester, its children,
/// every invited worker, and all base edges among them.
pub fn generate_network(base: &Network, profile: &ReportProfile) -> Result<Network, NetworkError> {
    profile.validate(base)?;
    let s = base.requester();
    let mut keep: BTreeSet<WorkerId> = BTreeSet::from([s]);
    keep.extend(base.children(s).iter().copied());
    for (_, r) in profile.participants() {
        keep.extend(r.children.iter().copied().filter(|&c| c != s));
    }
    Ok(base.induced(&keep))
}

/// True iff every non-nil worker is reachable from the requester in the
/// generated network. An invalid profile is never feasible.
pub fn is_feasible(base: &Network, profile: &ReportProfile) -> bool {
    let Ok(g) = generate_network(base, profile) else {
        return false;
    };
    let reach = g.reachable();
    profile.participants().all(|(w, _)| reach.contains(&w))
}

/// Replaces `deviator`'s report with `deviation` and nils every other worker
/// that is no longer reachable from the requester.
///
/// `deviator_data` is the deviator's true dataset; the deviation may only
/// withhold data and invitations, never add to them.
pub fn restrict_profile(
    base: &Network,
    profile: &ReportProfile,
    deviator: WorkerId,
    deviator_data: &Dataset,
    deviation: Report,
) -> Result<ReportProfile, NetworkError> {
    if !base.is_worker(deviator) {
        return Err(NetworkError::InvalidDeviation {
            worker: deviator,
            reason: "not a worker of the base network".into(),
        });
    }
    if let Some(c) = deviation
        .children
        .iter()
        .find(|c| !base.children(deviator).contains(c))
    {
        return Err(NetworkError::InvalidDeviation {
            worker: deviator,
            reason: format!("{c} is not a child"),
        });
    }
    if !deviation.dataset.is_subset_of(deviator_data) {
        return Err(NetworkError::InvalidDeviation {
            worker: deviator,
            reason: "dataset is not a subset of the true dataset".into(),
        });
    }
    let mut out = profile.clone();
    out.set(deviator, Some(deviation));
    // Nil-ing a worker withdraws its invitations, which can strand others in
    // turn, so iterate to a fixpoint.
    loop {
        let g = generate_network(base, &out)?;
        let reach = g.reachable();
        let stranded: Vec<WorkerId> = out
            .participants()
            .map(|(w, _)| w)
            .filter(|&w| w != deviator && !reach.contains(&w))
            .collect();
        if stranded.is_empty() {
            return Ok(out);
        }
        for w in stranded {
            out.set(w, None);
        }
    }
}

/// BFS layering of a graph rooted at the requester.
///
/// Only edges from depth `d` to depth `d + 1` survive, so the result is a
/// single-source DAG in which every parent of a worker sits exactly one layer
/// above it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayeredDag {
    requester: WorkerId,
    layers: Vec<Vec<WorkerId>>,
    depth: BTreeMap<WorkerId, usize>,
    children: BTreeMap<WorkerId, Vec<WorkerId>>,
    parents: BTreeMap<WorkerId, Vec<WorkerId>>,
    unreachable: usize,
    dropped_edges: usize,
}

pub fn layerize(graph: &Network) -> Result<LayeredDag, NetworkError> {
    let s = graph.requester();
    if !graph.has_requester() {
        return Err(NetworkError::MissingRequester(s));
    }
    let depth = graph.bfs_depths();
    let max_depth = depth.values().copied().max().unwrap_or(0);
    let mut layers = vec![Vec::new(); max_depth];
    for (&w, &d) in &depth {
        if d > 0 {
            layers[d - 1].push(w);
        }
    }
    let mut children: BTreeMap<WorkerId, Vec<WorkerId>> = BTreeMap::new();
    let mut parents: BTreeMap<WorkerId, Vec<WorkerId>> = BTreeMap::new();
    let mut dropped_edges = 0;
    for (a, b) in graph.edges() {
        match (depth.get(&a), depth.get(&b)) {
            (Some(&da), Some(&db)) if db == da + 1 => {
                children.entry(a).or_default().push(b);
                parents.entry(b).or_default().push(a);
            }
            _ => dropped_edges += 1,
        }
    }
    let unreachable = graph.nodes.len() - depth.len();
    if unreachable > 0 {
        log::warn!("layerize: dropped {unreachable} vertices unreachable from the requester");
    }
    Ok(LayeredDag {
        requester: s,
        layers,
        depth,
        children,
        parents,
        unreachable,
        dropped_edges,
    })
}

impl LayeredDag {
    pub fn requester(&self) -> WorkerId {
        self.requester
    }

    /// `layers()[0]` is the first layer (the requester's children).
    pub fn layers(&self) -> &[Vec<WorkerId>] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Depth of a vertex; the requester has depth 0.
    pub fn depth(&self, id: WorkerId) -> Option<usize> {
        self.depth.get(&id).copied()
    }

    pub fn contains(&self, id: WorkerId) -> bool {
        self.depth.contains_key(&id)
    }

    pub fn is_worker(&self, id: WorkerId) -> bool {
        id != self.requester && self.contains(id)
    }

    /// Workers in layer order.
    pub fn workers(&self) -> impl Iterator<Item = WorkerId> + '_ {
        self.layers.iter().flatten().copied()
    }

    pub fn num_workers(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn children(&self, id: WorkerId) -> &[WorkerId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parents(&self, id: WorkerId) -> &[WorkerId] {
        self.parents.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Vertices excluded because the requester cannot reach them.
    pub fn unreachable_count(&self) -> usize {
        self.unreachable
    }

    /// Intra-layer, backward and unreachable edges removed by layering.
    pub fn dropped_edge_count(&self) -> usize {
        self.dropped_edges
    }

    /// Every vertex with a path to `target`, excluding `target` itself. The
    /// requester is included for any reachable target.
    pub fn ancestors(&self, target: WorkerId) -> BTreeSet<WorkerId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![target];
        while let Some(u) = stack.pop() {
            for &p in self.parents(u) {
                if seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        seen
    }

    /// Workers with a path to `target` (the requester excluded).
    pub fn predecessors(&self, target: WorkerId) -> BTreeSet<WorkerId> {
        let mut a = self.ancestors(target);
        a.remove(&self.requester);
        a
    }

    /// Workers reachable from `source`, excluding `source`.
    pub fn successors(&self, source: WorkerId) -> BTreeSet<WorkerId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![source];
        while let Some(u) = stack.pop() {
            for &c in self.children(u) {
                if seen.insert(c) {
                    stack.push(c);
                }
            }
        }
        seen
    }

    /// The retained graph as a plain network.
    pub fn to_network(&self) -> Network {
        let edges = self
            .children
            .iter()
            .flat_map(|(&a, cs)| cs.iter().map(move |&b| (a, b)));
        Network::new(self.requester, self.workers(), edges).expect("layered graph is well formed")
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn w(i: u32) -> WorkerId {
        WorkerId(i)
    }

    pub(crate) fn net(edges: &[(u32, u32)]) -> Network {
        Network::from_edges(w(0), edges.iter().map(|&(a, b)| (w(a), w(b))), []).unwrap()
    }

    /// Layers {1,2,3},{4,5,6},{7,8},{9}; worker 7 is reached only through 5,
    /// whose parents are 2 and 3.
    pub(crate) fn ten_worker_dag() -> Network {
        net(&[
            (0, 1),
            (0, 2),
            (0, 3),
            (1, 4),
            (2, 5),
            (3, 5),
            (3, 6),
            (4, 8),
            (5, 7),
            (6, 8),
            (8, 9),
        ])
    }

    /// s→1, s→2, s→3, 2→4, 2→5, 3→5, 3→6, 4→7, 5→7.
    pub(crate) fn partial_invite_net() -> Network {
        net(&[
            (0, 1),
            (0, 2),
            (0, 3),
            (2, 4),
            (2, 5),
            (3, 5),
            (3, 6),
            (4, 7),
            (5, 7),
        ])
    }

    pub(crate) fn truthful(base: &Network) -> ReportProfile {
        let mut p = ReportProfile::new();
        for x in base.workers() {
            p.set(
                x,
                Some(Report::new(
                    Dataset::new(),
                    base.children(x).iter().copied(),
                )),
            );
        }
        p
    }

    fn ids(v: &[u32]) -> BTreeSet<WorkerId> {
        v.iter().map(|&i| w(i)).collect()
    }

    #[test]
    fn partial_invitations_drop_5_and_7() {
        let base = partial_invite_net();
        let mut p = ReportProfile::new();
        p.set(w(1), Some(Report::default()));
        p.set(w(2), Some(Report::new(Dataset::new(), [w(4)])));
        p.set(w(3), Some(Report::default()));
        p.set(w(4), Some(Report::default()));
        p.set(w(6), None);
        let g = generate_network(&base, &p).unwrap();
        assert!(!g.contains(w(5)));
        assert!(!g.contains(w(7)));
        assert!(g.contains(w(4)));
        assert!(is_feasible(&base, &p));

        let mut bad = p.clone();
        bad.set(w(5), Some(Report::default()));
        assert!(!is_feasible(&base, &bad));
    }

    #[test]
    fn truthful_generation_is_identity() {
        let base = ten_worker_dag();
        let g = generate_network(&base, &truthful(&base)).unwrap();
        assert_eq!(g, base);
        assert!(is_feasible(&base, &truthful(&base)));
    }

    #[test]
    fn empty_invitations_keep_only_requester_edges() {
        // 5-node graph: s→1, s→2, 1→3, 2→4, 3→4
        let base = net(&[(0, 1), (0, 2), (1, 3), (2, 4), (3, 4)]);
        let mut p = ReportProfile::new();
        for x in base.workers() {
            p.set(x, Some(Report::default()));
        }
        let g = generate_network(&base, &p).unwrap();
        assert_eq!(g.workers().collect::<BTreeSet<_>>(), ids(&[1, 2]));
        assert_eq!(
            g.edges().collect::<Vec<_>>(),
            vec![(w(0), w(1)), (w(0), w(2))]
        );
    }

    #[test]
    fn all_nil_profile_is_feasible() {
        assert!(is_feasible(&ten_worker_dag(), &ReportProfile::new()));
    }

    #[test]
    fn unknown_worker_is_invalid_profile() {
        let p = ReportProfile::new().with(w(42), Report::default());
        assert!(matches!(
            generate_network(&partial_invite_net(), &p),
            Err(NetworkError::InvalidProfile(_))
        ));
        let p = ReportProfile::new().with(w(1), Report::new(Dataset::new(), [w(7)]));
        assert!(generate_network(&partial_invite_net(), &p).is_err());
    }

    #[test]
    fn ten_worker_layers() {
        let dag = layerize(&ten_worker_dag()).unwrap();
        let layers: Vec<BTreeSet<_>> = dag
            .layers()
            .iter()
            .map(|l| l.iter().copied().collect())
            .collect();
        assert_eq!(
            layers,
            vec![ids(&[1, 2, 3]), ids(&[4, 5, 6]), ids(&[7, 8]), ids(&[9])]
        );
        assert_eq!(dag.depth(w(9)), Some(4));
    }

    #[test]
    fn chain_gives_singleton_layers() {
        let dag = layerize(&net(&[(0, 2), (2, 3), (3, 4)])).unwrap();
        assert_eq!(dag.layers(), &[vec![w(2)], vec![w(3)], vec![w(4)]]);
    }

    #[test]
    fn triangle_in_first_layer_is_flattened() {
        let g = net(&[(0, 1), (0, 2), (0, 3), (1, 2), (2, 3), (3, 1)]);
        let dag = layerize(&g).unwrap();
        assert_eq!(dag.num_layers(), 1);
        assert_eq!(dag.dropped_edge_count(), 3);
        for x in 1..=3 {
            assert!(dag.children(w(x)).is_empty());
        }
    }

    #[test]
    fn backward_edges_and_unreachable_vertices_are_dropped() {
        let g = net(&[(0, 1), (1, 2), (2, 1), (2, 0), (7, 8)]);
        let dag = layerize(&g).unwrap();
        assert_eq!(dag.unreachable_count(), 2);
        assert_eq!(dag.parents(w(1)), &[w(0)]);
        assert!(dag.children(w(2)).is_empty());
        assert!(!dag.contains(w(7)));
    }

    #[test]
    fn missing_requester_is_an_error() {
        let g = Network::from_edges(w(0), [(w(1), w(2))], []).unwrap();
        assert_eq!(layerize(&g), Err(NetworkError::MissingRequester(w(0))));
    }

    #[test]
    fn network_validation() {
        assert!(matches!(
            Network::new(w(0), [w(1)], [(w(1), w(1))]),
            Err(NetworkError::SelfLoop(_))
        ));
        assert!(matches!(
            Network::new(w(0), [w(1)], [(w(1), w(2))]),
            Err(NetworkError::UndeclaredEndpoint(..))
        ));
    }

    #[test]
    fn dropping_child_strands_its_exclusive_subtree() {
        // In this network worker 4 is invited only by 2; 7 hangs off 4 and 5.
        let base = partial_invite_net();
        let truth = truthful(&base);
        let dev = Report::new(Dataset::new(), [w(5)]);
        let out = restrict_profile(&base, &truth, w(2), &Dataset::new(), dev).unwrap();
        assert!(out.is_nil(w(4)));
        assert!(!out.is_nil(w(5)));
        assert!(!out.is_nil(w(7)), "7 is still reachable through 5");
        assert!(is_feasible(&base, &out));

        // 2 drops both children and 3 withholds 5: 4, 5 and 7 all fall away.
        let mut p = truth.clone();
        p.set(w(3), Some(Report::new(Dataset::new(), [w(6)])));
        let out = restrict_profile(&base, &p, w(2), &Dataset::new(), Report::default()).unwrap();
        for x in [4, 5, 7] {
            assert!(out.is_nil(w(x)), "worker {x} should be nil");
        }
        assert!(is_feasible(&base, &out));
    }

    #[test]
    fn restrict_with_truthful_report_is_identity() {
        let base = partial_invite_net();
        let truth = truthful(&base);
        let same = truth.get(w(3)).unwrap().clone();
        let out = restrict_profile(&base, &truth, w(3), &Dataset::new(), same).unwrap();
        assert_eq!(out, truth);
    }

    #[test]
    fn data_only_deviation_changes_nobody_else() {
        let base = partial_invite_net();
        let mut truth = truthful(&base);
        let data = Dataset::from_ids([1, 2, 3]);
        truth.set(w(1), Some(Report::new(data.clone(), [])));
        let dev = Report::new(Dataset::from_ids([2]), []);
        let out = restrict_profile(&base, &truth, w(1), &data, dev.clone()).unwrap();
        for x in base.workers().filter(|&x| x != w(1)) {
            assert_eq!(out.get(x), truth.get(x));
        }
        assert_eq!(out.get(w(1)), Some(&dev));
    }

    #[test]
    fn deviation_outside_type_space_is_rejected() {
        let base = partial_invite_net();
        let truth = truthful(&base);
        let dev = Report::new(Dataset::new(), [w(7)]);
        assert!(matches!(
            restrict_profile(&base, &truth, w(2), &Dataset::new(), dev),
            Err(NetworkError::InvalidDeviation { .. })
        ));
        let dev = Report::new(Dataset::from_ids([9]), []);
        assert!(restrict_profile(&base, &truth, w(2), &Dataset::from_ids([1]), dev).is_err());
    }

    #[test]
    fn parents_sit_one_layer_up() {
        let g = net(&[(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (1, 4), (4, 2)]);
        let dag = layerize(&g).unwrap();
        for x in dag.workers() {
            let d = dag.depth(x).unwrap();
            assert!(!dag.parents(x).is_empty());
            for &p in dag.parents(x) {
                assert_eq!(dag.depth(p).unwrap() + 1, d);
            }
        }
        let again = layerize(&dag.to_network()).unwrap();
        assert_eq!(again.layers(), dag.layers());
        assert_eq!(again.dropped_edge_count(), 0);
        for x in dag.workers() {
            assert_eq!(again.parents(x), dag.parents(x));
        }
    }
}
