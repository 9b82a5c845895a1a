use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use cdmkit::allocation::{layered_shapley, layered_shapley_with, LayerEstimator};
use cdmkit::diffusion::{diffusion_contributions, total_diffusion};
use cdmkit::instance::Instance;
use cdmkit::mechanism::{run_cdm, run_nondiff_shapley, Mechanism, MechanismParams};
use cdmkit::network::{
    generate_network, is_feasible, layerize, restrict_profile, Network, Report, ReportProfile,
    WorkerId,
};
use cdmkit::par::Execution;
use cdmkit::simctl::{self, EdgeModel, ExperimentConfig};
use cdmkit::valuation::{CoverageValuation, Dataset, Valuation};
use cdmkit::verify::{self, DeviationSearch};

const UNIVERSE: u64 = 12;

/// Arbitrary directed graph on `0..=n`, cycles and back edges included.
fn arb_network() -> impl Strategy<Value = Network> {
    (1u32..9).prop_flat_map(|n| {
        prop::collection::vec((0..=n, 0..=n), 0..(3 * n as usize)).prop_map(move |pairs| {
            let edges = pairs
                .into_iter()
                .filter(|(a, b)| a != b)
                .map(|(a, b)| (WorkerId(a), WorkerId(b)));
            Network::from_edges(WorkerId(0), edges, (0..=n).map(WorkerId)).unwrap()
        })
    })
}

/// An instance with arbitrary topology and small random datasets.
fn arb_instance() -> impl Strategy<Value = Instance> {
    arb_network().prop_flat_map(|g| {
        let n = g.num_workers();
        prop::collection::vec(prop::collection::btree_set(0..UNIVERSE, 0..5), n).prop_map(
            move |sets| {
                let datasets = g
                    .workers()
                    .zip(sets)
                    .map(|(w, s)| (w, Dataset::from_ids(s)))
                    .collect();
                Instance::new(g.clone(), datasets)
            },
        )
    })
}

/// An instance from the experiment generator.
fn arb_generated() -> impl Strategy<Value = Instance> {
    (
        1usize..13,
        1usize..5,
        0.0f64..0.8,
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(n, depth, density, adjacent, seed)| {
            let config = ExperimentConfig {
                n_workers: n,
                universe_size: 30,
                max_data_per_worker: 6,
                depth,
                density,
                edge_model: if adjacent {
                    EdgeModel::Adjacent
                } else {
                    EdgeModel::Forward
                },
                seed,
                ..Default::default()
            };
            simctl::generate_instance(&config, 0)
        })
}

/// Parameters satisfying `0 < αμ ≤ λ ≤ 1/2`, `0 < γ ≤ 1/2`, `0 < α ≤ 1`.
fn arb_params() -> impl Strategy<Value = MechanismParams> {
    (0.01f64..=0.5, 0.01f64..=1.0, 0.01f64..=1.0, 0.01f64..=0.5).prop_map(
        |(lambda, alpha, frac, gamma)| {
            MechanismParams::new(lambda, frac * lambda / alpha, alpha, gamma)
        },
    )
}

/// A random (not necessarily feasible) profile: each worker is nil or
/// reports a subset of its data and children.
fn random_profile(inst: &Instance, bits: &[u64]) -> ReportProfile {
    let g = &inst.network;
    let mut p = ReportProfile::new();
    for (k, w) in g.workers().enumerate() {
        let b = bits[k % bits.len()].rotate_left(k as u32 * 7);
        if b & 1 == 0 {
            continue;
        }
        let children = g
            .children(w)
            .iter()
            .enumerate()
            .filter(|(i, _)| b >> (i + 1) & 1 == 1)
            .map(|(_, &c)| c);
        let data = inst.dataset(w).select(b >> 20);
        p.set(
            w,
            Some(Report::new(data, children.filter(|&c| c != g.requester()))),
        );
    }
    p
}

fn v() -> CoverageValuation {
    CoverageValuation::new(UNIVERSE.max(30))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn generated_network_is_a_subgraph(inst in arb_instance(), bits in prop::collection::vec(any::<u64>(), 1..4)) {
        let p = random_profile(&inst, &bits);
        let g = generate_network(&inst.network, &p).unwrap();
        prop_assert!(g.is_subgraph_of(&inst.network));
        prop_assert!(g.has_requester());
        for &c in inst.network.children(inst.network.requester()) {
            prop_assert!(g.contains(c));
        }
    }

    #[test]
    fn layerize_is_idempotent_with_parents_one_layer_up(g in arb_network()) {
        let dag = layerize(&g).unwrap();
        let again = layerize(&dag.to_network()).unwrap();
        prop_assert_eq!(dag.layers(), again.layers());
        prop_assert_eq!(again.dropped_edge_count(), 0);
        let s = dag.requester();
        for w in dag.workers() {
            let d = dag.depth(w).unwrap();
            prop_assert!(!dag.parents(w).is_empty());
            for &p in dag.parents(w) {
                let dp = if p == s { 0 } else { dag.depth(p).unwrap() };
                prop_assert_eq!(dp + 1, d);
            }
        }
        let reachable = g.reachable().len() - 1;
        prop_assert_eq!(dag.num_workers(), reachable);
        prop_assert_eq!(dag.unreachable_count(), g.num_workers() - reachable);
    }

    #[test]
    fn restricted_profiles_are_feasible(inst in arb_instance(), pick in any::<prop::sample::Index>(), bits in any::<u64>()) {
        let truth = inst.truthful_profile();
        prop_assert!(is_feasible(&inst.network, &truth));
        let participants: Vec<WorkerId> = truth.participants().map(|(w, _)| w).collect();
        prop_assume!(!participants.is_empty());
        let w = *pick.get(&participants);
        let kids = truth.get(w).unwrap().children.iter().copied().enumerate().filter(|(i, _)| bits >> i & 1 == 1).map(|(_, c)| c);
        let dev = Report::new(inst.dataset(w).select(bits >> 32), kids);
        let r = restrict_profile(&inst.network, &truth, w, inst.dataset(w), dev).unwrap();
        prop_assert!(is_feasible(&inst.network, &r));
        prop_assert!(!r.is_nil(w));
    }

    #[test]
    fn layered_shapley_is_efficient(inst in arb_instance()) {
        let dag = layerize(&inst.network).unwrap();
        let phi = layered_shapley(&dag, &inst.datasets, &v()).unwrap();
        let reached: Dataset = dag.workers().fold(Dataset::new(), |acc, w| acc.union(inst.dataset(w)));
        prop_assert!((phi.total() - v().value_of(&reached).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn execution_modes_agree_bitwise(inst in arb_generated()) {
        let dag = layerize(&inst.network).unwrap();
        for est in [LayerEstimator::Exact, LayerEstimator::Sampled { samples: 64, seed: 3 }] {
            let a = layered_shapley_with(&dag, &inst.datasets, &v(), est, Execution::Sequential).unwrap();
            let b = layered_shapley_with(&dag, &inst.datasets, &v(), est, Execution::Parallel).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn payoffs_are_nonnegative_and_within_budget(inst in arb_instance(), params in arb_params()) {
        let r = run_cdm(&inst.network, &inst.truthful_profile(), &v(), &params).unwrap();
        for wp in &r.workers {
            prop_assert!(wp.data_contribution >= -1e-12);
            prop_assert!(wp.diffusion_contribution >= -1e-12);
            prop_assert!((wp.total - (wp.data_payoff + wp.diffusion_payoff)).abs() < 1e-12);
        }
        prop_assert!(r.requester_payment <= r.collected_value + 1e-9);
        prop_assert!(r.requester_payment <= 2.0 * params.lambda * r.collected_value + 1e-9);
        let chain = params.lambda / (1.0 - params.gamma) * r.total_data_contribution();
        prop_assert!(r.requester_payment <= chain + 1e-9);
    }

    #[test]
    fn diffusion_respects_the_geometric_bound(inst in arb_generated(), params in arb_params()) {
        let dag = layerize(&inst.network).unwrap();
        let phi = layered_shapley(&dag, &inst.datasets, &v()).unwrap();
        let pi = diffusion_contributions(&dag, &phi, params.alpha, params.gamma).unwrap();
        let mut per_target: BTreeMap<WorkerId, f64> = BTreeMap::new();
        for ((_, j), x) in pi.worker_entries() {
            prop_assert!(x >= 0.0);
            *per_target.entry(j).or_default() += x;
        }
        for (j, spread) in per_target {
            let bound = params.gamma / (1.0 - params.gamma) * params.alpha * phi.get(j);
            prop_assert!(spread <= bound + 1e-9);
        }
        // only predecessors earn diffusion credit
        let totals = total_diffusion(&pi);
        for w in dag.workers().filter(|&w| dag.children(w).is_empty()) {
            prop_assert_eq!(totals.get(&w).copied().unwrap_or(0.0), 0.0);
        }
    }

    #[test]
    fn diffusion_collects_at_least_as_much(inst in arb_generated()) {
        let truth = inst.truthful_profile();
        let cdm = run_cdm(&inst.network, &truth, &v(), &MechanismParams::strict_default()).unwrap();
        let local = run_nondiff_shapley(&inst.network, &truth, &v()).unwrap();
        prop_assert!(cdm.collected_value >= local.collected_value);
    }

    #[test]
    fn cdm_is_deterministic(inst in arb_instance(), params in arb_params()) {
        let truth = inst.truthful_profile();
        let a = run_cdm(&inst.network, &truth, &v(), &params).unwrap();
        let b = run_cdm(&inst.network, &truth, &v(), &params).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cdm_admits_no_profitable_deviation(inst in arb_instance(), params in arb_params()) {
        let r = verify::check_ic(
            &inst,
            &inst.truthful_profile(),
            &Mechanism::Cdm(params),
            &v(),
            &DeviationSearch { max_data: 4, max_children: 4, samples: 64, seed: 1 },
            Execution::Sequential,
        ).unwrap();
        prop_assert!(r.violations.is_empty(), "{:?}", r.violations);
        prop_assert!(r.margin_violations.is_empty(), "{:?}", r.margin_violations);
    }

    #[test]
    fn deviations_stay_below_the_truth(inst in arb_instance(), pick in any::<prop::sample::Index>()) {
        let workers: Vec<WorkerId> = inst.network.workers().collect();
        let w = *pick.get(&workers);
        let truth_children: BTreeSet<WorkerId> = inst.network.children(w).iter().copied().filter(|&c| c != inst.network.requester()).collect();
        for d in verify::enumerate_deviations(&inst, w, &DeviationSearch::default()) {
            prop_assert!(d.dataset.is_subset_of(inst.dataset(w)));
            prop_assert!(d.children.is_subset(&truth_children));
        }
    }
}
