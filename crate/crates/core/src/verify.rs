//! Brute-force property checkers.
//!
//! Each checker reruns a mechanism on concrete instances and reports every
//! counterexample it finds: profitable unilateral deviations (incentive
//! compatibility), payments above the collected value (budget), neighbour-only
//! crowdsourcing collecting more than diffusion (data dominance), and how a
//! bounded-degree worker's payoff grows with its subtree.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::instance::Instance;
use crate::mechanism::{
    self, Mechanism, MechanismError, MechanismKind, MechanismParams, PayoffReport,
};
use crate::network::{self, Network, Report, ReportProfile, WorkerId};
use crate::par::{self, Execution};
use crate::valuation::{CoverageValuation, Dataset, Valuation};

/// Absolute tolerance for payoff comparisons.
pub const TOLERANCE: f64 = 1e-9;

/// A downward deviation: a subset of the true data and of the true children.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deviation {
    pub worker: WorkerId,
    pub dataset: Dataset,
    pub children: BTreeSet<WorkerId>,
}

impl Deviation {
    pub fn report(&self) -> Report {
        Report {
            dataset: self.dataset.clone(),
            children: self.children.clone(),
        }
    }
}

/// Limits of the deviation search.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviationSearch {
    /// Exhaustive enumeration when `|D_i| ≤ max_data` and `|r_i^c| ≤ max_children`.
    pub max_data: usize,
    pub max_children: usize,
    /// Otherwise this many seeded random deviations.
    pub samples: usize,
    pub seed: u64,
}

impl Default for DeviationSearch {
    fn default() -> Self {
        DeviationSearch {
            max_data: 10,
            max_children: 8,
            samples: 512,
            seed: 0,
        }
    }
}

/// Deviations of `worker` from its true type in `instance`.
///
/// Exhaustive mode yields all `2^|D_i| · 2^|r_i^c|` pairs of subsets, the
/// empty report included, data subsets outermost.
pub fn enumerate_deviations(
    instance: &Instance,
    worker: WorkerId,
    search: &DeviationSearch,
) -> Vec<Deviation> {
    let data = instance.dataset(worker);
    let s = instance.network.requester();
    let children: Vec<WorkerId> = instance
        .network
        .children(worker)
        .iter()
        .copied()
        .filter(|&c| c != s)
        .collect();
    let pick_children = |mask: u64| -> BTreeSet<WorkerId> {
        children
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &c)| c)
            .collect()
    };
    if data.len() <= search.max_data.min(63) && children.len() <= search.max_children.min(63) {
        let mut out = Vec::with_capacity(1 << (data.len() + children.len()));
        for dm in 0..1u64 << data.len() {
            for cm in 0..1u64 << children.len() {
                out.push(Deviation {
                    worker,
                    dataset: data.select(dm),
                    children: pick_children(cm),
                });
            }
        }
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(search.seed ^ (worker.0 as u64).rotate_left(32));
    (0..search.samples)
        .map(|_| Deviation {
            worker,
            dataset: data.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect(),
            children: children
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(0.5))
                .collect(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcViolation {
    pub worker: WorkerId,
    pub deviation: Deviation,
    pub truthful_payoff: f64,
    pub deviated_payoff: f64,
}

/// A withheld-data deviation where some successor's diffusion credit to the
/// deviator was not strictly below that successor's data payoff.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginViolation {
    pub worker: WorkerId,
    pub successor: WorkerId,
    pub diffusion_payoff: f64,
    pub data_payoff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcReport {
    pub instance: String,
    pub mechanism: MechanismKind,
    pub deviations_checked: usize,
    pub violations: Vec<IcViolation>,
    pub margin_checks: usize,
    pub margin_violations: Vec<MarginViolation>,
}

impl IcReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.margin_violations.is_empty()
    }
}

struct DeviationOutcome {
    violation: Option<IcViolation>,
    margin_checks: usize,
    margin_violations: Vec<MarginViolation>,
}

/// `μ·π_{i,j} < λ·φ̂_j` for every successor `j` credited to `i` (equality
/// allowed only when both sides vanish).
fn margin_check(
    worker: WorkerId,
    report: &PayoffReport,
    params: &MechanismParams,
) -> (usize, Vec<MarginViolation>) {
    let mut checks = 0;
    let mut bad = Vec::new();
    for pair in report.pairwise.iter().filter(|p| p.from == worker) {
        checks += 1;
        let diffusion_payoff = params.mu * pair.value;
        let data_payoff = params.lambda * report.data_contribution(pair.to);
        let ok = diffusion_payoff < data_payoff
            || (diffusion_payoff <= TOLERANCE && data_payoff <= TOLERANCE);
        if !ok {
            bad.push(MarginViolation {
                worker,
                successor: pair.to,
                diffusion_payoff,
                data_payoff,
            });
        }
    }
    (checks, bad)
}

/// Checks every unilateral downward deviation of every participant.
///
/// The reference payoff of worker `i` is computed with `i` reporting its
/// true type and everyone else as in `profile`.
pub fn check_ic(
    instance: &Instance,
    profile: &ReportProfile,
    mechanism: &Mechanism,
    v: &dyn Valuation,
    search: &DeviationSearch,
    exec: Execution,
) -> Result<IcReport, MechanismError> {
    let base = &instance.network;
    let truth = instance.truthful_profile();
    let mut tasks: Vec<(WorkerId, f64, ReportProfile, Deviation)> = Vec::new();
    for (w, _) in profile.participants() {
        let Some(true_report) = truth.get(w) else {
            continue;
        };
        let reference =
            network::restrict_profile(base, profile, w, instance.dataset(w), true_report.clone())?;
        let truthful_payoff = mechanism.run(base, &reference, v)?.payoff(w);
        for d in enumerate_deviations(instance, w, search) {
            tasks.push((w, truthful_payoff, profile.clone(), d));
        }
    }
    let outcomes = par::map(exec, &tasks, |(w, truthful_payoff, profile, d)| {
        let deviated =
            network::restrict_profile(base, profile, *w, instance.dataset(*w), d.report())?;
        let report = mechanism.run(base, &deviated, v)?;
        let deviated_payoff = report.payoff(*w);
        let violation = (deviated_payoff > truthful_payoff + TOLERANCE).then(|| IcViolation {
            worker: *w,
            deviation: d.clone(),
            truthful_payoff: *truthful_payoff,
            deviated_payoff,
        });
        let withheld = d.dataset.len() < instance.dataset(*w).len();
        let (margin_checks, margin_violations) = match mechanism {
            Mechanism::Cdm(params) if withheld => margin_check(*w, &report, params),
            _ => (0, Vec::new()),
        };
        Ok::<_, MechanismError>(DeviationOutcome {
            violation,
            margin_checks,
            margin_violations,
        })
    });
    let mut report = IcReport {
        instance: instance.digest(),
        mechanism: mechanism.kind(),
        deviations_checked: tasks.len(),
        violations: Vec::new(),
        margin_checks: 0,
        margin_violations: Vec::new(),
    };
    for o in outcomes {
        let o = o?;
        report.violations.extend(o.violation);
        report.margin_checks += o.margin_checks;
        report.margin_violations.extend(o.margin_violations);
    }
    Ok(report)
}

/// The two-worker chain `s → 1 → 2` where both workers hold the same
/// `items` items.
pub fn redundant_chain_instance(items: u64) -> Instance {
    let (s, a, b) = (WorkerId(0), WorkerId(1), WorkerId(2));
    let network = Network::new(s, [a, b], [(s, a), (a, b)]).expect("static chain");
    let data = Dataset::from_ids(0..items);
    Instance::new(network, [(a, data.clone()), (b, data)].into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub instances: usize,
    pub relaxed: bool,
    /// Largest `𝒫_s / v(D_N')`; instances with `v = 0` count as 0.
    pub worst_ratio: f64,
    /// `𝒫_s > v(D_N')`.
    pub budget_violations: usize,
    /// `𝒫_s > 2λ·v(D_N')`.
    pub tight_violations: usize,
    /// `𝒫_s > λ/(1-γ)·Σφ̂`.
    pub chain_violations: usize,
    /// Targets `j` with `|Σ_i π_{i,j}| > γ/(1-γ)·α·|φ̂_j|`.
    pub spread_violations: usize,
    /// Workers paid less than zero. Only non-monotone valuations produce
    /// these; they do not affect the budget verdict.
    pub negative_payoffs: usize,
}

impl BudgetReport {
    pub fn passed(&self) -> bool {
        let structural = self.chain_violations == 0 && self.spread_violations == 0;
        if self.relaxed {
            structural
        } else {
            structural && self.budget_violations == 0 && self.tight_violations == 0
        }
    }
}

/// Per-instance budget facts for one CDM run.
#[derive(Clone, Copy, Debug, Default)]
struct BudgetFacts {
    ratio: f64,
    over_budget: bool,
    over_tight: bool,
    over_chain: bool,
    spread: usize,
    negative: usize,
}

fn budget_facts(report: &PayoffReport, params: &MechanismParams) -> BudgetFacts {
    let paid = report.requester_payment;
    let value = report.collected_value;
    let phi_total = report.total_data_contribution();
    let spread = report
        .workers
        .iter()
        .filter(|wp| {
            let spread: f64 = report
                .pairwise
                .iter()
                .filter(|p| p.to == wp.worker)
                .map(|p| p.value)
                .sum();
            // π is linear in φ̂_j with nonnegative weights, so compare magnitudes
            let bound =
                params.gamma / (1.0 - params.gamma) * params.alpha * wp.data_contribution.abs();
            spread.abs() > bound + TOLERANCE
        })
        .count();
    BudgetFacts {
        ratio: if value > 0.0 { paid / value } else { 0.0 },
        over_budget: paid > value + TOLERANCE,
        over_tight: paid > 2.0 * params.lambda * value + TOLERANCE,
        over_chain: paid > params.lambda / (1.0 - params.gamma) * phi_total + TOLERANCE,
        spread,
        negative: report
            .workers
            .iter()
            .filter(|w| w.total < -TOLERANCE)
            .count(),
    }
}

/// Runs CDM on the truthful profile of every instance and checks the
/// payment bounds.
pub fn check_budget(
    instances: &[Instance],
    v: &dyn Valuation,
    params: &MechanismParams,
    exec: Execution,
) -> Result<BudgetReport, MechanismError> {
    params.validate()?;
    let relaxed = !params.within_budget_constraints();
    let facts = par::map(exec, instances, |inst| {
        let r = mechanism::run_cdm(&inst.network, &inst.truthful_profile(), v, params)?;
        Ok::<_, MechanismError>(budget_facts(&r, params))
    });
    let mut report = BudgetReport {
        instances: instances.len(),
        relaxed,
        worst_ratio: 0.0,
        budget_violations: 0,
        tight_violations: 0,
        chain_violations: 0,
        spread_violations: 0,
        negative_payoffs: 0,
    };
    for f in facts {
        let f = f?;
        report.worst_ratio = report.worst_ratio.max(f.ratio);
        report.budget_violations += f.over_budget as usize;
        report.tight_violations += f.over_tight as usize;
        report.chain_violations += f.over_chain as usize;
        report.spread_violations += f.spread;
        report.negative_payoffs += f.negative;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UrcFamily {
    /// `s → 1 → 2 → … → depth`.
    Chain,
    /// `s → 1`, then a complete `branching`-ary tree below worker 1 with
    /// `depth` layers in total.
    Tree { branching: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UrcSpec {
    pub family: UrcFamily,
    /// Fresh items held by each data-bearing worker.
    pub items_per_worker: u64,
    /// Workers deeper than this hold nothing.
    pub data_up_to_depth: Option<usize>,
}

impl UrcSpec {
    pub fn chain() -> Self {
        UrcSpec {
            family: UrcFamily::Chain,
            items_per_worker: 1,
            data_up_to_depth: None,
        }
    }

    /// The family member of the given depth, with disjoint data.
    pub fn instance(&self, depth: usize) -> Instance {
        let s = WorkerId(0);
        let mut edges = Vec::new();
        let mut depth_of = vec![(WorkerId(1), 1usize)];
        edges.push((s, WorkerId(1)));
        let mut frontier = vec![WorkerId(1)];
        let mut next_id = 2u32;
        let fanout = match self.family {
            UrcFamily::Chain => 1,
            UrcFamily::Tree { branching } => branching.max(1),
        };
        for d in 2..=depth {
            let mut next = Vec::new();
            for &p in &frontier {
                for _ in 0..fanout {
                    let c = WorkerId(next_id);
                    next_id += 1;
                    edges.push((p, c));
                    depth_of.push((c, d));
                    next.push(c);
                }
            }
            frontier = next;
        }
        let workers: Vec<WorkerId> = depth_of.iter().map(|&(w, _)| w).collect();
        let network = Network::new(s, workers, edges).expect("generated tree");
        let k = self.items_per_worker;
        let datasets = depth_of
            .iter()
            .map(|&(w, d)| {
                let holds = self.data_up_to_depth.is_none_or(|limit| d <= limit);
                let ds = if holds {
                    Dataset::from_ids((w.0 as u64 - 1) * k..w.0 as u64 * k)
                } else {
                    Dataset::new()
                };
                (w, ds)
            })
            .collect();
        Instance::new(network, datasets)
    }

    /// Size of the item universe needed for `depth`.
    pub fn universe(&self, depth: usize) -> u64 {
        let n = self.instance(depth).network.num_workers() as u64;
        n * self.items_per_worker
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UrcRow {
    pub depth: usize,
    pub workers: usize,
    /// Payoff of worker 1, whose degree is fixed by the family.
    pub worker1_payoff: f64,
    pub max_payoff: f64,
    pub max_degree: usize,
}

/// Payoff table across depths. Under CDM the first worker's payoff keeps
/// growing as long as deeper workers bring fresh data.
pub fn check_urc_growth(
    spec: &UrcSpec,
    depths: std::ops::RangeInclusive<usize>,
    params: &MechanismParams,
) -> Result<Vec<UrcRow>, MechanismError> {
    depths
        .map(|depth| {
            let inst = spec.instance(depth);
            let v = CoverageValuation::new(spec.universe(depth).max(1));
            let r = mechanism::run_cdm(&inst.network, &inst.truthful_profile(), &v, params)?;
            let g = &inst.network;
            let max_degree = g
                .workers()
                .map(|w| g.children(w).len() + g.parents(w).len())
                .max()
                .unwrap_or(0);
            Ok(UrcRow {
                depth,
                workers: g.num_workers(),
                worker1_payoff: r.payoff(WorkerId(1)),
                max_payoff: r.workers.iter().map(|w| w.total).fold(0.0, f64::max),
                max_degree,
            })
        })
        .collect()
}

/// Smallest depth (up to `max_depth`) at which worker 1 earns at least
/// `threshold`.
pub fn urc_depth_for_threshold(
    spec: &UrcSpec,
    threshold: f64,
    params: &MechanismParams,
    max_depth: usize,
) -> Result<Option<usize>, MechanismError> {
    for depth in 1..=max_depth {
        let row = check_urc_growth(spec, depth..=depth, params)?.remove(0);
        if row.worker1_payoff >= threshold {
            return Ok(Some(depth));
        }
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub instances: usize,
    /// Instances where diffusion collected strictly less (never expected).
    pub failures: usize,
    pub strict: usize,
    pub equal: usize,
    /// Instances where equality did not coincide with the outer workers'
    /// data being covered by the neighbours' data.
    pub equality_mismatches: usize,
}

impl DominanceReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.equality_mismatches == 0
    }
}

/// Compares the value collected by CDM against neighbour-only Shapley
/// crowdsourcing on truthful profiles.
pub fn check_data_dominance(
    instances: &[Instance],
    v: &dyn Valuation,
    params: &MechanismParams,
    exec: Execution,
) -> Result<DominanceReport, MechanismError> {
    let rows = par::map(exec, instances, |inst| {
        let truth = inst.truthful_profile();
        let cdm = mechanism::run_cdm(&inst.network, &truth, v, params)?;
        let local = mechanism::run_nondiff_shapley(&inst.network, &truth, v)?;
        // equality holds exactly when the neighbours already cover everything
        let s = inst.network.requester();
        let neighbours = inst.network.children(s);
        let mut inner = Dataset::new();
        let mut outer = Dataset::new();
        for (w, _) in truth.participants() {
            if neighbours.contains(&w) {
                inner.extend_from(inst.dataset(w));
            } else {
                outer.extend_from(inst.dataset(w));
            }
        }
        let covered = outer.is_subset_of(&inner);
        Ok::<_, MechanismError>((cdm.collected_value, local.collected_value, covered))
    });
    let mut report = DominanceReport {
        instances: instances.len(),
        failures: 0,
        strict: 0,
        equal: 0,
        equality_mismatches: 0,
    };
    for row in rows {
        let (all, local, covered) = row?;
        if all + TOLERANCE < local {
            report.failures += 1;
        } else if (all - local).abs() <= TOLERANCE {
            report.equal += 1;
            report.equality_mismatches += !covered as usize;
        } else {
            report.strict += 1;
            report.equality_mismatches += covered as usize;
        }
    }
    Ok(report)
}
