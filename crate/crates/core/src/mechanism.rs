//! The crowdsourcing diffusion mechanism (CDM) and three baselines.
//!
//! CDM pays worker `i` the amount `λ·φ̂_i + μ·π_i`: its layered Shapley data
//! contribution plus its total diffusion contribution. The baselines either
//! restrict the task to the requester's neighbours, pay a fixed fee, or both.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{self, AllocationError, DataContribution, LayerEstimator};
use crate::diffusion::{self, DiffusionError, DiffusionMatrix};
use crate::network::{self, LayeredDag, Network, NetworkError, ReportProfile, WorkerId};
use crate::par::Execution;
use crate::valuation::{Dataset, Valuation, ValuationError};

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("report profile is infeasible: worker {0} is not reachable from the requester")]
    Infeasible(WorkerId),
    #[error("invalid mechanism parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Valuation(#[from] ValuationError),
}

/// Monte-Carlo fallback for layers wider than [`allocation::EXACT_CAP`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Skips the `0 < α·μ ≤ λ ≤ 1/2` check (with a warning).
    #[serde(default)]
    pub relax_constraints: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
}

impl MechanismParams {
    pub fn new(lambda: f64, mu: f64, alpha: f64, gamma: f64) -> Self {
        MechanismParams {
            lambda,
            mu,
            alpha,
            gamma,
            relax_constraints: false,
            sampling: None,
        }
    }

    /// `λ = μ = 1/2`, `α = 1`, `γ = 1/2`: the loosest budget-safe setting.
    pub fn strict_default() -> Self {
        Self::new(0.5, 0.5, 1.0, 0.5)
    }

    /// `λ = μ = 1`, `α = 0.1`, `γ = 0.5`, relaxed, as used in the comparison
    /// experiment.
    pub fn experiment_default() -> Self {
        Self::new(1.0, 1.0, 0.1, 0.5).relaxed()
    }

    pub fn relaxed(mut self) -> Self {
        self.relax_constraints = true;
        self
    }

    pub fn with_sampling(mut self, samples: usize, seed: u64) -> Self {
        self.sampling = Some(Sampling { samples, seed });
        self
    }

    /// True when the payoff-factor constraint `0 < α·μ ≤ λ ≤ 1/2` holds.
    pub fn within_budget_constraints(&self) -> bool {
        let am = self.alpha * self.mu;
        am > 0.0 && am <= self.lambda + 1e-12 && self.lambda <= 0.5
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        diffusion::check_params(self.alpha, self.gamma)
            .map_err(|e| MechanismError::InvalidParams(e.to_string()))?;
        let finite = [self.lambda, self.mu]
            .iter()
            .all(|x| x.is_finite() && *x >= 0.0);
        if !finite {
            return Err(MechanismError::InvalidParams(format!(
                "lambda and mu must be finite and nonnegative, got {} and {}",
                self.lambda, self.mu
            )));
        }
        if !self.within_budget_constraints() {
            if !self.relax_constraints {
                return Err(MechanismError::InvalidParams(format!(
                    "need 0 < alpha*mu <= lambda <= 1/2, got alpha*mu = {}, lambda = {}",
                    self.alpha * self.mu,
                    self.lambda
                )));
            }
            log::warn!(
                "relaxed parameters (lambda = {}, mu = {}, alpha = {}) void the budget guarantee",
                self.lambda,
                self.mu,
                self.alpha
            );
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MechanismKind {
    #[serde(rename = "NonDiff_eps")]
    NonDiffEps,
    #[serde(rename = "NonDiff_shapley")]
    NonDiffShapley,
    #[serde(rename = "Diff_eps")]
    DiffEps,
    #[serde(rename = "CDM")]
    Cdm,
    #[serde(rename = "Direct_shapley")]
    DirectShapley,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::NonDiffEps => "NonDiff_eps",
            MechanismKind::NonDiffShapley => "NonDiff_shapley",
            MechanismKind::DiffEps => "Diff_eps",
            MechanismKind::Cdm => "CDM",
            MechanismKind::DirectShapley => "Direct_shapley",
        }
    }

    /// True for mechanisms that reach beyond the requester's neighbours.
    pub fn diffuses(self) -> bool {
        matches!(
            self,
            MechanismKind::DiffEps | MechanismKind::Cdm | MechanismKind::DirectShapley
        )
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerPayoff {
    pub worker: WorkerId,
    /// `φ̂_i` for CDM, `φ_i` for the Shapley baselines, 0 for fixed fees.
    pub data_contribution: f64,
    /// `π_i`; 0 outside CDM.
    pub diffusion_contribution: f64,
    pub data_payoff: f64,
    pub diffusion_payoff: f64,
    pub total: f64,
}

/// One entry `π_{from,to}` of the diffusion matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairContribution {
    pub from: WorkerId,
    pub to: WorkerId,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoffReport {
    pub mechanism: MechanismKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<MechanismParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub workers: Vec<WorkerPayoff>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairwise: Vec<PairContribution>,
    pub requester_payment: f64,
    pub collected_value: f64,
    pub workers_reached: usize,
}

impl PayoffReport {
    pub fn get(&self, w: WorkerId) -> Option<&WorkerPayoff> {
        self.workers.iter().find(|p| p.worker == w)
    }

    /// Total payoff of `w`, zero if it was not paid.
    pub fn payoff(&self, w: WorkerId) -> f64 {
        self.get(w).map_or(0.0, |p| p.total)
    }

    pub fn data_contribution(&self, w: WorkerId) -> f64 {
        self.get(w).map_or(0.0, |p| p.data_contribution)
    }

    /// `π_{i,j}` as recorded in the report.
    pub fn pair(&self, i: WorkerId, j: WorkerId) -> f64 {
        self.pairwise
            .iter()
            .find(|p| p.from == i && p.to == j)
            .map_or(0.0, |p| p.value)
    }

    pub fn total_data_contribution(&self) -> f64 {
        self.workers.iter().map(|p| p.data_contribution).sum()
    }
}

fn union_of<'a, I: IntoIterator<Item = &'a Dataset>>(sets: I) -> Dataset {
    let mut out = Dataset::new();
    for d in sets {
        out.extend_from(d);
    }
    out
}

/// Generated network, checked for feasibility, and its layering.
fn feasible_layering(
    base: &Network,
    profile: &ReportProfile,
) -> Result<LayeredDag, MechanismError> {
    let g = network::generate_network(base, profile)?;
    let reach = g.reachable();
    if let Some((w, _)) = profile.participants().find(|(w, _)| !reach.contains(w)) {
        return Err(MechanismError::Infeasible(w));
    }
    Ok(network::layerize(&g)?)
}

fn reported_data(dag: &LayeredDag, profile: &ReportProfile) -> BTreeMap<WorkerId, Dataset> {
    dag.workers().map(|w| (w, profile.dataset(w))).collect()
}

/// Runs CDM on a feasible report profile.
pub fn run_cdm(
    base: &Network,
    profile: &ReportProfile,
    v: &dyn Valuation,
    params: &MechanismParams,
) -> Result<PayoffReport, MechanismError> {
    params.validate()?;
    let dag = feasible_layering(base, profile)?;
    let datasets = reported_data(&dag, profile);
    let estimator = match params.sampling {
        Some(Sampling { samples, seed }) => LayerEstimator::ExactOrSampled { samples, seed },
        None => LayerEstimator::Exact,
    };
    let phi =
        allocation::layered_shapley_with(&dag, &datasets, v, estimator, Execution::default())?;
    let matrix = diffusion::diffusion_contributions(&dag, &phi, params.alpha, params.gamma)?;
    let collected_value = v.value_of(&union_of(datasets.values()))?;
    Ok(cdm_report(&dag, &phi, &matrix, params, collected_value))
}

fn cdm_report(
    dag: &LayeredDag,
    phi: &DataContribution,
    matrix: &DiffusionMatrix,
    params: &MechanismParams,
    collected_value: f64,
) -> PayoffReport {
    let pi = diffusion::total_diffusion(matrix);
    let mut ids: Vec<WorkerId> = dag.workers().collect();
    ids.sort();
    let workers: Vec<WorkerPayoff> = ids
        .into_iter()
        .map(|w| {
            let data = phi.get(w);
            let diff = pi.get(&w).copied().unwrap_or(0.0);
            let data_payoff = params.lambda * data;
            let diffusion_payoff = params.mu * diff;
            WorkerPayoff {
                worker: w,
                data_contribution: data,
                diffusion_contribution: diff,
                data_payoff,
                diffusion_payoff,
                total: data_payoff + diffusion_payoff,
            }
        })
        .collect();
    let pairwise = matrix
        .worker_entries()
        .map(|((from, to), value)| PairContribution { from, to, value })
        .collect();
    PayoffReport {
        mechanism: MechanismKind::Cdm,
        params: Some(*params),
        epsilon: None,
        requester_payment: workers.iter().map(|p| p.total).sum(),
        workers,
        pairwise,
        collected_value,
        workers_reached: dag.num_workers(),
    }
}

fn data_only_report(
    kind: MechanismKind,
    phi: &DataContribution,
    collected_value: f64,
    workers_reached: usize,
) -> PayoffReport {
    let workers: Vec<WorkerPayoff> = phi
        .values
        .iter()
        .map(|(&w, &x)| WorkerPayoff {
            worker: w,
            data_contribution: x,
            diffusion_contribution: 0.0,
            data_payoff: x,
            diffusion_payoff: 0.0,
            total: x,
        })
        .collect();
    PayoffReport {
        mechanism: kind,
        params: None,
        epsilon: None,
        requester_payment: workers.iter().map(|p| p.total).sum(),
        workers,
        pairwise: Vec::new(),
        collected_value,
        workers_reached,
    }
}

fn fixed_fee_report(
    kind: MechanismKind,
    paid: &[WorkerId],
    epsilon: f64,
    collected_value: f64,
) -> PayoffReport {
    let workers: Vec<WorkerPayoff> = paid
        .iter()
        .map(|&w| WorkerPayoff {
            worker: w,
            data_contribution: 0.0,
            diffusion_contribution: 0.0,
            data_payoff: epsilon,
            diffusion_payoff: 0.0,
            total: epsilon,
        })
        .collect();
    PayoffReport {
        mechanism: kind,
        params: None,
        epsilon: Some(epsilon),
        requester_payment: epsilon * paid.len() as f64,
        workers,
        pairwise: Vec::new(),
        collected_value,
        workers_reached: paid.len(),
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), MechanismError> {
    if epsilon.is_finite() && epsilon >= 0.0 {
        Ok(())
    } else {
        Err(MechanismError::InvalidParams(format!(
            "epsilon must be finite and nonnegative, got {epsilon}"
        )))
    }
}

/// Participants of the neighbour-only baselines: the requester's children
/// with a non-nil report.
fn neighbours(base: &Network, profile: &ReportProfile) -> Vec<WorkerId> {
    base.children(base.requester())
        .iter()
        .copied()
        .filter(|&w| !profile.is_nil(w))
        .collect()
}

/// Fixed fee `ε` for every neighbour of the requester who takes part.
pub fn run_nondiff_eps(
    base: &Network,
    profile: &ReportProfile,
    v: &dyn Valuation,
    epsilon: f64,
) -> Result<PayoffReport, MechanismError> {
    check_epsilon(epsilon)?;
    let paid = neighbours(base, profile);
    let data: Vec<Dataset> = paid.iter().map(|&w| profile.dataset(w)).collect();
    let collected = v.value_of(&union_of(&data))?;
    Ok(fixed_fee_report(
        MechanismKind::NonDiffEps,
        &paid,
        epsilon,
        collected,
    ))
}

/// Standard Shapley value among the requester's neighbours only.
pub fn run_nondiff_shapley(
    base: &Network,
    profile: &ReportProfile,
    v: &dyn Valuation,
) -> Result<PayoffReport, MechanismError> {
    run_nondiff_shapley_with(base, profile, v, None)
}

pub fn run_nondiff_shapley_with(
    base: &Network,
    profile: &ReportProfile,
    v: &dyn Valuation,
    sampling: Option<Sampling>,
) -> Result<PayoffReport, MechanismError> {
    let paid = neighbours(base, profile);
    let datasets: BTreeMap<WorkerId, Dataset> =
        paid.iter().map(|&w| (w, profile.dataset(w))).collect();
    let phi = allocation::shapley_with(
        &paid,
        &datasets,
        v,
        sampling.map(|s| (s.samples, s.seed)),
        Execution::default(),
    )?;
    let collected = v.value_of(&union_of(datasets.values()))?;
    Ok(data_only_report(
        MechanismKind::NonDiffShapley,
        &phi,
        collected,
        paid.len(),
    ))
}

/// Fixed fee `ε` for every participant reachable in the generated network.
pub fn run_diff_eps(
    base: &Network,
    profile: &ReportProfile,
    v: &dyn Valuation,
    epsilon: f64,
) -> Result<PayoffReport, MechanismError> {
    check_epsilon(epsilon)?;
    let dag = feasible_layering(base, profile)?;
    let mut paid: Vec<WorkerId> = dag.workers().filter(|&w| !profile.is_nil(w)).collect();
    paid.sort();
    let data: Vec<Dataset> = paid.iter().map(|&w| profile.dataset(w)).collect();
    let collected = v.value_of(&union_of(&data))?;
    Ok(fixed_fee_report(
        MechanismKind::DiffEps,
        &paid,
        epsilon,
        collected,
    ))
}

/// Standard Shapley value over every worker of the generated network,
/// ignoring its structure. Not incentive compatible; kept as a foil.
pub fn run_direct_shapley(
    base: &Network,
    profile: &ReportProfile,
    v: &dyn Valuation,
) -> Result<PayoffReport, MechanismError> {
    let dag = feasible_layering(base, profile)?;
    let datasets = reported_data(&dag, profile);
    let mut ids: Vec<WorkerId> = dag.workers().collect();
    ids.sort();
    let phi = allocation::shapley(&ids, &datasets, v)?;
    let collected = v.value_of(&union_of(datasets.values()))?;
    Ok(data_only_report(
        MechanismKind::DirectShapley,
        &phi,
        collected,
        ids.len(),
    ))
}

/// A mechanism with its parameters, runnable on any profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism")]
pub enum Mechanism {
    #[serde(rename = "CDM")]
    Cdm(MechanismParams),
    #[serde(rename = "NonDiff_eps")]
    NonDiffEps { epsilon: f64 },
    #[serde(rename = "NonDiff_shapley")]
    NonDiffShapley,
    #[serde(rename = "Diff_eps")]
    DiffEps { epsilon: f64 },
    #[serde(rename = "Direct_shapley")]
    DirectShapley,
}

impl Mechanism {
    pub fn kind(&self) -> MechanismKind {
        match self {
            Mechanism::Cdm(_) => MechanismKind::Cdm,
            Mechanism::NonDiffEps { .. } => MechanismKind::NonDiffEps,
            Mechanism::NonDiffShapley => MechanismKind::NonDiffShapley,
            Mechanism::DiffEps { .. } => MechanismKind::DiffEps,
            Mechanism::DirectShapley => MechanismKind::DirectShapley,
        }
    }

    pub fn run(
        &self,
        base: &Network,
        profile: &ReportProfile,
        v: &dyn Valuation,
    ) -> Result<PayoffReport, MechanismError> {
        match self {
            Mechanism::Cdm(p) => run_cdm(base, profile, v, p),
            Mechanism::NonDiffEps { epsilon } => run_nondiff_eps(base, profile, v, *epsilon),
            Mechanism::NonDiffShapley => run_nondiff_shapley(base, profile, v),
            Mechanism::DiffEps { epsilon } => run_diff_eps(base, profile, v, *epsilon),
            Mechanism::DirectShapley => run_direct_shapley(base, profile, v),
        }
    }
}
