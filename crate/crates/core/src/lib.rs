//! Crowdsourcing diffusion mechanism toolkit.
//!
//! Workers on a social network hold private datasets and can invite their
//! children to a data-acquisition task run by a single requester. The
//! mechanism pays each worker a data reward (a Shapley value computed layer by
//! layer over the BFS layering of the invitation graph) plus a diffusion
//! reward propagated from every successor's data reward back to its
//! predecessors with a per-hop discount.
//!
//! Module map:
//!
//! * [`network`]: graphs, report profiles, generated networks, BFS layering.
//! * [`valuation`]: datasets and valuation functions (coverage, joint entropy).
//! * [`allocation`]: standard and layered Shapley values, exact or sampled.
//! * [`diffusion`]: pairwise diffusion contributions and reach counts.
//! * [`mechanism`]: the full payoff rule and three baseline mechanisms.
//! * [`verify`]: brute-force property checkers (IC, budget, dominance, growth).
//! * [`simctl`]: random instances, the four-mechanism experiment, exports.

pub mod allocation;
pub mod diffusion;
pub mod instance;
pub mod mechanism;
pub mod network;
pub mod par;
pub mod simctl;
pub mod valuation;
pub mod verify;

pub use allocation::{
    layered_shapley, sampled_layered_shapley, shapley, AllocationError, DataContribution, Method,
    EXACT_CAP,
};
pub use diffusion::{
    diffusion_contributions, reach_counts, total_diffusion, DiffusionError, DiffusionMatrix,
    ReachCount,
};
pub use mechanism::{
    run_cdm, run_diff_eps, run_direct_shapley, run_nondiff_eps, run_nondiff_shapley, Mechanism,
    MechanismError, MechanismKind, MechanismParams, PayoffReport, Sampling, WorkerPayoff,
};
pub use network::{
    generate_network, is_feasible, layerize, restrict_profile, LayeredDag, Network, NetworkError,
    Report, ReportProfile, WorkerId,
};
pub use par::Execution;
pub use valuation::{
    AtomicDatum, CoverageValuation, Dataset, DatumId, EntropyValuation, FeatureClass,
    FeatureSchema, Memoized, Valuation, ValuationError,
};
