//! Seeded random instances, the four-mechanism comparison experiment and
//! result export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::Instance;
use crate::mechanism::{self, MechanismError, MechanismKind, MechanismParams};
use crate::network::{Network, WorkerId};
use crate::par::{self, Execution};
use crate::valuation::{
    AtomicDatum, CoverageValuation, Dataset, EntropyValuation, FeatureSchema, Memoized, Valuation,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("trial {trial}: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: MechanismError,
    },
    #[error("no results to export")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeModel {
    /// Optional edges from any shallower worker.
    #[default]
    Forward,
    /// Optional edges from the layer directly above only.
    Adjacent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValuationChoice {
    #[default]
    Coverage,
    /// Entropy over the bundled synthetic schema; every universe item gets a
    /// seeded random feature row.
    Entropy,
}

/// How the fixed fee of the two ε baselines is derived from an instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpsilonRule {
    /// `(1/n)·Σ_i v(D_i)`: the average value of one worker's own data.
    #[default]
    MeanWorkerValue,
    /// `v(D_N)/n`: the collected value spread over all workers.
    CollectedPerWorker,
    /// `(1/n)·Σ_i |D_i|`: average dataset size in items.
    MeanDatasetSize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_workers: usize,
    pub universe_size: u64,
    pub min_data_per_worker: usize,
    pub max_data_per_worker: usize,
    pub trials: usize,
    /// Number of worker layers below the requester.
    pub depth: usize,
    /// Probability of each optional edge.
    pub density: f64,
    pub edge_model: EdgeModel,
    pub max_out_degree: Option<usize>,
    pub seed: u64,
    pub params: MechanismParams,
    pub valuation: ValuationChoice,
    pub epsilon_rule: EpsilonRule,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_workers: 15,
            universe_size: 100,
            min_data_per_worker: 1,
            max_data_per_worker: 20,
            trials: 20,
            depth: 4,
            density: 0.2,
            edge_model: EdgeModel::Forward,
            max_out_degree: None,
            seed: 0,
            params: MechanismParams::experiment_default(),
            valuation: ValuationChoice::Coverage,
            epsilon_rule: EpsilonRule::MeanWorkerValue,
            execution: Execution::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.n_workers == 0 {
            return bad("n_workers must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.min_data_per_worker > self.max_data_per_worker {
            return bad("min_data_per_worker exceeds max_data_per_worker".into());
        }
        if self.max_data_per_worker as u64 > self.universe_size {
            return bad(format!(
                "max_data_per_worker {} exceeds universe_size {}",
                self.max_data_per_worker, self.universe_size
            ));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return bad(format!("density {} is not a probability", self.density));
        }
        if self.max_out_degree == Some(0) {
            return bad("max_out_degree must be at least 1".into());
        }
        self.params
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))
    }
}

/// The synthetic schema used by [`ValuationChoice::Entropy`].
pub fn bundled_schema() -> FeatureSchema {
    FeatureSchema::from_dims([("colour", 4), ("shape", 4), ("size", 3), ("texture", 5)])
        .expect("static schema")
}

/// Per-trial seed, mixed so neighbouring trials get unrelated streams.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    let mut z = seed
        ^ (trial as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn random_network(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Network {
    let s = WorkerId(0);
    let n = config.n_workers;
    // layer of each worker, compacted so no layer is empty
    let mut raw: Vec<usize> = (0..n).map(|_| rng.gen_range(0..config.depth)).collect();
    raw.sort_unstable();
    let mut layer_of = Vec::with_capacity(n);
    let mut current = 0;
    for (i, &l) in raw.iter().enumerate() {
        if i > 0 && l != raw[i - 1] {
            current += 1;
        }
        layer_of.push(current + 1);
    }
    let ids: Vec<WorkerId> = (1..=n as u32).map(WorkerId).collect();
    let mut layers: Vec<Vec<WorkerId>> = vec![vec![s]];
    let mut edges = Vec::new();
    let mut out_degree: BTreeMap<WorkerId, usize> = BTreeMap::new();
    let cap = config.max_out_degree.unwrap_or(usize::MAX);
    let has_room = |deg: &BTreeMap<WorkerId, usize>, w: WorkerId| {
        w == s || deg.get(&w).copied().unwrap_or(0) < cap
    };

    for (&w, &l) in ids.iter().zip(&layer_of) {
        let mut placed = l.min(layers.len());
        let parent = if placed == 1 {
            s
        } else {
            let room: Vec<WorkerId> = layers[placed - 1]
                .iter()
                .copied()
                .filter(|&p| has_room(&out_degree, p))
                .collect();
            match room.choose(rng) {
                Some(&p) => p,
                None => {
                    placed = 1;
                    s
                }
            }
        };
        edges.push((parent, w));
        *out_degree.entry(parent).or_default() += 1;
        if placed > 1 {
            let lo = match config.edge_model {
                EdgeModel::Forward => 1,
                EdgeModel::Adjacent => placed - 1,
            };
            for layer in &layers[lo..placed] {
                for &p in layer {
                    if p != parent && rng.gen_bool(config.density) && has_room(&out_degree, p) {
                        edges.push((p, w));
                        *out_degree.entry(p).or_default() += 1;
                    }
                }
            }
        }
        if layers.len() == placed {
            layers.push(Vec::new());
        }
        layers[placed].push(w);
    }
    Network::new(s, ids, edges).expect("generated edges use declared workers")
}

/// A seeded random instance: a layered DAG where every worker has a parent
/// one layer up, and uniform random datasets.
///
/// Worker ids run `1..=n` in layer order. The requester only links to the
/// first layer.
pub fn generate_instance(config: &ExperimentConfig, trial: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, trial));
    let network = random_network(config, &mut rng);
    let features: Option<Vec<Vec<u32>>> = match config.valuation {
        ValuationChoice::Coverage => None,
        ValuationChoice::Entropy => {
            let schema = bundled_schema();
            Some(
                (0..config.universe_size)
                    .map(|_| {
                        schema
                            .classes()
                            .iter()
                            .map(|c| rng.gen_range(0..c.dim as u32))
                            .collect()
                    })
                    .collect(),
            )
        }
    };
    let datasets = network
        .workers()
        .map(|w| {
            let size = rng.gen_range(config.min_data_per_worker..=config.max_data_per_worker);
            let mut picked: Vec<u64> = index::sample(&mut rng, config.universe_size as usize, size)
                .into_iter()
                .map(|i| i as u64)
                .collect();
            picked.sort_unstable();
            let ds: Dataset = picked
                .into_iter()
                .map(|id| match &features {
                    None => AtomicDatum::new(id),
                    Some(f) => AtomicDatum::with_features(id, f[id as usize].clone()),
                })
                .collect();
            (w, ds)
        })
        .collect();
    let mut inst = Instance::new(network, datasets);
    if features.is_some() {
        inst.schema = Some(bundled_schema());
    }
    inst
}

/// The valuation an instance from `config` is scored with.
pub fn valuation_for(config: &ExperimentConfig) -> Box<dyn Valuation> {
    match config.valuation {
        ValuationChoice::Coverage => Box::new(CoverageValuation::new(config.universe_size)),
        ValuationChoice::Entropy => Box::new(Memoized::new(
            EntropyValuation::new(bundled_schema()),
            1 << 16,
        )),
    }
}

/// Fixed fee for the ε baselines under the given rule.
pub fn epsilon_for(
    instance: &Instance,
    v: &dyn Valuation,
    rule: EpsilonRule,
) -> Result<f64, MechanismError> {
    let n = instance.network.num_workers().max(1) as f64;
    Ok(match rule {
        EpsilonRule::MeanWorkerValue => {
            let mut total = 0.0;
            for w in instance.network.workers() {
                total += v.value_of(instance.dataset(w))?;
            }
            total / n
        }
        EpsilonRule::CollectedPerWorker => v.value_of(&instance.all_data())? / n,
        EpsilonRule::MeanDatasetSize => {
            instance
                .network
                .workers()
                .map(|w| instance.dataset(w).len())
                .sum::<usize>() as f64
                / n
        }
    })
}

/// The four compared mechanisms, in output order.
pub const COMPARED: [MechanismKind; 4] = [
    MechanismKind::NonDiffEps,
    MechanismKind::NonDiffShapley,
    MechanismKind::DiffEps,
    MechanismKind::Cdm,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub mechanism: MechanismKind,
    pub collected_value: f64,
    pub expenditure: f64,
    pub workers_reached: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub digest: String,
    pub epsilon: f64,
    /// `Σφ̂` under CDM.
    pub data_contribution_total: f64,
    /// `λ/(1-γ)·Σφ̂`, the bound CDM's expenditure must respect in any mode.
    pub budget_chain_bound: f64,
    pub outcomes: Vec<MechanismOutcome>,
}

impl TrialResult {
    pub fn outcome(&self, kind: MechanismKind) -> Option<&MechanismOutcome> {
        self.outcomes.iter().find(|o| o.mechanism == kind)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismSummary {
    pub mechanism: MechanismKind,
    pub mean_collected_value: f64,
    pub std_collected_value: f64,
    pub mean_expenditure: f64,
    pub std_expenditure: f64,
    pub mean_workers_reached: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialResult>,
    pub summary: Vec<MechanismSummary>,
}

impl ExperimentResults {
    pub fn summary_for(&self, kind: MechanismKind) -> Option<&MechanismSummary> {
        self.summary.iter().find(|s| s.mechanism == kind)
    }
}

/// Runs all four mechanisms on the truthful profile of one instance.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<TrialResult, MechanismError> {
    let inst = generate_instance(config, trial);
    let v = valuation_for(config);
    let v = v.as_ref();
    let truth = inst.truthful_profile();
    let epsilon = epsilon_for(&inst, v, config.epsilon_rule)?;
    let sampling = config.params.sampling;
    let g = &inst.network;
    let cdm = mechanism::run_cdm(g, &truth, v, &config.params)?;
    let reports = [
        mechanism::run_nondiff_eps(g, &truth, v, epsilon)?,
        mechanism::run_nondiff_shapley_with(g, &truth, v, sampling)?,
        mechanism::run_diff_eps(g, &truth, v, epsilon)?,
    ];
    let outcomes = reports
        .iter()
        .chain(std::iter::once(&cdm))
        .map(|r| MechanismOutcome {
            mechanism: r.mechanism,
            collected_value: r.collected_value,
            expenditure: r.requester_payment,
            workers_reached: r.workers_reached,
        })
        .collect();
    let phi = cdm.total_data_contribution();
    let p = &config.params;
    Ok(TrialResult {
        trial,
        seed: trial_seed(config.seed, trial),
        digest: inst.digest(),
        epsilon,
        data_contribution_total: phi,
        budget_chain_bound: p.lambda / (1.0 - p.gamma) * phi,
        outcomes,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize(trials: &[TrialResult]) -> Vec<MechanismSummary> {
    COMPARED
        .iter()
        .map(|&kind| {
            let rows: Vec<&MechanismOutcome> =
                trials.iter().filter_map(|t| t.outcome(kind)).collect();
            let collected: Vec<f64> = rows.iter().map(|o| o.collected_value).collect();
            let spent: Vec<f64> = rows.iter().map(|o| o.expenditure).collect();
            let reached: Vec<f64> = rows.iter().map(|o| o.workers_reached as f64).collect();
            let (mean_collected_value, std_collected_value) = mean_std(&collected);
            let (mean_expenditure, std_expenditure) = mean_std(&spent);
            MechanismSummary {
                mechanism: kind,
                mean_collected_value,
                std_collected_value,
                mean_expenditure,
                std_expenditure,
                mean_workers_reached: mean_std(&reached).0,
            }
        })
        .collect()
}

/// Runs `config.trials` independent trials. Results are ordered by trial
/// index whatever the execution mode.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResults, SimError> {
    config.validate()?;
    let results = par::map_range(config.execution, config.trials, |t| run_trial(config, t));
    let mut trials = Vec::with_capacity(results.len());
    for (trial, r) in results.into_iter().enumerate() {
        trials.push(r.map_err(|source| SimError::Trial { trial, source })?);
    }
    let summary = summarize(&trials);
    Ok(ExperimentResults {
        config: config.clone(),
        trials,
        summary,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    Csv,
    Json,
    PlotJson,
}

impl ExportFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ExportFormat::Json,
            _ => ExportFormat::Csv,
        }
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    trial: usize,
    mechanism: &'a str,
    collected_value: f64,
    expenditure: f64,
    workers_reached: usize,
    seed: u64,
}

/// One row per trial and mechanism, with a header.
pub fn write_csv<W: Write>(results: &ExperimentResults, out: W) -> Result<(), SimError> {
    if results.trials.is_empty() {
        return Err(SimError::Empty);
    }
    let mut w = csv::Writer::from_writer(out);
    for t in &results.trials {
        for o in &t.outcomes {
            w.serialize(CsvRow {
                trial: t.trial,
                mechanism: o.mechanism.name(),
                collected_value: o.collected_value,
                expenditure: o.expenditure,
                workers_reached: o.workers_reached,
                seed: t.seed,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub mechanism: MechanismKind,
    pub collected_value: Vec<f64>,
    pub expenditure: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub trials: Vec<usize>,
    pub series: Vec<PlotSeries>,
    pub summary: Vec<MechanismSummary>,
}

pub fn plot_data(results: &ExperimentResults) -> PlotData {
    let series = COMPARED
        .iter()
        .map(|&kind| {
            let rows: Vec<&MechanismOutcome> = results
                .trials
                .iter()
                .filter_map(|t| t.outcome(kind))
                .collect();
            PlotSeries {
                mechanism: kind,
                collected_value: rows.iter().map(|o| o.collected_value).collect(),
                expenditure: rows.iter().map(|o| o.expenditure).collect(),
            }
        })
        .collect();
    PlotData {
        trials: results.trials.iter().map(|t| t.trial).collect(),
        series,
        summary: results.summary.clone(),
    }
}

pub fn export_results(
    results: &ExperimentResults,
    format: ExportFormat,
    path: &Path,
) -> Result<(), SimError> {
    if results.trials.is_empty() {
        return Err(SimError::Empty);
    }
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        ExportFormat::Csv => write_csv(results, &mut out)?,
        ExportFormat::Json => serde_json::to_writer_pretty(&mut out, results)?,
        ExportFormat::PlotJson => serde_json::to_writer_pretty(&mut out, &plot_data(results))?,
    }
    out.flush()?;
    Ok(())
}
