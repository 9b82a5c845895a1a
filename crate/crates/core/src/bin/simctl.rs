use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cdmkit::instance::Instance;
use cdmkit::mechanism::{Mechanism, MechanismParams};
use cdmkit::par::{self, Execution};
use cdmkit::simctl::{
    self, EdgeModel, EpsilonRule, ExperimentConfig, ExportFormat, ValuationChoice,
};
use cdmkit::valuation::{CoverageValuation, EntropyValuation, Valuation};
use cdmkit::verify::{self, DeviationSearch, UrcFamily, UrcSpec};

#[derive(Parser)]
#[command(
    name = "simctl",
    version,
    about = "Crowdsourcing diffusion mechanism simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ParamArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    /// Allow lambda > 1/2 or alpha*mu > lambda (voids the budget guarantee).
    #[arg(long)]
    relax: bool,
    /// Monte Carlo permutations per layer for layers above the exact cap.
    #[arg(long)]
    samples: Option<usize>,
}

impl ParamArgs {
    fn params(&self, seed: u64) -> MechanismParams {
        let mut p = MechanismParams::new(self.lambda, self.mu, self.alpha, self.gamma);
        p.relax_constraints = self.relax;
        if let Some(n) = self.samples {
            p = p.with_sampling(n, seed);
        }
        p
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum Suite {
    Ic,
    Budget,
    Dominance,
    Urc,
}

#[derive(Copy, Clone, ValueEnum)]
enum MechanismArg {
    Cdm,
    NondiffEps,
    NondiffShapley,
    DiffEps,
    DirectShapley,
}

#[derive(Subcommand)]
enum Command {
    /// Run the four-mechanism comparison on random instances.
    Run {
        #[arg(long, default_value_t = 15)]
        workers: usize,
        #[arg(long, default_value_t = 100)]
        universe: u64,
        #[arg(long, default_value_t = 20)]
        max_data: usize,
        #[arg(long, default_value_t = 1)]
        min_data: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long, default_value_t = 0.2)]
        density: f64,
        #[arg(long, value_enum, default_value = "forward")]
        edge_model: EdgeArg,
        #[arg(long)]
        max_out_degree: Option<usize>,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, value_enum, default_value = "coverage")]
        valuation: ValuationArg,
        #[arg(long, value_enum, default_value = "mean-worker-value")]
        epsilon_rule: EpsilonArg,
        /// Output file; `.json` writes full results, anything else CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write plot-ready series grouped by mechanism.
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Run a property-checking suite on seeded instances and print a JSON report.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of random instances (ignored by the urc suite).
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Compute payoffs for an instance file and print the report as JSON.
    Payoff {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "cdm")]
        mechanism: MechanismArg,
        #[command(flatten)]
        params: ParamArgs,
        /// Fixed fee for the eps mechanisms.
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Universe size for coverage; defaults to one past the largest item id.
        #[arg(long)]
        universe: Option<u64>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum EdgeArg {
    Forward,
    Adjacent,
}

#[derive(Copy, Clone, ValueEnum)]
enum ValuationArg {
    Coverage,
    Entropy,
}

#[derive(Copy, Clone, ValueEnum)]
enum EpsilonArg {
    MeanWorkerValue,
    CollectedPerWorker,
    MeanDatasetSize,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct SuiteOutput<T: Serialize> {
    suite: &'static str,
    seed: u64,
    passed: bool,
    report: T,
}

/// Small instances for exhaustive IC checks.
fn ic_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n_workers: 6,
        universe_size: 8,
        max_data_per_worker: 3,
        depth: 3,
        density: 0.4,
        max_out_degree: Some(3),
        seed,
        params: MechanismParams::strict_default(),
        ..Default::default()
    }
}

fn verify_suite(suite: Suite, seed: u64, count: usize) -> Result<bool> {
    match suite {
        Suite::Ic => {
            let config = ic_config(seed);
            let v = CoverageValuation::new(config.universe_size);
            let cdm = Mechanism::Cdm(config.params);
            let mut checked = 0;
            let mut violations = Vec::new();
            let mut margin_violations = Vec::new();
            for t in 0..count {
                let inst = simctl::generate_instance(&config, t);
                let r = verify::check_ic(
                    &inst,
                    &inst.truthful_profile(),
                    &cdm,
                    &v,
                    &DeviationSearch::default(),
                    Execution::Parallel,
                )?;
                checked += r.deviations_checked;
                violations.extend(r.violations);
                margin_violations.extend(r.margin_violations);
            }
            let passed = violations.is_empty() && margin_violations.is_empty();
            print_json(&SuiteOutput {
                suite: "ic",
                seed,
                passed,
                report: serde_json::json!({
                    "instances": count,
                    "deviations_checked": checked,
                    "violations": violations,
                    "margin_violations": margin_violations,
                }),
            })?;
            Ok(passed)
        }
        Suite::Budget | Suite::Dominance => {
            let config = ExperimentConfig {
                n_workers: 10,
                universe_size: 40,
                max_data_per_worker: 8,
                seed,
                params: MechanismParams::strict_default(),
                ..Default::default()
            };
            let instances: Vec<Instance> = (0..count)
                .map(|t| simctl::generate_instance(&config, t))
                .collect();
            let v = CoverageValuation::new(config.universe_size);
            if let Suite::Budget = suite {
                let r = verify::check_budget(&instances, &v, &config.params, Execution::Parallel)?;
                let passed = r.passed();
                print_json(&SuiteOutput {
                    suite: "budget",
                    seed,
                    passed,
                    report: r,
                })?;
                Ok(passed)
            } else {
                let r = verify::check_data_dominance(
                    &instances,
                    &v,
                    &config.params,
                    Execution::Parallel,
                )?;
                let passed = r.passed();
                print_json(&SuiteOutput {
                    suite: "dominance",
                    seed,
                    passed,
                    report: r,
                })?;
                Ok(passed)
            }
        }
        Suite::Urc => {
            let p = MechanismParams::strict_default();
            let chain = verify::check_urc_growth(&UrcSpec::chain(), 1..=12, &p)?;
            let tree_spec = UrcSpec {
                family: UrcFamily::Tree { branching: 2 },
                ..UrcSpec::chain()
            };
            let tree = verify::check_urc_growth(&tree_spec, 1..=5, &p)?;
            let grows = |rows: &[verify::UrcRow]| {
                rows.windows(2)
                    .all(|w| w[1].worker1_payoff > w[0].worker1_payoff)
            };
            let passed = grows(&chain) && grows(&tree);
            print_json(&SuiteOutput {
                suite: "urc",
                seed,
                passed,
                report: serde_json::json!({ "chain": chain, "tree": tree }),
            })?;
            Ok(passed)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            workers,
            universe,
            max_data,
            min_data,
            trials,
            seed,
            depth,
            density,
            edge_model,
            max_out_degree,
            params,
            valuation,
            epsilon_rule,
            out,
            plot,
            sequential,
        } => {
            let config = ExperimentConfig {
                n_workers: workers,
                universe_size: universe,
                min_data_per_worker: min_data,
                max_data_per_worker: max_data,
                trials,
                depth,
                density,
                edge_model: match edge_model {
                    EdgeArg::Forward => EdgeModel::Forward,
                    EdgeArg::Adjacent => EdgeModel::Adjacent,
                },
                max_out_degree,
                seed,
                params: params.params(seed),
                valuation: match valuation {
                    ValuationArg::Coverage => ValuationChoice::Coverage,
                    ValuationArg::Entropy => ValuationChoice::Entropy,
                },
                epsilon_rule: match epsilon_rule {
                    EpsilonArg::MeanWorkerValue => EpsilonRule::MeanWorkerValue,
                    EpsilonArg::CollectedPerWorker => EpsilonRule::CollectedPerWorker,
                    EpsilonArg::MeanDatasetSize => EpsilonRule::MeanDatasetSize,
                },
                execution: if sequential {
                    Execution::Sequential
                } else {
                    Execution::Parallel
                },
            };
            let results = simctl::run_experiment(&config)?;
            match &out {
                Some(path) => simctl::export_results(&results, ExportFormat::from_path(path), path)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => simctl::write_csv(&results, std::io::stdout().lock())?,
            }
            if let Some(path) = &plot {
                simctl::export_results(&results, ExportFormat::PlotJson, path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            for s in &results.summary {
                eprintln!(
                    "{:<16} collected {:>8.3} ± {:<7.3} expenditure {:>8.3} ± {:<7.3} reached {:>5.2}",
                    s.mechanism.name(),
                    s.mean_collected_value,
                    s.std_collected_value,
                    s.mean_expenditure,
                    s.std_expenditure,
                    s.mean_workers_reached
                );
            }
            Ok(true)
        }
        Command::Verify {
            suite,
            seed,
            instances,
        } => verify_suite(suite, seed, instances),
        Command::Payoff {
            instance,
            mechanism,
            params,
            epsilon,
            universe,
        } => {
            let inst = Instance::from_path(&instance)
                .with_context(|| format!("reading {}", instance.display()))?;
            let v: Box<dyn Valuation> = match &inst.schema {
                Some(schema) => Box::new(EntropyValuation::new(schema.clone())),
                None => {
                    let max_id = inst.all_data().ids().map(|d| d.0 + 1).max().unwrap_or(0);
                    let universe = universe.unwrap_or(max_id);
                    if universe < max_id {
                        bail!("universe {universe} is smaller than the largest item id");
                    }
                    Box::new(CoverageValuation::new(universe))
                }
            };
            let m = match mechanism {
                MechanismArg::Cdm => Mechanism::Cdm(params.params(0)),
                MechanismArg::NondiffEps => Mechanism::NonDiffEps { epsilon },
                MechanismArg::NondiffShapley => Mechanism::NonDiffShapley,
                MechanismArg::DiffEps => Mechanism::DiffEps { epsilon },
                MechanismArg::DirectShapley => Mechanism::DirectShapley,
            };
            let report = m.run(&inst.network, &inst.truthful_profile(), v.as_ref())?;
            print_json(&report)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    par::init_threads_from_env();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
