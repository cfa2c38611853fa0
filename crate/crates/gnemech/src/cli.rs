//! Command-line front end: scenario ingestion, solver and equilibrium
//! commands, batch property sweeps, and CSV emission.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::{
    self, verify_gne, DynamicsParams, EquilibriumReport, Method,
};
use crate::mechanism::{self, MessageProfile};
use crate::model::{gen_random_scenario, validate_scenario, RawScenario, Scenario, Variant};
use crate::planner::{self, solve_centralized, CentralizedSolution};
use crate::verification::{
    self, CheckStatus, Property, PropertyReport, TOL_CONSISTENCY,
};
use crate::fixtures;

#[derive(Debug, Parser)]
#[command(name = "gnemech", version, about = "Misinformation-filtering mechanism simulator")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Standard,
    Extended,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::Standard => Variant::Standard,
            VariantArg::Extended => Variant::Extended,
        }
    }
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Scenario JSON file, or a built-in name (tri-sym, paired-cliques,
    /// duopoly-pair).
    #[arg(long)]
    scenario: String,
    /// Override the scenario's price-allocation variant.
    #[arg(long)]
    variant: Option<VariantArg>,
    /// Solver tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Brute-force oracle step, in (0, 0.1].
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    /// Best-response sweep cap for dynamics.
    #[arg(long, default_value_t = 500)]
    max_sweeps: usize,
    /// Damping θ ∈ (0, 1] for dynamics.
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    /// RNG seed for sampling-based checks and scenario generation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample count for the Pareto check.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Output directory for CSV artifacts (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the centralized welfare problem and emit the solution.
    Centralized(CommonArgs),
    /// Construct an equilibrium from the centralized solution and run the
    /// full checker battery.
    GneConstruct(CommonArgs),
    /// Run damped best-response dynamics from the zero profile, then the
    /// checker battery.
    GneDynamics(CommonArgs),
    /// Load an external message profile and run the checker battery on it.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Message-profile JSON file.
        #[arg(long)]
        profile: PathBuf,
    },
    /// Construct and check equilibria over a batch of generated scenarios.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of generated scenarios.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    kind: &'a str,
}

/// Parse arguments, run, and translate the outcome into an exit code:
/// 0 all checks pass, 1 some check failed, 2 validation/convergence error.
pub fn main() -> i32 {
    if let Ok(threads) = std::env::var("GNEMECH_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            // A second initialization (e.g. in tests) is harmless.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(all_passed) => {
            if all_passed {
                0
            } else {
                1
            }
        }
        Err(err) => {
            let message = format!("{err:#}");
            let record = ErrorRecord {
                error: &message,
                kind: "run_failure",
            };
            eprintln!("{}", serde_json::to_string(&record).expect("serializable"));
            2
        }
    }
}

fn load_scenario(common: &CommonArgs) -> Result<Scenario> {
    if common.tol <= 0.0 {
        return Err(anyhow!("--tol must be positive"));
    }
    if !(common.damping > 0.0 && common.damping <= 1.0) {
        return Err(anyhow!("--damping must lie in (0, 1]"));
    }
    if !(common.grid_step > 0.0 && common.grid_step <= 0.1) {
        return Err(anyhow!("--grid-step must lie in (0, 0.1]"));
    }
    let scenario = if let Some(s) = fixtures::by_name(&common.scenario) {
        s
    } else {
        let text = fs::read_to_string(&common.scenario)
            .with_context(|| format!("reading scenario {}", common.scenario))?;
        let raw: RawScenario = serde_json::from_str(&text).context("parsing scenario JSON")?;
        validate_scenario(raw)?
    };
    match common.variant {
        Some(v) => Ok(scenario.with_variant(v.into())?),
        None => Ok(scenario),
    }
}

/// Writer that targets either a file under the output directory or stdout
/// with a section banner.
fn emit(out: &Option<PathBuf>, name: &str, content: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), content)
                .with_context(|| format!("writing {name}"))?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "# {name}")?;
            stdout.write_all(content.as_bytes())?;
        }
    }
    Ok(())
}

fn csv_field(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn solution_csv(solution: &CentralizedSolution) -> String {
    let mut csv = String::from("player_id,action\n");
    for (j, a) in solution.actions.iter().enumerate() {
        csv.push_str(&format!("{j},{}\n", csv_field(*a)));
    }
    csv.push_str("\nwelfare,trust_price,kkt_residual,budget_binding\n");
    csv.push_str(&format!(
        "{},{},{},{}\n",
        csv_field(solution.welfare),
        csv_field(solution.multipliers.trust),
        csv_field(solution.kkt_residual),
        solution.budget_binding
    ));
    csv
}

fn players_csv(report: &EquilibriumReport) -> String {
    let mut csv = String::from("player_id,alpha,eta,tax,utility\n");
    // Government row first; eta stays blank rather than zero — player 0 has
    // no quota.
    csv.push_str(&format!(
        "0,{},,{},{}\n",
        csv_field(report.outcome.lower_bound),
        csv_field(report.outcome.government_tax),
        csv_field(report.utilities[0])
    ));
    for i in 0..report.outcome.filters.len() {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            i + 1,
            csv_field(report.outcome.filters[i]),
            csv_field(report.outcome.min_trust[i]),
            csv_field(report.outcome.taxes[i]),
            csv_field(report.utilities[i + 1])
        ));
    }
    csv
}

fn summary_csv(
    scenario: &Scenario,
    report: &EquilibriumReport,
    checks: &[PropertyReport],
) -> Result<String> {
    let mut actions = vec![report.outcome.lower_bound.clamp(0.0, 1.0)];
    actions.extend(report.outcome.filters.iter().map(|a| a.clamp(0.0, 1.0)));
    let welfare = planner::social_welfare(scenario, &actions)?;
    let budget = checks
        .iter()
        .find(|c| c.property == Property::BudgetBalance)
        .map_or(f64::NAN, |c| c.residual);
    let implementation = checks
        .iter()
        .find(|c| c.property == Property::StrongImplementation && c.status != CheckStatus::NotApplicable)
        .map_or(f64::NAN, |c| c.residual);
    let variant = match scenario.variant() {
        Variant::Standard => "standard",
        Variant::Extended => "extended",
    };
    Ok(format!(
        "welfare,budget_residual,implementation_gap,max_deviation_gain,iterations,variant\n{},{},{},{},{},{}\n",
        csv_field(welfare),
        csv_field(budget),
        csv_field(implementation),
        csv_field(report.max_deviation_gain.unwrap_or(f64::NAN)),
        report.iterations,
        variant
    ))
}

fn properties_csv(checks: &[PropertyReport]) -> String {
    let mut csv = String::from("property,residual,tolerance,status\n");
    for c in checks {
        let status = match c.status {
            CheckStatus::Passed => "passed",
            CheckStatus::Failed => "failed",
            CheckStatus::NotApplicable => "not_applicable",
        };
        csv.push_str(&format!(
            "{},{},{},{}\n",
            c.property.name(),
            csv_field(c.residual),
            csv_field(c.tolerance),
            status
        ));
    }
    csv
}

/// Verify a report, run the battery, and write the three CSV artifacts.
/// Returns whether every executed check (including the deviation search
/// itself) passed.
fn check_and_write(
    scenario: &Scenario,
    mut report: EquilibriumReport,
    oracle: Option<&CentralizedSolution>,
    common: &CommonArgs,
) -> Result<bool> {
    let search = verify_gne(scenario, &report.profile, 300)?;
    report.max_deviation_gain = Some(search.max_gain);
    let checks =
        verification::run_battery(scenario, &report, oracle, common.samples, common.seed)?;
    emit(&common.out, "players.csv", &players_csv(&report))?;
    emit(
        &common.out,
        "summary.csv",
        &summary_csv(scenario, &report, &checks)?,
    )?;
    emit(&common.out, "properties.csv", &properties_csv(&checks))?;
    let gne_ok = search.max_gain <= TOL_CONSISTENCY;
    if !gne_ok {
        eprintln!(
            "{}",
            serde_json::to_string(&ErrorRecord {
                error: &format!(
                    "profitable deviation for player {}: gain {:e}",
                    search.player, search.max_gain
                ),
                kind: "deviation_found",
            })?
        );
    }
    Ok(gne_ok && checks.iter().all(|c| c.passed()))
}

/// One sweep row: a generated scenario, its constructed equilibrium, and the
/// cheap algebraic checks (the deviation search and Pareto sampling are left
/// to the dedicated commands).
#[derive(Debug)]
struct SweepRow {
    index: usize,
    welfare: f64,
    budget_residual: f64,
    feasibility_residual: f64,
    consistency_residual: f64,
    rationality_residual: f64,
    passed: bool,
}

fn sweep_row(index: usize, seed: u64, variant: Variant, tol: f64) -> Result<SweepRow> {
    let players = 3 + (seed % 3) as usize;
    let scenario = gen_random_scenario(seed, players, variant);
    let solution = solve_centralized(&scenario, tol)?;
    let profile = equilibrium::construct_gne(&scenario, &solution)?;
    let report = equilibrium::report(&scenario, profile, Method::Constructed, 0, 0.0)?;
    let budget = verification::check_budget_balance(&report.outcome);
    let feasibility = verification::check_feasibility(&scenario, &report.outcome)?;
    let consistency =
        verification::check_price_consistency(&scenario, &report.profile, &report.outcome);
    let rationality = verification::check_individual_rationality(&scenario, &report)?;
    let checks = [&budget, &feasibility, &consistency, &rationality];
    let mut actions = vec![report.outcome.lower_bound.clamp(0.0, 1.0)];
    actions.extend(report.outcome.filters.iter().map(|a| a.clamp(0.0, 1.0)));
    Ok(SweepRow {
        index,
        welfare: planner::social_welfare(&scenario, &actions)?,
        budget_residual: budget.residual,
        feasibility_residual: feasibility.residual,
        consistency_residual: consistency.residual,
        rationality_residual: rationality.residual,
        passed: checks.iter().all(|c| c.passed()),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Centralized(common) => {
            let scenario = load_scenario(&common)?;
            let solution = solve_centralized(&scenario, common.tol)?;
            emit(&common.out, "solution.csv", &solution_csv(&solution))?;
            Ok(true)
        }
        Command::GneConstruct(common) => {
            let scenario = load_scenario(&common)?;
            let solution = solve_centralized(&scenario, common.tol)?;
            let profile = equilibrium::construct_gne(&scenario, &solution)?;
            let report =
                equilibrium::report(&scenario, profile, Method::Constructed, 0, 0.0)?;
            check_and_write(&scenario, report, Some(&solution), &common)
        }
        Command::GneDynamics(common) => {
            let scenario = load_scenario(&common)?;
            // Message-level residuals are iterated two decades below the
            // requested tolerance: quota claims lag allocations by the
            // message residual, so stopping exactly at --tol would leave
            // O(tol) slack in the algebraic checks downstream.
            let params = DynamicsParams {
                damping: common.damping,
                tol: common.tol * 1e-2,
                max_sweeps: common.max_sweeps,
                ..DynamicsParams::default()
            };
            let report =
                equilibrium::iterate_dynamics(&scenario, equilibrium::zero_profile(&scenario), &params)?;
            if report.message_residual > common.tol {
                return Err(anyhow!(
                    "dynamics did not converge: residual {:e} after {} sweeps",
                    report.message_residual,
                    report.iterations
                ));
            }
            let solution = solve_centralized(&scenario, common.tol)?;
            check_and_write(&scenario, report, Some(&solution), &common)
        }
        Command::Verify { common, profile } => {
            let scenario = load_scenario(&common)?;
            let text = fs::read_to_string(&profile)
                .with_context(|| format!("reading profile {}", profile.display()))?;
            let parsed: MessageProfile =
                serde_json::from_str(&text).context("parsing profile JSON")?;
            mechanism::validate_profile(&parsed, &scenario)?;
            let report = equilibrium::report(&scenario, parsed, Method::Dynamics, 0, f64::NAN)?;
            let solution = solve_centralized(&scenario, common.tol)?;
            check_and_write(&scenario, report, Some(&solution), &common)
        }
        Command::Sweep { common, count } => {
            if common.damping <= 0.0 || common.damping > 1.0 {
                return Err(anyhow!("--damping must lie in (0, 1]"));
            }
            let variant = common.variant.map_or(Variant::Standard, Variant::from);
            let mut rows: Vec<SweepRow> = (0..count)
                .into_par_iter()
                .map(|k| sweep_row(k, common.seed + k as u64, variant, common.tol))
                .collect::<Result<_>>()?;
            rows.sort_by_key(|r| r.index);
            let mut csv = String::from(
                "index,seed,welfare,budget_residual,feasibility_residual,consistency_residual,rationality_residual,passed\n",
            );
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    r.index,
                    common.seed + r.index as u64,
                    csv_field(r.welfare),
                    csv_field(r.budget_residual),
                    csv_field(r.feasibility_residual),
                    csv_field(r.consistency_residual),
                    csv_field(r.rationality_residual),
                    r.passed
                ));
            }
            emit(&common.out, "sweep.csv", &csv)?;
            Ok(rows.iter().all(|r| r.passed))
        }
    }
}
