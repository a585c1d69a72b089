//! Command-line front end: experiment runs, summaries, curve export, the
//! coordination-barrier demos, and a Welch-test calculator.

use clap::{Args, Parser, Subcommand};
use marl_lab::harness::{self, ExperimentSpec};
use marl_lab::stats::{self, SampleSummary};
use marl_lab::theory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "marl-lab", version, about = "Multi-agent RL laboratory", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a spec file.
    Run(RunArgs),
    /// Recompute the summary from persisted records.
    Summarize(SummarizeArgs),
    /// Export rolling-mean learning curves as CSV.
    Curves(CurvesArgs),
    /// Coordination-barrier demonstrations.
    #[command(subcommand)]
    Theory(TheoryCmd),
    /// Statistical utilities.
    #[command(subcommand)]
    Stats(StatsCmd),
}

#[derive(Args)]
struct RunArgs {
    /// Spec file (`key = value` lines).
    #[arg(long)]
    spec: PathBuf,
    /// Reduce to 200 episodes on the first seed.
    #[arg(long)]
    smoke: bool,
    /// Output directory (overrides the spec; MARL_LAB_OUT overrides both).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Directory holding records_*.csv files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Print the summary as JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Final-window size in episodes.
    #[arg(long, default_value_t = harness::DEFAULT_FINAL_WINDOW)]
    window: usize,
}

#[derive(Args)]
struct CurvesArgs {
    /// Directory holding records_*.csv files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Rolling window in episodes.
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Downsampling stride in episodes.
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TheoryCmd {
    /// Potential-based shaping preserves greedy policies on random MDPs.
    ShapingCheck(ShapingCheckArgs),
    /// Pure Nash equilibria vs the global optimum on the bundled game.
    NashDemo,
    /// Counterfactual action-combination counts.
    Counterfactual(CounterfactualArgs),
    /// Transition-kernel drift between early and late training windows.
    Drift(DriftArgs),
}

#[derive(Args)]
struct ShapingCheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 6)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    actions: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args)]
struct CounterfactualArgs {
    /// Action space size per agent.
    #[arg(long)]
    actions: u64,
    /// Number of agents.
    #[arg(long)]
    agents: u64,
}

#[derive(Args)]
struct DriftArgs {
    /// Directory holding transitions_*.csv files.
    #[arg(long = "in")]
    input: PathBuf,
    /// Sample floor per (state-bucket, action) cell.
    #[arg(long, default_value_t = theory::DEFAULT_MIN_CELL_SAMPLES)]
    min_samples: usize,
}

#[derive(Subcommand)]
enum StatsCmd {
    /// Welch's t-test and Cohen's d from two `mean,std,n` summaries.
    Welch(WelchArgs),
}

#[derive(Args)]
struct WelchArgs {
    /// First group as `mean,std,n`.
    #[arg(long)]
    a: String,
    /// Second group as `mean,std,n`.
    #[arg(long)]
    b: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), Box<dyn std::error::Error>> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Curves(args) => cmd_curves(args),
        Command::Theory(cmd) => cmd_theory(cmd),
        Command::Stats(StatsCmd::Welch(args)) => cmd_welch(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut spec: ExperimentSpec = harness::load_spec(&args.spec)?;
    if args.smoke {
        spec.smoke_mode = true;
    }
    if let Some(out) = args.out {
        spec.out_dir = out;
    }
    if let Ok(out) = std::env::var("MARL_LAB_OUT") {
        if !out.is_empty() {
            spec.out_dir = PathBuf::from(out);
        }
    }
    let episodes = spec.effective_episodes();
    let seeds = spec.effective_seeds();
    println!(
        "running {} algorithm(s) x {} seed(s), {} episodes each -> {}",
        spec.algorithms.len(),
        seeds.len(),
        episodes,
        spec.out_dir.display()
    );
    let output = harness::run(&spec)?;
    for status in &output.statuses {
        match &status.error {
            None => println!("  {} seed {}: ok", status.algorithm, status.seed),
            Some(e) => println!("  {} seed {}: FAILED ({e})", status.algorithm, status.seed),
        }
    }
    print_summary_table(&output.summary);
    println!("summary written to {}", spec.out_dir.join("summary.json").display());
    Ok(())
}

fn print_summary_table(summary: &harness::RunSummary) {
    println!("final-window (last {} episodes) across seeds:", summary.window);
    println!("  {:<10} {:>22} {:>22}", "algorithm", "reward (mean+-std)", "coverage (mean+-std)");
    for algo in &summary.algorithms {
        println!(
            "  {:<10} {:>12.3} +- {:<7.3} {:>12.3} +- {:<7.3}",
            algo.algorithm,
            algo.final_reward.mean,
            algo.final_reward.std,
            algo.landmark_coverage.mean,
            algo.landmark_coverage.std,
        );
    }
    for pair in &summary.comparisons {
        let r = &pair.final_reward;
        println!(
            "  {} vs {}: t = {:.3}, df = {:.2}, p = {:.3e}, d = {:.2}",
            pair.a, pair.b, r.t_statistic, r.degrees_of_freedom, r.p_value, r.cohens_d
        );
    }
    for ratio in &summary.coverage_ratios_vs_mappo {
        println!(
            "  coverage ratio {} / MAPPO = {:.2}x",
            ratio.algorithm, ratio.ratio_vs_mappo
        );
    }
}

fn cmd_summarize(args: SummarizeArgs) -> Result<(), Box<dyn std::error::Error>> {
    let records = harness::read_all_records(&args.input)?;
    let summary = harness::summarize(&records, args.window)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print_summary_table(&summary);
    }
    Ok(())
}

fn cmd_curves(args: CurvesArgs) -> Result<(), Box<dyn std::error::Error>> {
    let records = harness::read_all_records(&args.input)?;
    let csv = harness::export_curves(&records, args.window, args.stride)?;
    std::fs::write(&args.out, &csv)?;
    println!(
        "wrote {} curve rows to {}",
        csv.lines().count().saturating_sub(1),
        args.out.display()
    );
    Ok(())
}

fn cmd_theory(cmd: TheoryCmd) -> Result<(), Box<dyn std::error::Error>> {
    match cmd {
        TheoryCmd::ShapingCheck(args) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let report = theory::shaping_invariance_check(
                args.instances,
                args.states,
                args.actions,
                &mut rng,
            );
            println!(
                "shaping invariance: {} random {}-state/{}-action MDPs with random potentials",
                report.instances, args.states, args.actions
            );
            println!(
                "  greedy-policy mismatches: {} (shaped values shift by the potential; max deviation {:.2e})",
                report.policy_mismatches, report.max_value_shift_error
            );
            println!("{}", serde_json::to_string(&report)?);
        }
        TheoryCmd::NashDemo => {
            let game = theory::stag_hunt();
            let analysis = theory::nash_vs_global(&game)?;
            println!("bundled 2x2 coordination game (cooperate = action 0):");
            println!("  pure Nash profiles:  {:?}", analysis.pure_nash);
            println!("  global optima:       {:?}", analysis.global_optima);
            println!(
                "  misaligned: {} (a Nash profile of the individual objectives need not be a global optimum)",
                analysis.misaligned
            );
            println!("{}", serde_json::to_string(&analysis)?);
        }
        TheoryCmd::Counterfactual(args) => {
            let counts = theory::counterfactual_count(args.actions, args.agents)?;
            println!(
                "one agent among {} with {} actions each reasons over other agents' behavior:",
                args.agents, args.actions
            );
            println!(
                "  joint action combinations of the others (|A|^(n-1)): {}",
                counts.others_joint_actions
            );
            println!(
                "  subsets of those combinations (2^(|A|^(n-1))):       {}",
                counts.joint_action_subsets
            );
            println!(
                "  note: the first counts the joint actions themselves, the second counts subsets of them; both are reported."
            );
        }
        TheoryCmd::Drift(args) => cmd_drift(args)?,
    }
    Ok(())
}

fn cmd_drift(args: DriftArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(&args.input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("transitions_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(format!("no transitions_*.csv files under {}", args.input.display()).into());
    }
    for file in files {
        let events = harness::read_transitions(&file)?;
        let n_episodes = events.iter().map(|e| e.episode + 1).max().unwrap_or(0);
        let quarter = n_episodes / 4;
        if quarter == 0 {
            println!("{}: too few episodes for drift windows", file.display());
            continue;
        }
        let early = theory::EpisodeWindow::new(0, quarter);
        let late = theory::EpisodeWindow::new(n_episodes - quarter, n_episodes);
        match theory::nonstationarity_drift(&events, &[(early, late)], args.min_samples) {
            Ok(report) => {
                let pair = &report.pairs[0];
                println!(
                    "{}: episodes [{}, {}) vs [{}, {}): mean TV = {:.4} over {} cells",
                    file.display(),
                    pair.early.start,
                    pair.early.end,
                    pair.late.start,
                    pair.late.end,
                    pair.mean_tv,
                    pair.cells.len()
                );
                println!("{}", serde_json::to_string(&report)?);
            }
            Err(e) => println!("{}: {e}", file.display()),
        }
    }
    Ok(())
}

fn parse_summary(text: &str) -> Result<SampleSummary, String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("`{text}`: expected mean,std,n"));
    }
    let mean: f64 = parts[0].parse().map_err(|e| format!("mean: {e}"))?;
    let std: f64 = parts[1].parse().map_err(|e| format!("std: {e}"))?;
    let n: usize = parts[2].parse().map_err(|e| format!("n: {e}"))?;
    SampleSummary::new(mean, std, n).map_err(|e| e.to_string())
}

fn cmd_welch(args: WelchArgs) -> Result<(), Box<dyn std::error::Error>> {
    let a = parse_summary(&args.a)?;
    let b = parse_summary(&args.b)?;
    let result = stats::compare(&a, &b)?;
    println!(
        "welch t = {:.6}, df = {:.4}, two-sided p = {:.6e}, cohen d = {:.4}",
        result.t_statistic, result.degrees_of_freedom, result.p_value, result.cohens_d
    );
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}
