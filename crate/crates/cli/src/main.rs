mod input;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hyperarm_core::bench::{random_reduced, run_bench, BenchOptions, StateSelection};
use hyperarm_core::config::ArmConfigFile;
use hyperarm_core::meta::EscalationOutcome;
use hyperarm_core::sector::SectorDecomposition;
use hyperarm_core::{
    classic_forward, expand_configuration, mark_damaged, reduced_forward, restructure,
    solve_with_escalation, ArmLayout, FrozenAngles, KinematicsError, ReducedConfiguration,
    SolveOptions, TargetMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_SELF_CHECK: u8 = 4;

/// Largest classic/reduced FK disagreement accepted by `fk`.
const FK_DIVERGENCE_LIMIT: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "hyperarm",
    version,
    about = "Hyper-redundant arm kinematics harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Arm configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the output to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, short)]
    verbose: bool,
}

#[derive(clap::Args)]
struct SolveArgs {
    /// Target pose: 12 numbers (rotation row-major, translation) or 7
    /// (translation, quaternion qw qx qy qz); inline or a file.
    #[arg(long, allow_hyphen_values = true)]
    target: String,
    /// Initial joint values, Q or two per link; inline or a file. Defaults to
    /// the straight arm.
    #[arg(long, allow_hyphen_values = true)]
    q: Option<String>,
    /// Track the position only.
    #[arg(long)]
    position_only: bool,
    /// Write every iterate as CSV: iteration, then the Q values.
    #[arg(long)]
    trajectory_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// End-effector pose from the classic and the reduced model.
    Fk {
        #[command(flatten)]
        common: Common,
        /// Joint values, Q or two per link; inline or a file. Random when absent.
        #[arg(long, allow_hyphen_values = true)]
        q: Option<String>,
    },
    /// Solve for a target pose, restructuring on failure.
    Ik {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Damage links at their current angles, then solve.
    Damage {
        #[command(flatten)]
        common: Common,
        /// One-based link numbers, comma-separated.
        #[arg(long, default_value = "")]
        links: String,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Time one step of the classic and the reduced solver.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Number of links; defaults to the configuration's.
        #[arg(long)]
        links: Option<usize>,
        /// `all` or a single state index.
        #[arg(long, default_value = "all")]
        states: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Also time the O(N^2) classic variant.
        #[arg(long)]
        naive: bool,
    },
}

enum Failure {
    Input(anyhow::Error),
    SelfCheck(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<KinematicsError> for Failure {
    fn from(e: KinematicsError) -> Self {
        Failure::Input(e.into())
    }
}

type Outcome = std::result::Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Fk { common, q } => cmd_fk(&common, q.as_deref()),
        Command::Ik { common, solve } => cmd_ik(&common, &solve, ""),
        Command::Damage {
            common,
            links,
            solve,
        } => cmd_ik(&common, &solve, &links),
        Command::Bench {
            common,
            links,
            states,
            repeats,
            naive,
        } => cmd_bench(&common, links, &states, repeats, naive),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::SelfCheck(msg)) => {
            eprintln!("self-check failed: {msg}");
            ExitCode::from(EXIT_SELF_CHECK)
        }
    }
}

fn load_config(common: &Common) -> Result<ArmConfigFile> {
    let path = common
        .config
        .as_ref()
        .context("--config is required for this command")?;
    let mut cfg = ArmConfigFile::from_path(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(common: &Common, text: &str) -> Result<()> {
    print!("{text}");
    if let Some(path) = &common.out {
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn initial_configuration(
    decomp: &SectorDecomposition,
    layout: &ArmLayout,
    arg: Option<&str>,
) -> Result<ReducedConfiguration> {
    match arg {
        Some(a) => input::configuration_from_values(decomp, layout, input::numbers_from_arg(a)?),
        None => Ok(ReducedConfiguration::zeros(decomp.num_vars())),
    }
}

fn cmd_fk(common: &Common, q_arg: Option<&str>) -> Outcome {
    let cfg = load_config(common)?;
    let layout = cfg.layout()?;
    let decomp = SectorDecomposition::new(&layout);
    let q = match q_arg {
        Some(a) => input::configuration_from_values(&decomp, &layout, input::numbers_from_arg(a)?)?,
        None => random_reduced(&decomp, &mut ChaCha8Rng::seed_from_u64(cfg.seed)),
    };
    let reduced = reduced_forward(&decomp, &layout, &q)?.end_effector;
    let full = expand_configuration(&decomp, &layout, &q)?;
    let classic = classic_forward(&layout, &full)?.end_effector;
    let divergence = classic.max_abs_diff(&reduced);

    let mut text = String::new();
    let _ = writeln!(text, "classic:\n{classic}");
    let _ = writeln!(text, "reduced:\n{reduced}");
    let _ = writeln!(text, "divergence={divergence:e}");
    emit(common, &text)?;
    // NaN fails the check.
    let within = divergence <= FK_DIVERGENCE_LIMIT;
    if !within {
        return Err(Failure::SelfCheck(format!(
            "classic and reduced FK differ by {divergence:e}"
        )));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_ik(common: &Common, args: &SolveArgs, damage: &str) -> Outcome {
    let cfg = load_config(common)?;
    let d = cfg.link_length;
    let mut state = cfg.controller_state()?;
    let layout = state.layout(d)?;
    let decomp = SectorDecomposition::new(&layout);
    let target = input::target_from_values(&input::numbers_from_arg(&args.target)?)
        .context("invalid --target")?;
    let q0 = initial_configuration(&decomp, &layout, args.q.as_deref())?;
    let physical = expand_configuration(&decomp, &layout, &q0)?;

    let links = input::parse_links(damage, cfg.num_links)?;
    for &link in &links {
        let frozen = FrozenAngles::new(physical.phi(link), physical.theta(link));
        state = mark_damaged(&state, link, frozen)?;
    }
    if !links.is_empty() {
        // Validates the transition; the pose carries over exactly.
        restructure(&decomp, &layout, &physical, &state.layout(d)?)?;
    }
    let frozen_before = state.frozen().clone();

    let options = SolveOptions {
        mode: if args.position_only {
            TargetMode::PositionOnly
        } else {
            TargetMode::Pose
        },
        record_trajectory: args.trajectory_out.is_some(),
        ..SolveOptions::default()
    };
    let outcome = solve_with_escalation(state, d, &physical, &target, &cfg.settings, &options)?;
    let final_physical = outcome.physical_configuration()?;

    for (&link, a) in &frozen_before {
        let (phi, theta) = (final_physical.phi(link), final_physical.theta(link));
        if phi.to_bits() != a.phi.to_bits() || theta.to_bits() != a.theta.to_bits() {
            return Err(Failure::SelfCheck(format!(
                "frozen angles of link {} moved",
                link + 1
            )));
        }
    }

    if common.verbose {
        for (i, a) in outcome.attempts.iter().enumerate() {
            eprintln!(
                "attempt {i}: k={} control_vars={} status={} iterations={} position_error={:e}",
                a.max_body,
                a.control_vars,
                a.report.status.as_str(),
                a.report.iterations,
                a.report.position_error
            );
        }
    }
    if let Some(path) = &args.trajectory_out {
        write_trajectory(path, &outcome)?;
    }
    emit(
        common,
        &report_text(&outcome, &frozen_before, cfg.num_links),
    )?;
    Ok(if outcome.converged() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NOT_CONVERGED)
    })
}

fn report_text(
    outcome: &EscalationOutcome,
    frozen: &std::collections::BTreeMap<usize, FrozenAngles>,
    num_links: usize,
) -> String {
    let report = outcome.final_report();
    let total: usize = outcome.attempts.iter().map(|a| a.report.iterations).sum();
    let heads: Vec<String> = outcome
        .state
        .heads()
        .iter()
        .map(|h| (h + 1).to_string())
        .collect();
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:e}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut text = String::new();
    let _ = writeln!(text, "status={}", report.status.as_str());
    let _ = writeln!(text, "iterations={}", report.iterations);
    let _ = writeln!(text, "total_iterations={total}");
    let _ = writeln!(text, "restructures={}", outcome.restructures());
    let _ = writeln!(text, "max_body={}", outcome.state.max_body());
    let _ = writeln!(text, "control_vars={}", outcome.decomposition.num_vars());
    let _ = writeln!(text, "num_links={num_links}");
    let _ = writeln!(text, "heads={}", heads.join(","));
    let _ = writeln!(text, "position_error={:e}", report.position_error);
    let _ = writeln!(text, "orientation_error={:e}", report.orientation_error);
    let _ = writeln!(text, "q={}", join(outcome.configuration.values()));
    if !frozen.is_empty() {
        let links: Vec<String> = frozen.keys().map(|l| (l + 1).to_string()).collect();
        let _ = writeln!(text, "damaged={}", links.join(","));
        let _ = writeln!(text, "frozen_unchanged=true");
    }
    text
}

/// One row per iterate across all attempts; rows are as long as the `Q` of
/// their attempt.
fn write_trajectory(path: &Path, outcome: &EscalationOutcome) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    let widest = outcome
        .attempts
        .iter()
        .map(|a| a.control_vars)
        .max()
        .unwrap_or(0);
    let mut header = vec!["iteration".to_string()];
    header.extend((1..=widest).map(|i| format!("q{i}")));
    writer.write_record(&header)?;
    let mut iteration = 0usize;
    for attempt in &outcome.attempts {
        let Some(rows) = &attempt.report.trajectory else {
            continue;
        };
        for q in rows {
            let mut row = vec![iteration.to_string()];
            row.extend(q.values().iter().map(|v| format!("{v:e}")));
            writer.write_record(&row)?;
            iteration += 1;
        }
    }
    writer.flush()?;
    Ok(())
}

fn cmd_bench(
    common: &Common,
    links: Option<usize>,
    states: &str,
    repeats: usize,
    naive: bool,
) -> Outcome {
    let cfg = match &common.config {
        Some(_) => Some(load_config(common)?),
        None => None,
    };
    let num_links = links
        .or(cfg.as_ref().map(|c| c.num_links))
        .context("--links or --config is required")?;
    let mut opts = BenchOptions::new(num_links);
    opts.repeats = repeats;
    opts.naive = naive;
    opts.seed = common.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    if let Some(c) = &cfg {
        opts.link_length = c.link_length;
        opts.settings = c.settings;
    }
    opts.states = match states {
        "all" => StateSelection::All,
        a => StateSelection::One(
            a.parse()
                .with_context(|| format!("--states must be 'all' or a state index, got '{a}'"))?,
        ),
    };
    let report = match run_bench(&opts) {
        Ok(r) => r,
        Err(KinematicsError::InvalidState(msg)) => return Err(Failure::SelfCheck(msg)),
        Err(e) => return Err(e.into()),
    };

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(hyperarm_core::bench::BenchRecord::CSV_HEADER)
        .context("csv")?;
    for r in &report.records {
        writer.write_record(r.csv_fields()).context("csv")?;
    }
    let bytes = writer.into_inner().context("csv")?;
    let csv_text = String::from_utf8(bytes).context("csv")?;
    let slope = report
        .dynamic_slope
        .map(|s| format!("{s:.4}"))
        .unwrap_or_else(|| "n/a".into());
    match &common.out {
        Some(path) => {
            std::fs::write(path, &csv_text)
                .with_context(|| format!("cannot write {}", path.display()))?;
            for r in &report.records {
                let label = match r.state {
                    Some(a) => format!("{} state {a}", r.method.as_str()),
                    None => r.method.as_str().to_string(),
                };
                if r.skipped {
                    println!("{label}: skipped");
                } else {
                    println!(
                        "{label}: control_vars={} t_step_s={:e}",
                        r.control_vars, r.t_step_s
                    );
                }
            }
            println!("dynamic_loglog_slope={slope}");
        }
        None => {
            print!("{csv_text}");
            eprintln!("dynamic_loglog_slope={slope}");
        }
    }
    Ok(ExitCode::SUCCESS)
}
