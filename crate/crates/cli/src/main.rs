use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use responder_core::nuisance::{build_grid, ControlKind, SetConfig};
use responder_core::sim::{self, Scenario, SimulationConfig};
use responder_core::study::{self, DecisionConfig};
use responder_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_EMPTY: u8 = 3;

#[derive(Parser)]
#[command(
    name = "responder",
    version,
    about = "Vaccine responder p-values adjusted with paired control samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Generic,
    Negative,
}

impl From<Kind> for ControlKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Generic => ControlKind::Generic,
            Kind::Negative => ControlKind::Negative,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-participant p-values and FDR decisions for a count table.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.005)]
        alpha_prime: f64,
        #[arg(long, default_value_t = 0.05)]
        fdr: f64,
        #[arg(long, default_value_t = study::DEFAULT_MIN_TOTAL)]
        min_total: u64,
        #[arg(long, value_enum, default_value = "generic")]
        control_kind: Kind,
        /// Grid overrides, e.g. `grid_fp=201,fn_max=0`.
        #[arg(long, default_value = "")]
        grid: String,
        /// Report path. `.json` also writes a `.csv` mirror next to it;
        /// `.csv` writes only the table. JSON goes to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One cell of the Monte Carlo study.
    Simulate {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        n_control: u64,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = sim::DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0.005)]
        alpha_prime: f64,
        /// True control proportion; required when `--n-control` has no
        /// paired default.
        #[arg(long)]
        p_control: Option<f64>,
        #[arg(long, default_value_t = 50_000)]
        n_primary: u64,
        /// Grid overrides on top of the simulation grid.
        #[arg(long, default_value = "")]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the p-value surface over the grid for one participant.
    Surface {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        participant: String,
        /// Grid spec, e.g. `alpha=0.05,fp_max=0.002,grid_fp=201,fn_max=0`.
        #[arg(long, default_value = "")]
        grid: String,
        #[arg(long, value_enum)]
        control_kind: Option<Kind>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("RESPONDER_THREADS") {
        let threads: usize = raw
            .parse()
            .with_context(|| format!("RESPONDER_THREADS = {raw:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Analyze {
            input,
            alpha,
            alpha_prime,
            fdr,
            min_total,
            control_kind,
            grid,
            out,
        } => {
            let records = study::load_study(&input)?;
            let (grid, assume_equal_fn) = study::parse_grid_spec(&grid, SetConfig::default())?;
            let cfg = DecisionConfig {
                alpha,
                alpha_prime,
                fdr,
                min_total,
                control_kind: control_kind.into(),
                assume_equal_fn,
                grid,
            };
            let report = study::analyze_study(records, &cfg)?;
            if !report.excluded.is_empty() {
                eprintln!(
                    "excluded by per-protocol filter ({}): {}",
                    report.excluded.len(),
                    report.excluded.join(", ")
                );
            }
            eprintln!(
                "responders at FDR {fdr}: unadjusted {}, maximally adjusted {}, minimally adjusted {} of {}",
                report.responders_unadjusted,
                report.responders_max_adjusted,
                report.responders_min_adjusted,
                report.participants.len()
            );
            match out {
                Some(path) if path.extension().is_some_and(|e| e == "csv") => {
                    report.write_csv(output(Some(&path))?)?;
                }
                Some(path) => {
                    report.write_json(output(Some(&path))?)?;
                    report.write_csv(output(Some(&path.with_extension("csv")))?)?;
                }
                None => {
                    let mut out = output(None)?;
                    report.write_json(&mut out)?;
                    writeln!(out)?;
                }
            }
        }
        Command::Simulate {
            scenario,
            gamma,
            n_control,
            reps,
            seed,
            alpha,
            alpha_prime,
            p_control,
            n_primary,
            grid,
            out,
        } => {
            let p_control = match p_control.or_else(|| sim::paired_control_proportion(n_control)) {
                Some(p) => p,
                None => bail!(
                    "no paired control proportion for --n-control {n_control}; pass --p-control"
                ),
            };
            let (grid, _) = study::parse_grid_spec(&grid, sim::simulation_grid())?;
            let cfg = SimulationConfig {
                scenario,
                gamma,
                n_primary,
                n_control,
                p_control,
                responder_prob: 0.5,
                reps,
                seed,
                alpha,
                alpha_prime,
                grid,
            };
            let summary = sim::run_cell(&cfg)?;
            study::write_simulation_csv(&[summary], output(out.as_deref())?)?;
        }
        Command::Surface {
            input,
            participant,
            grid,
            control_kind,
            out,
        } => {
            let records = study::load_study(&input)?;
            let Some(record) = records.iter().find(|r| r.participant_id == participant) else {
                bail!(
                    "participant {participant:?} not found in {}",
                    input.display()
                );
            };
            let mut base = SetConfig::default();
            if let Some(kind) = control_kind.map(ControlKind::from).or(record.control_kind) {
                base.control_kind = kind;
            }
            let (cfg, assume_equal_fn) = study::parse_grid_spec(&grid, base)?;
            let grid = build_grid(&record.counts, &cfg, assume_equal_fn)?;
            match grid.p_range() {
                Some((lo, hi)) => eprintln!(
                    "{} points, {} in set, p range [{lo:e}, {hi:e}]",
                    grid.points.len(),
                    grid.in_set_count()
                ),
                None => eprintln!("{} points, confidence set empty", grid.points.len()),
            }
            study::write_surface_csv(&grid, output(out.as_deref())?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = match err.downcast_ref::<Error>() {
                Some(Error::Schema { .. }) => EXIT_SCHEMA,
                Some(Error::EmptyPerProtocol) => EXIT_EMPTY,
                _ => EXIT_FAILURE,
            };
            ExitCode::from(code)
        }
    }
}
