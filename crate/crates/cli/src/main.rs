use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mckean_cli::experiments::{self, TRAJECTORY_FILE};
use mckean_cli::report::OutputDir;
use mckean_cli::{ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "mckean", version, about = "Simulate interacting particle systems and estimate their coefficients")]
struct Cli {
    /// Experiment configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `output.dir`.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate `sim.n` particles and write the trajectory file.
    Simulate,
    /// GL density estimate at (estimate.t0, estimate.x0).
    EstimateDensity {
        /// Trajectory file; simulated from the config when absent.
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// GL drift estimate at (estimate.t0, estimate.x0).
    EstimateDrift {
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// Fourier-quotient estimate of the interaction force.
    EstimateInteraction {
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// Error rates over `replication.n_schedule`.
    BenchRates,
    /// GL error relative to the best fixed bandwidth at `sim.n`.
    OracleRatio,
    /// Bernstein envelopes of empirical-measure deviations.
    CheckConcentration,
    /// Interaction error over the schedule, with a W = 0 control run.
    InteractionConsistency,
    /// simulate, then every estimator on the same trajectory file.
    FullPipeline,
    /// Print the fully expanded configuration.
    ShowConfig,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_doc().serialize());
        return Ok(());
    }
    cfg.validate()?;
    let out = OutputDir::create(&cfg.output_dir)?;
    let pool = experiments::worker_pool()?;
    pool.install(|| -> Result<()> {
        match cli.command {
            Command::Simulate => {
                let ens = experiments::simulate(&cfg, cfg.sim.n, cfg.sim.seed)?;
                ens.save(out.path(TRAJECTORY_FILE))?;
                let rec = experiments::SimulateRecord {
                    kind: "simulate".into(),
                    n: ens.n_particles(),
                    steps: ens.grid().n_steps(),
                    t_end: ens.grid().t_end(),
                    seed: ens.seed(),
                    file: TRAJECTORY_FILE.into(),
                };
                out.ndjson("simulate", &[rec])?;
                println!("wrote {}", out.path(TRAJECTORY_FILE).display());
            }
            Command::EstimateDensity { traj } => {
                let ens = experiments::load_or_simulate(&cfg, traj.as_deref())?;
                let r = experiments::estimate_density(&cfg, &ens)?;
                println!("mu_hat = {} (h = {})", r.value, r.h);
                out.ndjson("density", &[r])?;
            }
            Command::EstimateDrift { traj } => {
                let ens = experiments::load_or_simulate(&cfg, traj.as_deref())?;
                let r = experiments::estimate_drift(&cfg, &ens)?;
                println!("b_hat = {:?} (h1 = {}, h2 = {})", r.b_hat, r.h1, r.h2);
                out.ndjson("drift", &[r])?;
            }
            Command::EstimateInteraction { traj } => {
                let ens = experiments::load_or_simulate(&cfg, traj.as_deref())?;
                let r = experiments::estimate_interaction(&cfg, &ens)?;
                println!("|grad W_hat|^2 = {}, retained {:.3}", r.record.norm_sq, r.record.retained_fraction);
                out.csv("interaction_field", &experiments::field_rows(&r))?;
                out.ndjson("interaction", &[r.record])?;
            }
            Command::BenchRates => {
                let rep = experiments::run_bench_rates(&cfg)?;
                out.ndjson("bench_rates", &rep.records)?;
                out.csv("bench_rates", &rep.rows)?;
                println!(
                    "slopes: density {:.3}, drift {:.3}, chaos {:.3}",
                    rep.density_fit.slope, rep.drift_fit.slope, rep.chaos_fit.slope
                );
            }
            Command::OracleRatio => {
                let rep = experiments::run_oracle_ratio(&cfg)?;
                println!("median ratio: density {:.3}, drift {:.3}", rep.density_median_ratio, rep.drift_median_ratio);
                out.ndjson("oracle_ratio", &[rep])?;
            }
            Command::CheckConcentration => {
                let rep = experiments::run_check_concentration(&cfg)?;
                for e in &rep.entries {
                    println!("{} N={} valid={} var={:.3e}", e.function, e.n, e.envelope.valid, e.deviation_variance);
                }
                out.ndjson("concentration", &rep.entries)?;
            }
            Command::InteractionConsistency => {
                let rep = experiments::run_interaction_consistency(&cfg)?;
                out.csv("interaction_consistency", &rep.rows)?;
                out.ndjson("interaction_consistency", &rep.records)?;
                for r in &rep.rows {
                    println!("N={} error {:.4} +- {:.4}", r.n, r.mean_error_sq, r.stderr);
                }
                println!("null |grad W_hat|^2 = {:.4}, ratio {:.1}", rep.null_norm_sq, rep.null_ratio());
            }
            Command::FullPipeline => {
                let recs = experiments::run_full_pipeline(&cfg, &out)?;
                println!("{} records in {}", recs.len(), out.path("pipeline.ndjson").display());
            }
            Command::ShowConfig => unreachable!(),
        }
        Ok(())
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
