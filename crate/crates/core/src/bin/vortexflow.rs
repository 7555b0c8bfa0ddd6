use std::path::PathBuf;

use clap::{Parser, Subcommand};
use vortexflow::harness::{dispatch, Command};

#[derive(Parser)]
#[command(name = "vortexflow", version, about = "Ginzburg-Landau vortex dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (falls back to VORTEXFLOW_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// GL flow from well-prepared data for each ε, with vortex tracks.
    SimulatePde,
    /// Gradient flow of the renormalized energy.
    SimulateOde,
    /// PDE tracks against the ODE over the ε ladder.
    Compare,
    /// F_ε(u⁰_ε) − πn|log ε| − W over the ε ladder.
    EnergyExpansion,
    /// G, |∇G| and H at seeded random pairs.
    GreenTable,
    /// Fast invariant suite.
    Selftest,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| std::env::var("VORTEXFLOW_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("config error: thread pool: {e}");
            std::process::exit(2);
        }
    }
    let cmd = match cli.cmd {
        Cmd::SimulatePde => Command::SimulatePde,
        Cmd::SimulateOde => Command::SimulateOde,
        Cmd::Compare => Command::Compare,
        Cmd::EnergyExpansion => Command::EnergyExpansion,
        Cmd::GreenTable => Command::GreenTable,
        Cmd::Selftest => Command::Selftest,
    };
    std::process::exit(dispatch(cmd, cli.config.as_deref(), cli.out.as_deref()));
}
