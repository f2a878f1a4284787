//! `rayserde` command-line front end.
//!
//! Exit codes: 0 success, 1 contract or format error, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::CommonArgs;

/// Error in how the tool was invoked, as opposed to bad data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "rayserde", version, about = "Ray-aligned serialization of sparse LiDAR voxels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Point cloud, `.csv` (x,y,z,intensity) or little-endian f32 binary.
    #[arg(long, value_name = "PATH")]
    pub cloud: Option<PathBuf>,
    /// Precomputed sector template; its dims and sector width replace the configured ones.
    #[arg(long, value_name = "PATH")]
    pub template: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a dense sector template and write it to `-o FILE`.
    BuildTemplate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Serialize a cloud's voxels into per-sector sequences (JSON lines).
    Serialize {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        inputs: InputArgs,
    },
    /// Check that serializing and scattering back is the identity.
    RoundtripCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        inputs: InputArgs,
    },
    /// Ray-cast a scene and write the point cloud.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON list of boxes `{id, center, size, role}`; defaults to the seeded standard scene.
        #[arg(long, value_name = "PATH")]
        scene: Option<PathBuf>,
        /// Leave out the ground plane.
        #[arg(long)]
        no_ground: bool,
    },
    /// Compare context-window coherence of strategies on the simulated suite.
    Metrics {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of simulated scenes.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Gradient check of the selective scan against finite differences.
    SsmCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 64)]
        len: usize,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 8)]
        state_dim: usize,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Run one sector block over a cloud (or a simulated scene).
    SectorForward {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        inputs: InputArgs,
    },
    /// Time template lookup plus sort separately from the scan.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Voxel counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        runs: Option<usize>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildTemplate { common } => commands::build_template_cmd(&common),
        Command::Serialize { common, inputs } => commands::serialize(&common, &inputs),
        Command::RoundtripCheck { common, inputs } => commands::roundtrip_check(&common, &inputs),
        Command::Simulate {
            common,
            scene,
            no_ground,
        } => commands::simulate(&common, scene, !no_ground),
        Command::Metrics { common, scenes } => commands::metrics(&common, scenes),
        Command::SsmCheck {
            common,
            len,
            channels,
            state_dim,
            eps,
        } => commands::ssm_check(&common, len, channels, state_dim, eps),
        Command::SectorForward { common, inputs } => commands::sector_forward(&common, &inputs),
        Command::Bench { common, sizes, runs } => commands::bench(&common, sizes, runs),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<rayserde::Error>() {
        Some(rayserde::Error::Config { .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RAYSERDE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
