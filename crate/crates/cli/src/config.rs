//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use rayserde::lidar::SensorModel;
use rayserde::metrics::MetricsOptions;
use rayserde::sector::{sector_count, SectorConfig};
use rayserde::sector_mamba::{BlockConfig, Precision};
use rayserde::serialize::Axis;
use rayserde::voxel::{Reduce, VoxelGridSpec};

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    Ray,
    Hilbert,
    Morton,
    Axis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PrecisionFlag {
    F32,
    F64,
}

impl From<PrecisionFlag> for Precision {
    fn from(p: PrecisionFlag) -> Self {
        match p {
            PrecisionFlag::F32 => Precision::F32,
            PrecisionFlag::F64 => Precision::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// `[Z, Y, X]`
    pub dims: [u32; 3],
    /// `[dz, dy, dx]`, meters.
    pub voxel_size: [f64; 3],
    /// World height of the bottom of layer 0; the BEV middle sits at the ego.
    pub z_min: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dims: [10, 256, 256],
            voxel_size: [0.5; 3],
            z_min: -0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Number of simulated scenes; scene ids are `seed .. seed + scenes`.
    pub scenes: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { scenes: 20 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub cloud: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub scene: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![10_000, 100_000, 1_000_000],
            runs: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; absent means one per core.
    pub workers: Option<usize>,
    pub precision: Precision,
    pub output: PathBuf,
    pub delta_theta: f64,
    /// The first entry is the baseline of paired comparisons.
    pub strategies: Vec<StrategyName>,
    pub axis_priority: [Axis; 3],
    pub reduce: Reduce,
    pub grid: GridConfig,
    pub inputs: Inputs,
    pub metrics: MetricsOptions,
    pub suite: SuiteConfig,
    pub block: BlockConfig,
    pub sensor: SensorModel,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: None,
            precision: Precision::F64,
            output: PathBuf::from("out"),
            delta_theta: 60.0,
            strategies: vec![StrategyName::Ray, StrategyName::Hilbert],
            axis_priority: [Axis::Z, Axis::Y, Axis::X],
            reduce: Reduce::Mean,
            grid: GridConfig::default(),
            inputs: Inputs::default(),
            metrics: MetricsOptions::default(),
            suite: SuiteConfig::default(),
            block: BlockConfig::default(),
            sensor: SensorModel::default(),
            bench: BenchConfig::default(),
        }
    }
}

fn triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected three comma-separated values, got `{s}`"))
}

fn parse_dims(s: &str) -> Result<[u32; 3], String> {
    triple(s)
}

fn parse_voxel_size(s: &str) -> Result<[f64; 3], String> {
    triple(s)
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// TOML config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "Z,Y,X", value_parser = parse_dims)]
    pub dims: Option<[u32; 3]>,
    #[arg(long, value_name = "DZ,DY,DX", value_parser = parse_voxel_size)]
    pub voxel_size: Option<[f64; 3]>,
    /// Sector width in degrees; must divide 360.
    #[arg(long, value_name = "DEG")]
    pub dtheta: Option<f64>,
    /// One or more strategies, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub strategy: Option<Vec<StrategyName>>,
    /// Context window size.
    #[arg(long = "K", value_name = "INT")]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionFlag>,
    /// Output directory (a file path for build-template).
    #[arg(short = 'o', long = "output", value_name = "PATH")]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("config: cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config: {}: {e}", path.display())).into())
    }

    /// Defaults, then `--config`, then flags.
    pub fn resolve(args: &CommonArgs) -> anyhow::Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        if let Some(d) = args.dims {
            cfg.grid.dims = d;
        }
        if let Some(v) = args.voxel_size {
            cfg.grid.voxel_size = v;
        }
        if let Some(d) = args.dtheta {
            cfg.delta_theta = d;
        }
        if let Some(s) = &args.strategy {
            cfg.strategies = s.clone();
        }
        if let Some(k) = args.k {
            cfg.metrics.k = k;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(w) = args.workers {
            cfg.workers = Some(w);
        }
        if let Some(p) = args.precision {
            cfg.precision = p.into();
        }
        if let Some(o) = &args.output {
            cfg.output = o.clone();
        }
        cfg.metrics.delta_theta = cfg.delta_theta;
        cfg.block.in_channels = cfg.reduce.channels();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        sector_count(self.delta_theta)?;
        self.grid_spec()?;
        self.sensor.validate()?;
        if self.strategies.is_empty() {
            return Err(UsageError("strategies: at least one strategy is required".into()).into());
        }
        if self.workers == Some(0) {
            return Err(UsageError("workers: must be >= 1".into()).into());
        }
        for (field, path) in [
            ("inputs.cloud", &self.inputs.cloud),
            ("inputs.template", &self.inputs.template),
            ("inputs.scene", &self.inputs.scene),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(UsageError(format!("{field}: {} does not exist", p.display())).into());
                }
            }
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> rayserde::Result<VoxelGridSpec> {
        VoxelGridSpec::ego_centered(self.grid.voxel_size, self.grid.dims, self.grid.z_min)
    }

    pub fn sector_config(&self) -> rayserde::Result<SectorConfig> {
        SectorConfig::for_grid(&self.grid_spec()?, self.delta_theta)
    }
}
