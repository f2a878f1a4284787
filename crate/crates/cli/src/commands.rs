use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use log::{info, warn};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use rayserde::curves::order_for_dims;
use rayserde::lidar::{returns_per_object, simulate_scan, standard_scene, Scene};
use rayserde::metrics::compare_strategies;
use rayserde::sector::{build_template, read_template, write_template, SectorTemplate};
use rayserde::sector_mamba::{sector_mamba_forward, ForwardOptions, Precision, SectorMambaBlock};
use rayserde::serialize::{sequence_to_spatial, spatial_to_sequence, SerializationStrategy};
use rayserde::ssm::{grad_check, selective_scan, SsmParams};
use rayserde::suite::simulated_voxels;

use rayserde::voxel::{read_cloud, voxelize, write_cloud_bin, Cell, SparseVoxelSet};

use crate::config::{CommonArgs, RunConfig, StrategyName};
use crate::{InputArgs, UsageError};

pub const SCHEMA_VERSION: u32 = 1;
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Serialize)]
struct Report<'a, T> {
    schema_version: u32,
    command: &'a str,
    config: &'a RunConfig,
    result: &'a T,
}

fn write_report<T: Serialize>(json: &Path, text: &Path, command: &str, cfg: &RunConfig, result: &T, summary: &str) -> anyhow::Result<()> {
    if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command,
        config: cfg,
        result,
    };
    fs::write(json, serde_json::to_string_pretty(&report)?)?;
    fs::write(text, summary)?;
    print!("{summary}");
    info!("report written to {}", json.display());
    Ok(())
}

/// Report and summary go to `<output>/<command>.json` and `.txt`.
fn emit<T: Serialize>(cfg: &RunConfig, command: &str, result: &T, summary: &str) -> anyhow::Result<()> {
    let dir = &cfg.output;
    write_report(&dir.join(format!("{command}.json")), &dir.join(format!("{command}.txt")), command, cfg, result, summary)
}

fn setup(common: &CommonArgs, inputs: Option<&InputArgs>) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::resolve(common)?;
    if let Some(i) = inputs {
        if i.cloud.is_some() {
            cfg.inputs.cloud = i.cloud.clone();
        }
        if i.template.is_some() {
            cfg.inputs.template = i.template.clone();
        }
        cfg.validate()?;
    }
    if let Some(w) = cfg.workers {
        // a second call in the same process keeps the first pool
        if rayon::ThreadPoolBuilder::new().num_threads(w).build_global().is_err() {
            warn!("worker pool already initialized");
        }
    }
    info!("resolved config: {cfg:?}");
    Ok(cfg)
}

/// Loads `inputs.template` and adopts its grid and sector width, or builds one from the config.
fn template(cfg: &mut RunConfig) -> anyhow::Result<SectorTemplate> {
    let Some(path) = cfg.inputs.template.clone() else {
        return Ok(build_template(&cfg.grid_spec()?, &cfg.sector_config()?)?);
    };
    let t = read_template(&path).with_context(|| format!("reading template {}", path.display()))?;
    if t.dims() != cfg.grid.dims || t.config().delta_theta != cfg.delta_theta {
        info!(
            "using template grid {:?} and sector width {} from {}",
            t.dims(),
            t.config().delta_theta,
            path.display()
        );
    }
    cfg.grid.dims = t.dims();
    cfg.delta_theta = t.config().delta_theta;
    cfg.metrics.delta_theta = cfg.delta_theta;
    let spec = cfg.grid_spec()?;
    if t.config().center != spec.center {
        return Err(UsageError(format!(
            "template: ego center {:?} does not match the grid center {:?}",
            t.config().center,
            spec.center
        ))
        .into());
    }
    Ok(t)
}

/// Voxels of `inputs.cloud`, or of simulated scene `seed` when no cloud is given.
fn voxels(cfg: &RunConfig) -> anyhow::Result<(SparseVoxelSet, String, usize)> {
    let spec = cfg.grid_spec()?;
    match &cfg.inputs.cloud {
        Some(path) => {
            let cloud = read_cloud(path, cfg.seed).with_context(|| format!("reading cloud {}", path.display()))?;
            let v = voxelize(&cloud, &spec, cfg.reduce)?;
            if v.dropped > 0 {
                warn!("{} points fell outside the grid", v.dropped);
            }
            Ok((v.voxels, path.display().to_string(), v.dropped))
        }
        None => {
            let v = simulated_voxels(cfg.seed, &cfg.sensor, &spec)?;
            Ok((v, format!("simulated scene {}", cfg.seed), 0))
        }
    }
}

fn strategies<'a>(cfg: &RunConfig, template: &'a SectorTemplate) -> Vec<SerializationStrategy<'a>> {
    let order = order_for_dims(cfg.grid.dims);
    cfg.strategies
        .iter()
        .map(|s| match s {
            StrategyName::Ray => SerializationStrategy::RayAligned(template),
            StrategyName::Hilbert => SerializationStrategy::Hilbert { order },
            StrategyName::Morton => SerializationStrategy::Morton { order },
            StrategyName::Axis => SerializationStrategy::AxisSort {
                priority: cfg.axis_priority,
            },
        })
        .collect()
}

pub fn build_template_cmd(common: &CommonArgs) -> anyhow::Result<()> {
    let cfg = setup(common, None)?;
    let path = common
        .output
        .clone()
        .ok_or_else(|| UsageError("output: build-template needs `-o FILE`".into()))?;
    let t0 = Instant::now();
    let t = build_template(&cfg.grid_spec()?, &cfg.sector_config()?)?;
    let build_s = t0.elapsed().as_secs_f64();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_template(&t, &path)?;

    #[derive(Serialize)]
    struct Out {
        path: PathBuf,
        dims: [u32; 3],
        cells: usize,
        sectors: u16,
        delta_theta: f64,
        center: [f64; 2],
        bytes: u64,
        build_seconds: f64,
    }
    let out = Out {
        path: path.clone(),
        dims: t.dims(),
        cells: t.num_cells(),
        sectors: t.config().num_sectors(),
        delta_theta: t.config().delta_theta,
        center: t.config().center,
        bytes: fs::metadata(&path)?.len(),
        build_seconds: build_s,
    };
    let summary = format!(
        "template {:?}: {} cells per array, {} sectors of {} deg, written to {} in {:.3} s\n",
        out.dims,
        out.cells,
        out.sectors,
        out.delta_theta,
        path.display(),
        build_s
    );
    let mut json = path.clone().into_os_string();
    json.push(".json");
    let mut text = path.into_os_string();
    text.push(".txt");
    write_report(Path::new(&json), Path::new(&text), "build-template", &cfg, &out, &summary)
}

pub fn serialize(common: &CommonArgs, inputs: &InputArgs) -> anyhow::Result<()> {
    let mut cfg = setup(common, Some(inputs))?;
    let t = template(&mut cfg)?;
    let (v, source, dropped) = voxels(&cfg)?;
    fs::create_dir_all(&cfg.output)?;

    #[derive(Serialize)]
    struct Seq {
        strategy: &'static str,
        file: PathBuf,
        sequences: usize,
        lengths: Vec<(u16, usize)>,
    }
    let mut results = Vec::new();
    let mut summary = format!("{source}: {} voxels ({dropped} points dropped)\n", v.len());
    for s in strategies(&cfg, &t) {
        let (seqs, _) = spatial_to_sequence(&v, &s)?;
        let file = cfg.output.join(format!("sequences_{}.jsonl", s.name()));
        let mut w = BufWriter::new(fs::File::create(&file)?);
        seqs.write_jsonl(&mut w)?;
        w.flush()?;
        summary.push_str(&format!("{:>8}: {} sequences -> {}\n", s.name(), seqs.sectors.len(), file.display()));
        results.push(Seq {
            strategy: s.name(),
            file,
            sequences: seqs.sectors.len(),
            lengths: seqs.sectors.iter().map(|q| (q.sector, q.len())).collect(),
        });
    }
    emit(&cfg, "serialize", &results, &summary)
}

pub fn roundtrip_check(common: &CommonArgs, inputs: &InputArgs) -> anyhow::Result<()> {
    let mut cfg = setup(common, Some(inputs))?;
    let t = template(&mut cfg)?;
    let (v, source, _) = voxels(&cfg)?;

    #[derive(Serialize)]
    struct Check {
        strategy: &'static str,
        voxels: usize,
        identical: bool,
    }
    let mut checks = Vec::new();
    for s in strategies(&cfg, &t) {
        let (seqs, inv) = spatial_to_sequence(&v, &s)?;
        let back = sequence_to_spatial(&seqs, &inv, &v)?;
        checks.push(Check {
            strategy: s.name(),
            voxels: v.len(),
            identical: back == v,
        });
    }
    let ok = checks.iter().all(|c| c.identical);
    let mut summary = format!("{source}: {} voxels\n", v.len());
    for c in &checks {
        summary.push_str(&format!("{:>8}: {}\n", c.strategy, if c.identical { "identity" } else { "MISMATCH" }));
    }
    emit(&cfg, "roundtrip-check", &checks, &summary)?;
    if !ok {
        return Err(rayserde::Error::Contract("round trip is not the identity".into()).into());
    }
    Ok(())
}

pub fn simulate(common: &CommonArgs, scene_path: Option<PathBuf>, ground: bool) -> anyhow::Result<()> {
    let mut cfg = setup(common, None)?;
    if scene_path.is_some() {
        cfg.inputs.scene = scene_path;
        cfg.validate()?;
    }
    let scene = match &cfg.inputs.scene {
        Some(p) => Scene::from_json(&fs::read_to_string(p)?, ground)?,
        None => Scene {
            ground,
            ..standard_scene(cfg.seed)
        },
    };
    let scan = simulate_scan(&scene, &cfg.sensor, cfg.seed)?;
    let vox = voxelize(&scan.cloud, &cfg.grid_spec()?, cfg.reduce)?;
    fs::create_dir_all(&cfg.output)?;
    let cloud_path = cfg.output.join("scan.bin");
    write_cloud_bin(&scan.cloud, &cloud_path)?;
    fs::write(cfg.output.join("scene.json"), scene.to_json())?;

    #[derive(Serialize)]
    struct Out {
        cloud: PathBuf,
        points: usize,
        ground_points: usize,
        voxels: usize,
        dropped: usize,
        returns_per_object: BTreeMap<u32, usize>,
    }
    let out = Out {
        cloud: cloud_path,
        points: scan.cloud.len(),
        ground_points: scan.hits.iter().filter(|h| h.is_none()).count(),
        voxels: vox.voxels.len(),
        dropped: vox.dropped,
        returns_per_object: returns_per_object(&scan, &scene),
    };
    let mut summary = format!(
        "{} points ({} ground), {} voxels, {} boxes\n",
        out.points,
        out.ground_points,
        out.voxels,
        scene.boxes.len()
    );
    for (id, n) in &out.returns_per_object {
        summary.push_str(&format!("  box {id}: {n} returns\n"));
    }
    emit(&cfg, "simulate", &out, &summary)
}

pub fn metrics(common: &CommonArgs, scenes: Option<usize>) -> anyhow::Result<()> {
    let mut cfg = setup(common, None)?;
    if let Some(n) = scenes {
        cfg.suite.scenes = n;
    }
    let spec = cfg.grid_spec()?;
    let t = build_template(&spec, &cfg.sector_config()?)?;
    let suite: Vec<SparseVoxelSet> = (0..cfg.suite.scenes as u64)
        .into_par_iter()
        .map(|i| simulated_voxels(cfg.seed + i, &cfg.sensor, &spec))
        .collect::<rayserde::Result<_>>()?;
    let strats = strategies(&cfg, &t);
    let cmp = compare_strategies(&suite, &strats, &cfg.metrics)?;

    fs::create_dir_all(&cfg.output)?;
    let mut w = BufWriter::new(fs::File::create(cfg.output.join("metrics.csv"))?);
    cmp.write_csv(&mut w)?;
    w.flush()?;

    let mut summary = format!("{} scenes, K = {}, references beyond {} m\n", suite.len(), cfg.metrics.k, cfg.metrics.far_field_m);
    for s in &strats {
        let reports: Vec<_> = cmp.reports.iter().filter(|r| r.strategy == s.name()).collect();
        let mean = |f: &dyn Fn(&rayserde::metrics::CoherenceReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(|r| f(r)).collect();
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        summary.push_str(&format!(
            "{:>8}: dispersion {:.2} m, angular spread {:.1} deg, same-sector {:.3}\n",
            s.name(),
            mean(&|r| r.dispersion_m.mean),
            mean(&|r| r.angular_spread_deg.mean),
            mean(&|r| r.same_sector_frac.mean),
        ));
    }
    for sc in cmp.signs.iter().skip(1) {
        summary.push_str(&format!(
            "{} vs {}: lower dispersion in {}, higher in {}, equal {}, undefined {}\n",
            sc.strategy, sc.baseline, sc.lower, sc.higher, sc.equal, sc.undefined
        ));
    }
    emit(&cfg, "metrics", &cmp, &summary)
}

pub fn ssm_check(common: &CommonArgs, len: usize, channels: usize, state_dim: usize, eps: f64) -> anyhow::Result<()> {
    let cfg = setup(common, None)?;
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(UsageError(format!("eps: {eps} is outside [1e-7, 1e-3]")).into());
    }
    if len == 0 || channels == 0 || state_dim == 0 {
        return Err(UsageError("len, channels and state-dim must be >= 1".into()).into());
    }
    let params = SsmParams::seeded(channels, state_dim, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x: Vec<f64> = (0..len * channels).map(|_| rng.random_range(-1.0..1.0)).collect();
    let report = grad_check(&params, &x, eps)?;
    fs::create_dir_all(&cfg.output)?;
    params.write(cfg.output.join("ssm_params.rssm"))?;

    #[derive(Serialize)]
    struct Out<'a> {
        worst_param: &'a str,
        analytic: f64,
        numeric: f64,
        rel_err: f64,
        eps: f64,
        checked: usize,
        tolerance: f64,
        passed: bool,
        len: usize,
        channels: usize,
        state_dim: usize,
    }
    let passed = report.passed(GRAD_TOLERANCE);
    let out = Out {
        worst_param: &report.worst_param,
        analytic: report.analytic,
        numeric: report.numeric,
        rel_err: report.rel_err,
        eps,
        checked: report.checked,
        tolerance: GRAD_TOLERANCE,
        passed,
        len,
        channels,
        state_dim,
    };
    let summary = format!(
        "{} scalars checked, worst {} (analytic {:.6e}, numeric {:.6e}), rel err {:.3e}: {}\n",
        report.checked,
        report.worst_param,
        report.analytic,
        report.numeric,
        report.rel_err,
        if passed { "ok" } else { "FAILED" }
    );
    emit(&cfg, "ssm-check", &out, &summary)?;
    if !passed {
        return Err(rayserde::Error::Contract(format!("gradient check rel err {:.3e} > {GRAD_TOLERANCE}", report.rel_err)).into());
    }
    Ok(())
}

pub fn sector_forward(common: &CommonArgs, inputs: &InputArgs) -> anyhow::Result<()> {
    let mut cfg = setup(common, Some(inputs))?;
    let t = template(&mut cfg)?;
    let (v, source, _) = voxels(&cfg)?;
    let block = SectorMambaBlock::seeded(cfg.block.clone())?;
    let options = ForwardOptions {
        precision: cfg.precision,
        ..Default::default()
    };
    let t0 = Instant::now();
    let (out, stats) = sector_mamba_forward(&v, &t, &block, options)?;
    let seconds = t0.elapsed().as_secs_f64();

    fs::create_dir_all(&cfg.output)?;
    let path = cfg.output.join("sector_forward.csv");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    write!(w, "z,y,x")?;
    for c in 0..out.channels() {
        write!(w, ",f{c}")?;
    }
    writeln!(w)?;
    for (row, c) in out.coords().iter().enumerate() {
        write!(w, "{},{},{}", c.z, c.y, c.x)?;
        for f in out.feature(row) {
            write!(w, ",{f}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct Out {
        source: String,
        voxels: usize,
        scans: usize,
        sectors: Vec<u16>,
        longest_sequence: usize,
        feature_sum: f64,
        seconds: f64,
        features: PathBuf,
    }
    let result = Out {
        source,
        voxels: out.len(),
        scans: stats.scans,
        sectors: stats.sectors,
        longest_sequence: stats.longest_sequence,
        feature_sum: out.features().iter().sum(),
        seconds,
        features: path,
    };
    let summary = format!(
        "{}: {} voxels, {} scans over sectors {:?}, longest sequence {}, {:.3} s\n",
        result.source, result.voxels, result.scans, result.sectors, result.longest_sequence, seconds
    );
    emit(&cfg, "sector-forward", &result, &summary)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn bench(common: &CommonArgs, sizes: Option<Vec<usize>>, runs: Option<usize>) -> anyhow::Result<()> {
    let mut cfg = setup(common, None)?;
    if let Some(s) = sizes {
        cfg.bench.sizes = s;
    }
    if let Some(r) = runs {
        cfg.bench.runs = r;
    }
    if cfg.bench.runs == 0 {
        return Err(UsageError("bench.runs: must be >= 1".into()).into());
    }

    #[derive(Serialize)]
    struct Row {
        voxels: usize,
        dims: [u32; 3],
        sequences: usize,
        template_build_s: f64,
        lookup_sort_s: f64,
        scan_s: f64,
    }
    let mut rows = Vec::new();
    let mut summary = format!("{:>9} {:>18} {:>12} {:>14} {:>10}\n", "voxels", "dims", "template s", "lookup+sort s", "scan s");
    for &n in &cfg.bench.sizes {
        // keep occupancy at or below one half by widening the BEV plane
        let mut grid = cfg.clone();
        while (grid.grid.dims.iter().map(|&d| d as u64).product::<u64>()) < 2 * n as u64 {
            grid.grid.dims[1] *= 2;
            grid.grid.dims[2] *= 2;
        }
        let spec = grid.grid_spec()?;
        let t0 = Instant::now();
        let t = build_template(&spec, &grid.sector_config()?)?;
        let template_build_s = t0.elapsed().as_secs_f64();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let coords: Vec<Cell> = sample(&mut rng, spec.num_cells() as usize, n)
            .into_iter()
            .map(|i| spec.cell_at(i))
            .collect();
        let features: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = SparseVoxelSet::new(spec, coords, features, 4, vec![1; n])?;
        let ray = SerializationStrategy::RayAligned(&t);
        let params = SsmParams::seeded(4, cfg.block.state_dim, cfg.seed);

        let mut sort_times = Vec::new();
        let mut scan_times = Vec::new();
        let mut sequences = 0;
        for _ in 0..cfg.bench.runs {
            let t0 = Instant::now();
            let (seqs, _) = spatial_to_sequence(&v, &ray)?;
            sort_times.push(t0.elapsed().as_secs_f64());
            sequences = seqs.sectors.len();
            let t0 = Instant::now();
            seqs.sectors
                .par_iter()
                .map(|s| match cfg.precision {
                    Precision::F64 => selective_scan(&s.features, &params).map(|y| y.len()),
                    Precision::F32 => {
                        let x: Vec<f32> = s.features.iter().map(|&f| f as f32).collect();
                        selective_scan(&x, &params).map(|y| y.len())
                    }
                })
                .collect::<rayserde::Result<Vec<_>>>()?;
            scan_times.push(t0.elapsed().as_secs_f64());
        }
        let row = Row {
            voxels: n,
            dims: grid.grid.dims,
            sequences,
            template_build_s,
            lookup_sort_s: median(sort_times),
            scan_s: median(scan_times),
        };
        summary.push_str(&format!(
            "{:>9} {:>18} {:>12.4} {:>14.4} {:>10.4}\n",
            n,
            format!("{:?}", row.dims),
            row.template_build_s,
            row.lookup_sort_s,
            row.scan_s
        ));
        rows.push(row);
    }
    emit(&cfg, "bench", &rows, &summary)
}
