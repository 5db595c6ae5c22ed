//! Fitting, summarizing and mapping of run directories.
//!
//! A run directory holds `config.ini` (the resolved configuration),
//! `chain_<k>.csv` and, when centers are stored, `centers_<k>.csv` for every
//! chain, `summary.csv` and `summary.txt`, `raster.csv` (plus `raster.pgm`
//! on request) and finally `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use spatcount::posterior::{density_surface, summarize};
use spatcount::sampler::{run_chains, AcceptanceRates, CenterSnapshot, Draw, ProposalScales};
use spatcount::{
    ChainOutput, DensityRaster, Point, PosteriorSummary, Problem, StateSpace,
    TrapArray,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{
    read_centers, read_chain, read_counts, read_marked, read_traps, write_centers, write_chain,
    write_text, CsvOut,
};
use crate::manifest::{input_file, Bounds, ChainRecord, Manifest, RasterRecord, Units, MANIFEST};

pub const CONFIG_ECHO: &str = "config.ini";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const RASTER_CSV: &str = "raster.csv";
pub const RASTER_PGM: &str = "raster.pgm";

/// The R-hat at or above which a parameter is flagged.
pub const RHAT_WARN: f64 = 1.1;
/// Ceiling diagnostic: warn when more than this share of the N draws lie
/// within 5% of M.
pub const CEILING_MASS: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct FitInputs {
    pub traps: PathBuf,
    pub counts: PathBuf,
    pub marked: Option<PathBuf>,
}

impl FitInputs {
    fn named(&self) -> Vec<(&'static str, &Path)> {
        let mut v = vec![("traps", self.traps.as_path()), ("counts", self.counts.as_path())];
        if let Some(m) = &self.marked {
            v.push(("marked", m.as_path()));
        }
        v
    }
}

/// Worker pool sized by `jobs`, else `SPATCOUNT_JOBS`, else the core count.
pub fn worker_pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let jobs = match jobs {
        Some(j) => j,
        None => match std::env::var("SPATCOUNT_JOBS") {
            Ok(v) => v.trim().parse().map_err(|_| {
                CliError::config(format!("SPATCOUNT_JOBS = '{v}' is not a non-negative integer"))
            })?,
            Err(_) => 0,
        },
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config(format!("cannot start {jobs} workers: {e}")))
}

fn scaled(p: Point, f: f64) -> Point {
    Point::new(p.x * f, p.y * f)
}

fn bounds_space(b: &Bounds) -> CliResult<StateSpace> {
    StateSpace::new(b.xmin, b.xmax, b.ymin, b.ymax).map_err(|e| CliError::io(e.to_string()))
}

fn prepare_out_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::at(out, e))?;
    let manifest = out.join(MANIFEST);
    if manifest.exists() {
        std::fs::remove_file(&manifest).map_err(|e| CliError::at(&manifest, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub manifest: Manifest,
    pub summary: RunSummary,
}

/// Fits the model and writes a complete run directory.
pub fn fit(inputs: &FitInputs, cfg: &RunConfig, out: &Path, jobs: Option<usize>) -> CliResult<FitReport> {
    for (_, p) in inputs.named() {
        std::fs::metadata(p).map_err(|e| CliError::at(p, e))?;
    }
    let pool = worker_pool(jobs)?;
    prepare_out_dir(out)?;

    let traps_user = read_traps(&inputs.traps)?;
    let counts = read_counts(&inputs.counts, &traps_user)?;
    let marked = inputs
        .marked
        .as_ref()
        .map(|p| read_marked(p, &traps_user, &counts))
        .transpose()?;

    let scale = cfg.space.unit_scale;
    let user_array = TrapArray::new(traps_user.coords.clone()).map_err(|e| CliError::data(e.to_string()))?;
    let spacing = user_array.spacing();
    let bounds = match cfg.space.bounds {
        Some([xmin, xmax, ymin, ymax]) => Bounds { xmin, xmax, ymin, ymax },
        None => {
            let buffer = cfg.space.buffer.unwrap_or(3.0 * spacing);
            let bb = spatcount::model::state_space_from_traps(&user_array, buffer)?;
            Bounds { xmin: bb.xmin(), xmax: bb.xmax(), ymin: bb.ymin(), ymax: bb.ymax() }
        }
    };
    let user_space = bounds_space(&bounds)?;
    let traps = TrapArray::new(traps_user.coords.iter().map(|&p| scaled(p, scale)).collect())
        .map_err(|e| CliError::data(e.to_string()))?;
    let space = StateSpace::new(
        bounds.xmin * scale,
        bounds.xmax * scale,
        bounds.ymin * scale,
        bounds.ymax * scale,
    )?;
    let area = user_space.area() / cfg.space.area_unit_size;

    let problem = Problem {
        data: &counts,
        traps: &traps,
        space: &space,
        marked: marked.as_ref().map(|m| &m.histories),
    };
    let started = Instant::now();
    let chains = pool.install(|| run_chains(problem, &cfg.priors, &cfg.mcmc))?;
    let wall = started.elapsed().as_secs_f64();

    write_text(&out.join(CONFIG_ECHO), &cfg.to_ini())?;
    let mut records = Vec::with_capacity(chains.len());
    for c in &chains {
        let k = c.chain_id + 1;
        let draws: Vec<Draw> = c
            .draws
            .iter()
            .map(|d| Draw { sigma: d.sigma / scale, density: d.n as f64 / area, ..*d })
            .collect();
        let file = format!("chain_{k}.csv");
        write_chain(&out.join(&file), &draws)?;
        let centers_file = if cfg.mcmc.store_centers {
            let snaps: Vec<CenterSnapshot> = c
                .center_draws
                .iter()
                .map(|s| CenterSnapshot {
                    centers: s.centers.iter().map(|&p| scaled(p, 1.0 / scale)).collect(),
                    ..s.clone()
                })
                .collect();
            let name = format!("centers_{k}.csv");
            write_centers(&out.join(&name), &snaps)?;
            Some(name)
        } else {
            None
        };
        records.push(ChainRecord {
            chain: k,
            seed: c.seed,
            file,
            centers_file,
            acceptance_centers: c.acceptance.centers,
            acceptance_sigma: c.acceptance.sigma,
            acceptance_lambda0: c.acceptance.lambda0,
            proposal_sd_s: c.proposals.centers,
            proposal_sd_log_sigma: c.proposals.log_sigma,
            proposal_sd_log_lambda0: c.proposals.log_lambda0,
        });
    }

    let mut inputs_rec = BTreeMap::new();
    for (name, p) in inputs.named() {
        inputs_rec.insert(name.to_string(), input_file(p)?);
    }
    let mut manifest = Manifest {
        tool: "spatcount".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: spatcount::VERSION.into(),
        seed: cfg.mcmc.seed,
        config: cfg.to_json(),
        inputs: inputs_rec,
        units: Units {
            unit_scale: scale,
            area_unit: cfg.space.area_unit.clone(),
            area_unit_size: cfg.space.area_unit_size,
        },
        space: bounds,
        area,
        trap_spacing: spacing,
        traps: traps.len(),
        occasions: counts.occasions(),
        marked: marked.as_ref().map_or(0, |m| m.ids.len()),
        augmentation: cfg.mcmc.augmentation,
        kept_draws: cfg.mcmc.kept_draws(),
        center_stride: cfg.mcmc.store_centers.then(|| cfg.mcmc.center_stride()),
        chains: records,
        summary: SUMMARY_CSV.into(),
        raster: None,
        wall_time_seconds: wall,
    };
    let summary = summarize_run(out, &manifest)?;
    if manifest.center_stride.is_some() {
        let pixel = cfg.output.pixel.unwrap_or(spacing);
        let (record, _) = map_run(out, &manifest, pixel, cfg.output.image)?;
        manifest.raster = Some(record);
    }
    manifest.write(out)?;
    Ok(FitReport { manifest, summary })
}

fn load_chains(dir: &Path, manifest: &Manifest, with_centers: bool) -> CliResult<Vec<ChainOutput>> {
    if manifest.chains.is_empty() {
        return Err(CliError::io(format!("{}: run lists no chains", dir.display())));
    }
    let snapshot_iters: Vec<usize> = match (with_centers, manifest.center_stride) {
        (true, Some(stride)) => {
            let cfg = RunConfig::load(&dir.join(CONFIG_ECHO)).map_err(|e| CliError::io(e.message))?;
            (cfg.mcmc.burn_in..cfg.mcmc.iterations).step_by(stride).collect()
        }
        _ => Vec::new(),
    };
    manifest
        .chains
        .iter()
        .map(|c| {
            let draws = read_chain(&dir.join(&c.file))?;
            if draws.len() != manifest.kept_draws {
                return Err(CliError::io(format!(
                    "{}: {} draws, manifest promises {}",
                    c.file,
                    draws.len(),
                    manifest.kept_draws
                )));
            }
            let center_draws = match (&c.centers_file, with_centers) {
                (Some(f), true) => read_centers(&dir.join(f), &snapshot_iters)?,
                _ => Vec::new(),
            };
            Ok(ChainOutput {
                chain_id: c.chain - 1,
                seed: c.seed,
                augmentation: manifest.augmentation,
                area: manifest.area,
                draws,
                center_draws,
                acceptance: AcceptanceRates {
                    centers: c.acceptance_centers,
                    sigma: c.acceptance_sigma,
                    lambda0: c.acceptance_lambda0,
                },
                proposals: ProposalScales {
                    centers: c.proposal_sd_s,
                    log_sigma: c.proposal_sd_log_sigma,
                    log_lambda0: c.proposal_sd_log_lambda0,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub summary: PosteriorSummary,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    pub text: String,
}

/// Draws of N within 5% of the ceiling `m`.
pub fn ceiling_share(chains: &[ChainOutput], m: usize) -> f64 {
    let threshold = (0.95 * m as f64).ceil() as usize;
    let (mut near, mut total) = (0usize, 0usize);
    for d in chains.iter().flat_map(|c| &c.draws) {
        total += 1;
        near += usize::from(d.n >= threshold);
    }
    near as f64 / total.max(1) as f64
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e6).contains(&a) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

fn summary_text(s: &PosteriorSummary, manifest: &Manifest, warnings: &[String], notes: &[String]) -> String {
    let with_rhat = s.chains >= 2;
    let mut t = format!(
        "chains {}, kept draws {}, M {}, area {} {}\n",
        s.chains,
        s.draws,
        s.augmentation,
        fmt_num(manifest.area),
        manifest.units.area_unit
    );
    let cols = ["mean", "sd", "mode", "q0.025", "q0.50", "q0.975"];
    t.push_str(&format!("{:<10}", "parameter"));
    for c in cols {
        t.push_str(&format!("{c:>12}"));
    }
    if with_rhat {
        t.push_str(&format!("{:>8}", "rhat"));
    }
    t.push('\n');
    for (name, p) in s.rows() {
        t.push_str(&format!("{name:<10}"));
        for v in [p.mean, p.sd, p.mode, p.q025, p.q50, p.q975] {
            t.push_str(&format!("{:>12}", fmt_num(v)));
        }
        if let Some(r) = p.rhat {
            t.push_str(&format!("{:>8}", fmt_num(r)));
        }
        t.push('\n');
    }
    t.push_str(&format!(
        "sigma in user units (x {} = model units); D per {}\n",
        manifest.units.unit_scale, manifest.units.area_unit
    ));
    for n in notes {
        t.push_str(&format!("note: {n}\n"));
    }
    for w in warnings {
        t.push_str(&format!("warning: {w}\n"));
    }
    t
}

fn write_summary_csv(path: &Path, s: &PosteriorSummary) -> CliResult<()> {
    let mut header = vec!["parameter", "mean", "sd", "mode", "q025", "q50", "q975"];
    let with_rhat = s.chains >= 2;
    if with_rhat {
        header.push("rhat");
    }
    let mut out = CsvOut::create(path, &header)?;
    for (name, p) in s.rows() {
        let mut row = vec![name.to_string()];
        row.extend([p.mean, p.sd, p.mode, p.q025, p.q50, p.q975].iter().map(|v| v.to_string()));
        if let Some(r) = p.rhat.filter(|_| with_rhat) {
            row.push(r.to_string());
        }
        out.row(row)?;
    }
    out.finish()
}

/// Summarizes the chain files of a run and writes `summary.csv` and
/// `summary.txt`.
pub fn summarize_run(dir: &Path, manifest: &Manifest) -> CliResult<RunSummary> {
    let chains = load_chains(dir, manifest, false)?;
    let space = bounds_space(&manifest.space)?;
    let mut summary = summarize(&chains, &space).map_err(|e| CliError::io(e.to_string()))?;
    summary.density = summary.n.divided(manifest.area);
    summary.area = manifest.area;

    let mut warnings = Vec::new();
    let mut notes = Vec::new();
    if chains.len() < 2 {
        notes.push("single chain: R-hat needs at least two chains and is not reported".into());
    }
    for (name, p) in summary.rows() {
        if let Some(r) = p.rhat.filter(|&r| r >= RHAT_WARN) {
            warnings.push(format!("R-hat of {name} is {} (>= {RHAT_WARN}); run longer chains", fmt_num(r)));
        }
    }
    let share = ceiling_share(&chains, manifest.augmentation);
    if share > CEILING_MASS {
        warnings.push(format!(
            "{:.1}% of N draws lie within 5% of M = {}; increase the augmentation ceiling",
            100.0 * share,
            manifest.augmentation
        ));
    }
    let text = summary_text(&summary, manifest, &warnings, &notes);
    write_summary_csv(&dir.join(&manifest.summary), &summary)?;
    write_text(&dir.join(SUMMARY_TXT), &text)?;
    Ok(RunSummary { summary, warnings, notes, text })
}

pub fn raster_csv(r: &DensityRaster) -> String {
    let mut s = format!(
        "origin,{},{}\npixel,{}\nnx,{}\nny,{}\nunits,expected individuals per pixel\ndraws,{}\n",
        r.origin.x, r.origin.y, r.pixel, r.nx, r.ny, r.draws
    );
    for iy in (0..r.ny).rev() {
        let row: Vec<String> = (0..r.nx).map(|ix| r.value(ix, iy).to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Plain greyscale PGM, north up, scaled so the largest pixel is white.
pub fn raster_pgm(r: &DensityRaster) -> String {
    let max = r.values.iter().copied().fold(0.0, f64::max);
    let mut s = format!("P2\n{} {}\n255\n", r.nx, r.ny);
    for iy in (0..r.ny).rev() {
        let row: Vec<String> = (0..r.nx)
            .map(|ix| {
                let v = if max > 0.0 { r.value(ix, iy) / max } else { 0.0 };
                ((v * 255.0).round() as u8).to_string()
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

/// Rasterizes the stored centers of a run into `raster.csv`.
pub fn map_run(
    dir: &Path,
    manifest: &Manifest,
    pixel: f64,
    image: bool,
) -> CliResult<(RasterRecord, DensityRaster)> {
    if manifest.center_stride.is_none() || manifest.chains.iter().any(|c| c.centers_file.is_none()) {
        return Err(CliError::io(format!(
            "{}: center draws were not stored (store_centers = false)",
            dir.display()
        )));
    }
    let chains = load_chains(dir, manifest, true)?;
    let space = bounds_space(&manifest.space)?;
    let raster = density_surface(&chains, &space, pixel).map_err(|e| CliError::config(e.to_string()))?;
    write_text(&dir.join(RASTER_CSV), &raster_csv(&raster))?;
    let image_file = if image {
        write_text(&dir.join(RASTER_PGM), &raster_pgm(&raster))?;
        Some(RASTER_PGM.to_string())
    } else {
        None
    };
    Ok((RasterRecord { file: RASTER_CSV.into(), pixel, image: image_file }, raster))
}

/// Mean of N over the center snapshots, the quantity a raster sums to.
pub fn snapshot_mean_n(raster: &DensityRaster, dir: &Path, manifest: &Manifest) -> CliResult<f64> {
    let chains = load_chains(dir, manifest, true)?;
    let total: usize = chains.iter().flat_map(|c| &c.center_draws).map(|s| s.centers.len()).sum();
    Ok(total as f64 / raster.draws.max(1) as f64)
}

/// Re-executes a run from its manifest into `out`. With `verify`, every
/// output is compared byte for byte with the original.
pub fn rerun(dir: &Path, out: &Path, verify: bool, jobs: Option<usize>) -> CliResult<FitReport> {
    let original = Manifest::read(dir)?;
    let same = |a: &Path, b: &Path| match (std::fs::canonicalize(a), std::fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    };
    if same(dir, out) {
        return Err(CliError::config("rerun output directory must differ from the original run"));
    }
    let cfg = RunConfig::load(&dir.join(CONFIG_ECHO)).map_err(|e| CliError::io(e.message))?;
    let input = |name: &str| -> CliResult<Option<PathBuf>> {
        let Some(rec) = original.inputs.get(name) else { return Ok(None) };
        let path = PathBuf::from(&rec.path);
        let hash = crate::manifest::sha256_file(&path)?;
        if hash != rec.sha256 {
            return Err(CliError::data(format!("input {} changed since the run", rec.path)));
        }
        Ok(Some(path))
    };
    let inputs = FitInputs {
        traps: input("traps")?.ok_or_else(|| CliError::io("manifest lists no traps input"))?,
        counts: input("counts")?.ok_or_else(|| CliError::io("manifest lists no counts input"))?,
        marked: input("marked")?,
    };
    let mut report = fit(&inputs, &cfg, out, jobs)?;
    if let Some(r) = &original.raster {
        if report.manifest.raster.as_ref() != Some(r) {
            let (record, _) = map_run(out, &report.manifest, r.pixel, r.image.is_some())?;
            report.manifest.raster = Some(record);
            report.manifest.write(out)?;
        }
    }
    if verify {
        let mut differing = Vec::new();
        let files = original.outputs();
        if report.manifest.outputs() != files {
            differing.push("file list".to_string());
        }
        for f in &files {
            let a = std::fs::read(dir.join(f)).map_err(|e| CliError::at(&dir.join(f), e))?;
            let b = std::fs::read(out.join(f)).ok();
            if b.as_deref() != Some(a.as_slice()) {
                differing.push(f.clone());
            }
        }
        if !differing.is_empty() {
            return Err(CliError::incomplete(format!(
                "rerun differs from {}: {}",
                dir.display(),
                differing.join(", ")
            )));
        }
    }
    Ok(report)
}
