//! Dataset simulation and replicate studies.

use std::path::Path;

use spatcount::posterior::calibrate;
use spatcount::simulator::simulate_dataset;
use spatcount::{CalibrationReport, Point};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{write_counts, write_marked, write_traps, write_truth, CsvOut, MarkedTable, TrapTable};
use crate::run::worker_pool;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateReport {
    pub traps: usize,
    pub occasions: usize,
    pub n_true: usize,
    pub total_count: u64,
    pub marked: usize,
}

impl std::fmt::Display for SimulateReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "R={} T={} N_true={} total_count={} marked={}",
            self.traps, self.occasions, self.n_true, self.total_count, self.marked
        )
    }
}

/// Simulates the configured scenario into `traps.csv`, `counts.csv`,
/// `truth.csv` and, with marked individuals, `marked.csv`. Coordinates
/// are written in user units.
pub fn simulate(cfg: &RunConfig, out: &Path) -> CliResult<SimulateReport> {
    let scn = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::config("simulation needs a [scenario] section or a preset"))?;
    let truth = simulate_dataset(scn)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::at(out, e))?;
    let to_user = |p: &Point| Point::new(p.x / cfg.space.unit_scale, p.y / cfg.space.unit_scale);
    let traps = TrapTable {
        ids: (1..=truth.traps.len()).map(|r| r.to_string()).collect(),
        coords: truth.traps.coords().iter().map(to_user).collect(),
    };
    write_traps(&out.join("traps.csv"), &traps)?;
    write_counts(&out.join("counts.csv"), &traps, &truth.counts)?;
    let mut flags = vec![false; truth.centers.len()];
    for &i in &truth.marked_ids {
        flags[i] = true;
    }
    let centers: Vec<Point> = truth.centers.iter().map(to_user).collect();
    write_truth(&out.join("truth.csv"), &centers, &flags)?;
    let marked_path = out.join("marked.csv");
    if let Some(h) = &truth.marked {
        let table = MarkedTable {
            ids: truth.marked_ids.iter().map(|i| (i + 1).to_string()).collect(),
            histories: h.clone(),
        };
        write_marked(&marked_path, &traps, &table)?;
    } else if marked_path.exists() {
        std::fs::remove_file(&marked_path).map_err(|e| CliError::at(&marked_path, e))?;
    }
    Ok(SimulateReport {
        traps: truth.traps.len(),
        occasions: truth.counts.occasions(),
        n_true: scn.n_true,
        total_count: truth.counts.total(),
        marked: truth.marked_ids.len(),
    })
}

/// Share of replicates that must succeed for a study to count as complete.
pub const STUDY_SUCCESS: f64 = 0.9;

pub const STUDY_HEADER: [&str; 9] = [
    "scenario", "n_true", "replicates", "succeeded", "mean", "rmse_mean", "mode", "rmse_mode",
    "coverage",
];
pub const REPLICATE_HEADER: [&str; 13] = [
    "replicate", "data_seed", "fit_seed", "total_count", "mean", "sd", "mode", "q025", "q50",
    "q975", "covered", "max_rhat", "error",
];

pub fn study_table(r: &CalibrationReport) -> String {
    let mut s = format!(
        "{:<22}{:>6}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
        "scenario", "N", "Mean", "RMSE", "Mode", "RMSE", "Coverage", "ok/reps"
    );
    s.push_str(&format!(
        "{:<22}{:>6}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10}\n",
        r.scenario,
        r.n_true,
        r.avg_mean,
        r.rmse_mean,
        r.avg_mode,
        r.rmse_mode,
        r.coverage,
        format!("{}/{}", r.results.len(), r.replicates)
    ));
    s
}

fn write_study(out: &Path, r: &CalibrationReport) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::at(out, e))?;
    let mut csv = CsvOut::create(&out.join("study.csv"), &STUDY_HEADER)?;
    csv.row([
        r.scenario.clone(),
        r.n_true.to_string(),
        r.replicates.to_string(),
        r.results.len().to_string(),
        r.avg_mean.to_string(),
        r.rmse_mean.to_string(),
        r.avg_mode.to_string(),
        r.rmse_mode.to_string(),
        r.coverage.to_string(),
    ])?;
    csv.finish()?;
    let mut reps = CsvOut::create(&out.join("replicates.csv"), &REPLICATE_HEADER)?;
    let mut rows: Vec<(usize, Vec<String>)> = r
        .results
        .iter()
        .map(|x| {
            let n = &x.summary.n;
            let row = vec![
                x.index.to_string(),
                x.data_seed.to_string(),
                x.fit_seed.to_string(),
                x.total_count.to_string(),
                n.mean.to_string(),
                n.sd.to_string(),
                n.mode.to_string(),
                n.q025.to_string(),
                n.q50.to_string(),
                n.q975.to_string(),
                u8::from(n.covers(r.n_true as f64)).to_string(),
                x.summary.max_rhat().map_or_else(String::new, |v| v.to_string()),
                String::new(),
            ];
            (x.index, row)
        })
        .collect();
    for (index, err) in &r.failures {
        let mut row = vec![String::new(); REPLICATE_HEADER.len()];
        row[0] = index.to_string();
        row[12] = err.clone();
        rows.push((*index, row));
    }
    rows.sort_by_key(|r| r.0);
    for (_, row) in rows {
        reps.row(row)?;
    }
    reps.finish()?;
    crate::formats::write_text(&out.join("study.txt"), &study_table(r))
}

/// Runs `replicates` simulate-and-fit replicates of the configured scenario.
/// Fails with the incomplete exit code when fewer than 90% succeed; the
/// report files are written either way.
pub fn study(
    cfg: &RunConfig,
    replicates: usize,
    jobs: Option<usize>,
    out: Option<&Path>,
) -> CliResult<CalibrationReport> {
    let scn = cfg
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::config("a study needs a [scenario] section or a preset"))?;
    if replicates == 0 {
        return Err(CliError::config("--replicates must be at least 1"));
    }
    let pool = worker_pool(jobs)?;
    let report = pool.install(|| calibrate(scn, replicates, &cfg.mcmc, &cfg.priors))?;
    if let Some(dir) = out {
        write_study(dir, &report)?;
    }
    if (report.results.len() as f64) < STUDY_SUCCESS * replicates as f64 {
        return Err(CliError::incomplete(format!(
            "only {} of {replicates} replicates succeeded\n{}",
            report.results.len(),
            study_table(&report)
        )));
    }
    Ok(report)
}
