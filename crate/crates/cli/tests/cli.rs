use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spatcount::simulator::preset_scenarios;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spatcount"));
    c.env_remove("SPATCOUNT_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(path: &Path, body: &str) -> PathBuf {
    std::fs::write(path, body).unwrap();
    path.to_path_buf()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

const SMALL: &str = "[scenario]\nname = small\nrows = 4\ncols = 4\nspacing = 1\nsigma = 0.6\nlambda0 = 0.8\nn_true = 8\noccasions = 3\nmarked = 2\nseed = 5\n";

fn short_mcmc(iterations: usize, chains: usize, extra: &str) -> String {
    format!(
        "[mcmc]\niterations = {iterations}\nburn_in = {}\nthin = 1\nchains = {chains}\naugmentation = 40\n{extra}",
        iterations / 4
    )
}

fn small_dataset(dir: &Path) -> PathBuf {
    let cfg = write(&dir.join("sim.ini"), SMALL);
    let data = dir.join("data");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&data)]);
    data
}

fn fit_small(dir: &Path, name: &str, mcmc: &str) -> PathBuf {
    let data = small_dataset(dir);
    let cfg = write(&dir.join(format!("{name}.ini")), mcmc);
    let out = dir.join(name);
    ok(&[
        "fit",
        "--traps",
        p(&data.join("traps.csv")),
        "--counts",
        p(&data.join("counts.csv")),
        "--marked",
        p(&data.join("marked.csv")),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]);
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    read(path)
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(&dir.join("manifest.json"))).unwrap()
}

#[test]
fn simulate_preset_writes_grid_and_long_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let line = ok(&["simulate", "--preset", "study1-s05-n27-t5", "--out", p(&out)]);
    assert!(line.starts_with("R=225 T=5 N_true=27"), "{line}");
    assert_eq!(read(&out.join("traps.csv")).lines().count(), 226);
    assert_eq!(read(&out.join("counts.csv")).lines().count(), 1 + 225 * 5);
    assert_eq!(read(&out.join("truth.csv")).lines().count(), 28);
    assert!(!out.join("marked.csv").exists());

    let again = dir.path().join("b");
    ok(&["simulate", "--preset", "study1-s05-n27-t5", "--out", p(&again)]);
    for f in ["traps.csv", "counts.csv", "truth.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
    let other = dir.path().join("c");
    ok(&["simulate", "--preset", "study1-s05-n27-t5", "--out", p(&other), "--seed", "9"]);
    assert_ne!(read(&out.join("truth.csv")), read(&other.join("truth.csv")));
}

#[test]
fn empty_population_gives_zero_counts_and_no_marked_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("z.ini"),
        "[scenario]\npreset = study1-s05-n27-t5\nn_true = 0\n",
    );
    let out = dir.path().join("z");
    ok(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    let rows = csv_rows(&out.join("counts.csv"));
    assert!(rows[1..].iter().all(|r| r[2] == "0"));
    assert!(!out.join("marked.csv").exists());
}

#[test]
fn every_preset_round_trips_through_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mcmc = write(
        &dir.path().join("m.ini"),
        "[mcmc]\niterations = 20\nburn_in = 5\nthin = 1\nchains = 1\nstore_centers = false\n",
    );
    for scn in preset_scenarios() {
        let data = dir.path().join(&scn.name);
        ok(&["simulate", "--preset", &scn.name, "--out", p(&data)]);
        let mut args = vec![
            "fit".to_string(),
            "--traps".into(),
            p(&data.join("traps.csv")).into(),
            "--counts".into(),
            p(&data.join("counts.csv")).into(),
            "--config".into(),
            p(&mcmc).into(),
            "--out".into(),
            p(&data.join("run")).into(),
        ];
        if scn.marked > 0 {
            args.push("--marked".into());
            args.push(p(&data.join("marked.csv")).into());
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs);
        let m = manifest(&data.join("run"));
        assert_eq!(m["traps"], 225);
        assert_eq!(m["marked"], scn.marked);
    }
}

#[test]
fn meter_scale_layout_with_large_ceiling_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut traps = String::from("trap_id,x,y\n");
    let mut counts = String::from("trap_id,occasion,count\n");
    for k in 0..105 {
        let (ix, iy) = (k % 15, k / 15);
        traps.push_str(&format!("p{k},{},{}\n", 50 * ix, 50 * iy));
        for t in 1..=3 {
            counts.push_str(&format!("p{k},{t},{}\n", (k * 7 + t) % 5 / 3));
        }
    }
    let t = write(&dir.path().join("traps.csv"), &traps);
    let c = write(&dir.path().join("counts.csv"), &counts);
    let cfg = write(
        &dir.path().join("p.ini"),
        "[space]\nbuffer = 250\nunit_scale = 0.001\narea_unit = ha\narea_unit_size = 10000\n\n[mcmc]\niterations = 400\nburn_in = 100\nthin = 1\nchains = 2\naugmentation = 300\n\n[output]\npixel = 50\n",
    );
    let out = dir.path().join("run");
    ok(&["fit", "--traps", p(&t), "--counts", p(&c), "--config", p(&cfg), "--out", p(&out)]);
    let m = manifest(&out);
    // (700 + 500) m by (300 + 500) m in hectares.
    assert_eq!(m["area"].as_f64().unwrap(), 1200.0 * 800.0 / 10000.0);
    assert_eq!(m["augmentation"], 300);
    let raster = read(&out.join("raster.csv"));
    assert!(raster.starts_with("origin,-250,-250\npixel,50\nnx,24\nny,16\n"), "{raster}");
}

#[test]
fn invalid_data_exits_with_code_4_naming_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let traps = data.join("traps.csv");
    let counts = read(&data.join("counts.csv"));
    let lines: Vec<&str> = counts.lines().collect();
    let mut bad = lines.clone();
    let neg = format!("{},-1", lines[5].rsplit_once(',').unwrap().0);
    bad[5] = &neg;
    let neg_path = write(&dir.path().join("neg.csv"), &(bad.join("\n") + "\n"));
    let out = run(&["fit", "--traps", p(&traps), "--counts", p(&neg_path), "--out", p(&dir.path().join("r"))]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 6"));

    let missing = write(&dir.path().join("missing.csv"), &(lines[..lines.len() - 1].join("\n") + "\n"));
    let out = run(&["fit", "--traps", p(&traps), "--counts", p(&missing), "--out", p(&dir.path().join("r"))]);
    assert_eq!(code(&out), 4);

    let first_trap = lines[1].split(',').next().unwrap();
    let over = write(
        &dir.path().join("over.csv"),
        &format!("individual_id,trap_id,occasion,count\nx,{first_trap},1,1000\n"),
    );
    let out = run(&[
        "fit",
        "--traps",
        p(&traps),
        "--counts",
        p(&data.join("counts.csv")),
        "--marked",
        p(&over),
        "--out",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_and_io_errors_use_their_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let traps = data.join("traps.csv");
    let counts = data.join("counts.csv");
    let bad = write(&dir.path().join("bad.ini"), "[mcmc]\nburnin = 5\n");
    let out = run(&["fit", "--traps", p(&traps), "--counts", p(&counts), "--config", p(&bad), "--out", p(&dir.path().join("r"))]);
    assert_eq!(code(&out), 2);
    let out = run(&["fit", "--traps", p(&dir.path().join("nope.csv")), "--counts", p(&counts), "--out", p(&dir.path().join("r"))]);
    assert_eq!(code(&out), 3);
    assert!(!dir.path().join("r").join("manifest.json").exists());
    assert_eq!(code(&run(&["summary", p(&dir.path().join("absent"))])), 3);
    let out = bin()
        .env("SPATCOUNT_JOBS", "many")
        .args(["fit", "--traps", p(&traps), "--counts", p(&counts), "--out", p(&dir.path().join("r"))])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert_eq!(code(&run(&["simulate", "--preset", "no-such-preset", "--out", p(dir.path())])), 2);
}

#[test]
fn summary_reports_density_from_manifest_area() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = fit_small(dir.path(), "run", &short_mcmc(800, 2, ""));
    let area = manifest(&run_dir)["area"].as_f64().unwrap();
    let rows = csv_rows(&run_dir.join("summary.csv"));
    assert_eq!(rows[0], ["parameter", "mean", "sd", "mode", "q025", "q50", "q975", "rhat"]);
    let n = &rows[3];
    let d = &rows[4];
    assert_eq!((n[0].as_str(), d[0].as_str()), ("N", "D"));
    for k in [1, 3, 4, 5, 6] {
        let nv: f64 = n[k].parse().unwrap();
        let dv: f64 = d[k].parse().unwrap();
        assert_eq!(dv, nv / area, "column {k}");
    }
    let chain = csv_rows(&run_dir.join("chain_1.csv"));
    assert_eq!(chain[0], ["iteration", "sigma", "lambda0", "phi", "N", "D"]);
    for r in &chain[1..] {
        assert_eq!(r[5].parse::<f64>().unwrap(), r[4].parse::<f64>().unwrap() / area);
    }
    let before = read(&run_dir.join("summary.csv"));
    ok(&["summary", p(&run_dir)]);
    assert_eq!(read(&run_dir.join("summary.csv")), before);
}

#[test]
fn single_chain_summary_drops_rhat_with_a_note() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = fit_small(dir.path(), "one", &short_mcmc(400, 1, ""));
    let out = run(&["summary", p(&run_dir)]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(!stdout.contains("rhat"), "{stdout}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("single chain"));
    assert_eq!(csv_rows(&run_dir.join("summary.csv"))[0].len(), 7);
}

#[test]
fn ceiling_warning_when_n_piles_up_at_m() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let cfg = write(
        &dir.path().join("tight.ini"),
        "[mcmc]\niterations = 400\nburn_in = 100\nthin = 1\nchains = 2\naugmentation = 3\nfixed_sigma = 0.6\nfixed_lambda0 = 0.8\n",
    );
    let run_dir = dir.path().join("tight");
    ok(&[
        "fit", "--traps", p(&data.join("traps.csv")), "--counts", p(&data.join("counts.csv")),
        "--config", p(&cfg), "--out", p(&run_dir),
    ]);
    let rows = csv_rows(&run_dir.join("summary.csv"));
    assert_eq!(rows[3][3], "3", "posterior mode of N should sit at M");
    let out = run(&["summary", p(&run_dir)]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("increase the augmentation ceiling"), "{stderr}");
    assert!(read(&run_dir.join("summary.txt")).contains("warning:"));
}

#[test]
fn raster_mass_matches_posterior_mean_of_n() {
    let dir = tempfile::tempdir().unwrap();
    // At most 2000 kept sweeps, so every kept draw has a center snapshot.
    let run_dir = fit_small(dir.path(), "map", &short_mcmc(1600, 2, ""));
    let mean_n: f64 = csv_rows(&run_dir.join("summary.csv"))[3][1].parse().unwrap();
    for pixel in ["1", "0.5", "2.5"] {
        ok(&["map", p(&run_dir), "--pixel", pixel]);
        let text = read(&run_dir.join("raster.csv"));
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("origin,") && lines[5].starts_with("draws,"));
        let nx: usize = lines[2].split(',').nth(1).unwrap().parse().unwrap();
        let ny: usize = lines[3].split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(lines.len(), 6 + ny);
        let mut total = 0.0;
        for l in &lines[6..] {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            assert_eq!(v.len(), nx);
            assert!(v.iter().all(|&x| x >= 0.0));
            total += v.iter().sum::<f64>();
        }
        assert!((total - mean_n).abs() <= 1e-6 * mean_n, "{pixel}: {total} vs {mean_n}");
    }
    // The default space is 9 x 9 units: 2.5-unit pixels clip the last ones.
    let text = read(&run_dir.join("raster.csv"));
    assert!(text.contains("\nnx,4\nny,4\n"), "{text}");
    ok(&["map", p(&run_dir), "--image"]);
    assert!(read(&run_dir.join("raster.pgm")).starts_with("P2\n9 9\n255\n"));
}

#[test]
fn prior_only_raster_is_near_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let mcmc = "[mcmc]\niterations = 40000\nburn_in = 1000\nthin = 20\nchains = 2\naugmentation = 30\nlikelihood = false\n\n[output]\npixel = 3\n";
    let run_dir = fit_small(dir.path(), "prior", mcmc);
    let text = read(&run_dir.join("raster.csv"));
    let values: Vec<f64> = text.lines().skip(6).flat_map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>()).collect();
    assert_eq!(values.len(), 9);
    let mean = values.iter().sum::<f64>() / 9.0;
    for v in &values {
        assert!((v - mean).abs() < 0.12 * mean, "{values:?}");
    }
}

#[test]
fn rerun_reproduces_outputs_and_detects_changes() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = fit_small(dir.path(), "orig", &short_mcmc(600, 2, ""));
    ok(&["map", p(&run_dir), "--pixel", "0.75", "--image"]);
    let copy = dir.path().join("copy");
    let out = ok(&["rerun", p(&run_dir), "--out", p(&copy), "--verify"]);
    assert!(out.contains("reproduced every output"));
    for f in ["chain_1.csv", "chain_2.csv", "centers_1.csv", "summary.csv", "raster.csv", "raster.pgm", "config.ini"] {
        assert_eq!(std::fs::read(run_dir.join(f)).unwrap(), std::fs::read(copy.join(f)).unwrap(), "{f}");
    }

    let summary = run_dir.join("summary.csv");
    let original = read(&summary);
    write(&summary, &original.replace("N,", "N,1"));
    let out = run(&["rerun", p(&run_dir), "--out", p(&dir.path().join("copy2")), "--verify"]);
    assert_eq!(code(&out), 6);
    assert!(String::from_utf8_lossy(&out.stderr).contains("summary.csv"));
    write(&summary, &original);

    let counts = dir.path().join("data").join("counts.csv");
    let text = read(&counts);
    write(&counts, &(text + "\n"));
    let out = run(&["rerun", p(&run_dir), "--out", p(&dir.path().join("copy3"))]);
    assert_eq!(code(&out), 4);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_dataset(dir.path());
    let cfg = write(&dir.path().join("m.ini"), &short_mcmc(200, 1, "store_centers = false\n"));
    let fit = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&[
            "fit", "--traps", p(&data.join("traps.csv")), "--counts", p(&data.join("counts.csv")),
            "--config", p(&cfg), "--out", p(&out), "--seed", seed,
        ]);
        out
    };
    let a = fit("a", "3");
    let b = fit("b", "4");
    assert_eq!(manifest(&a)["seed"], 3);
    assert!(read(&a.join("config.ini")).contains("seed = 3"));
    assert_ne!(read(&a.join("chain_1.csv")), read(&b.join("chain_1.csv")));
}

#[test]
fn single_replicate_study_reports_absolute_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("s.ini"), &format!("{SMALL}\n{}", short_mcmc(600, 2, "store_centers = false\n")));
    let out = dir.path().join("study");
    let table = ok(&["study", "--config", p(&cfg), "--replicates", "1", "--out", p(&out)]);
    assert!(table.contains("Mean") && table.contains("Coverage"));
    let rows = csv_rows(&out.join("study.csv"));
    assert_eq!(
        rows[0],
        ["scenario", "n_true", "replicates", "succeeded", "mean", "rmse_mean", "mode", "rmse_mode", "coverage"]
    );
    let v: Vec<f64> = rows[1][4..].iter().map(|x| x.parse().unwrap()).collect();
    assert!((v[1] - (v[0] - 8.0).abs()).abs() < 1e-9);
    assert!((v[3] - (v[2] - 8.0).abs()).abs() < 1e-9);
    assert!(v[4] == 0.0 || v[4] == 1.0);
    let reps = csv_rows(&out.join("replicates.csv"));
    assert_eq!(reps.len(), 2);
}

#[test]
fn study_with_failed_replicates_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    // Two marked individuals cannot fit under a ceiling of one.
    let cfg = write(
        &dir.path().join("s.ini"),
        &format!("{SMALL}\n[mcmc]\niterations = 50\nburn_in = 10\nchains = 1\naugmentation = 1\n"),
    );
    let out = dir.path().join("study");
    let res = run(&["study", "--config", p(&cfg), "--replicates", "3", "--out", p(&out)]);
    assert_eq!(code(&res), 6, "{}", String::from_utf8_lossy(&res.stderr));
    let reps = csv_rows(&out.join("replicates.csv"));
    assert_eq!(reps.len(), 4);
    assert!(reps[1][12].contains("ceiling"));
}
