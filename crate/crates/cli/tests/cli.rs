use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use semsurv::assess::{kaplan_meier, FitReport};
use semsurv::io::{read_dataset, read_draws_meta, DatasetFileSpec};
use semsurv::simulate::{calibrate_censoring, Scenario};

fn semsurv(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semsurv"))
        .current_dir(dir)
        .env_remove("SEMSURV_OUT_DIR")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn simulate(dir: &Path, sub: &str, extra: &[&str]) {
    let mut args = vec!["--out-dir", sub, "-q", "simulate", "--n", "100", "--censor", "0.28", "--seed", "7"];
    args.extend(extra);
    ok(&semsurv(dir, &args));
}

const SHORT: &[&str] = &["--iterations", "2000", "--burn-in", "200", "--thin", "4"];

fn fit(dir: &Path, model: &str) {
    let mut args = vec![
        "--out-dir", "fit", "-q", "fit", "--data", "sim/dataset.csv", "--model", model, "--truth", "sim/truth.json",
    ];
    args.extend(SHORT);
    ok(&semsurv(dir, &args));
}

fn report(path: &Path) -> FitReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "a", &[]);
    simulate(tmp.path(), "b", &[]);
    for f in ["dataset.csv", "truth.json", "manifest.json"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn bad_censor_flag_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = semsurv(tmp.path(), &["simulate", "--censor", "1.2"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--censor"));
}

#[test]
fn manifest_records_calibrated_scale() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "sim", &[]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("sim/manifest.json")).unwrap()).unwrap();
    let expected = calibrate_censoring(&Scenario::default().with_seed(7), 0.28).unwrap().unwrap();
    assert_eq!(m["censoring"]["scale"].as_f64().unwrap(), expected.scale);
    assert_eq!(m["censoring"]["shape"].as_f64().unwrap(), 1.0);
    let data = read_dataset(&DatasetFileSpec::Combined(tmp.path().join("sim/dataset.csv"))).unwrap();
    assert_eq!(m["dataset_hash"].as_str().unwrap(), data.content_hash());
}

#[test]
fn fit_compare_and_assess() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim", &[]);
    fit(dir, "integrated");
    fit(dir, "baseline");
    for m in ["integrated", "baseline"] {
        let r = report(&dir.join(format!("fit/{m}_report.json")));
        assert!((r.dic - (r.d_at_mean + 2.0 * r.p_d)).abs() < 1e-9 * r.dic.abs().max(1.0));
        assert_eq!(r.model.as_str(), m);
        assert!(r.mse_imputed.is_some());
        assert_eq!(r.cpo.len(), 100);
    }

    let cmp = semsurv(dir, &["compare", "fit/integrated_report.json", "fit/baseline_report.json"]);
    ok(&cmp);
    let rev = semsurv(dir, &["compare", "fit/baseline_report.json", "fit/integrated_report.json"]);
    assert_eq!(cmp.stdout, rev.stdout);
    let same = semsurv(dir, &["compare", "fit/integrated_report.json", "fit/integrated_report.json"]);
    assert!(!String::from_utf8_lossy(&same.stdout).contains('*'));

    let out = semsurv(dir, &["assess", "--draws", "fit/integrated_draws.csv", "--data", "sim/dataset.csv", "--truth", "sim/truth.json"]);
    ok(&out);
    let again: FitReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(again, report(&dir.join("fit/integrated_report.json")));
}

#[test]
fn mismatched_datasets_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim", &[]);
    ok(&semsurv(dir, &["--out-dir", "other", "-q", "simulate", "--n", "60", "--seed", "8"]));
    fit(dir, "integrated");
    let mut args = vec!["--out-dir", "fit2", "-q", "fit", "--data", "other/dataset.csv", "--model", "baseline"];
    args.extend(SHORT);
    ok(&semsurv(dir, &args));
    let out = semsurv(dir, &["compare", "fit/integrated_report.json", "fit2/baseline_report.json"]);
    assert_eq!(code(&out), 5);
    let out = semsurv(dir, &["assess", "--draws", "fit/integrated_draws.csv", "--data", "other/dataset.csv"]);
    assert_eq!(code(&out), 5);
}

#[test]
fn missing_platform_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut body = String::from("id,time,status,x_a,u2_g1\n");
    for i in 0..20 {
        body.push_str(&format!("s{i},{},{},{},{}\n", 1.0 + i as f64, i % 3 != 0, (i as f64).sin(), (i as f64).cos()));
    }
    fs::write(dir.join("d.csv"), body.replace("true", "1").replace("false", "0")).unwrap();
    let out = semsurv(dir, &["-q", "fit", "--data", "d.csv", "--iterations", "50", "--burn-in", "10", "--thin", "1"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn desk_scale_fit_is_fast() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim", &[]);
    let start = Instant::now();
    ok(&semsurv(dir, &["-q", "fit", "--data", "sim/dataset.csv", "--iterations", "10000", "--burn-in", "1000", "--thin", "10"]));
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn curves_are_survival_functions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim", &[]);
    fit(dir, "integrated");
    fit(dir, "baseline");
    let run = |sub: &str, points: &str| {
        ok(&semsurv(
            dir,
            &[
                "--out-dir", sub, "-q", "curves", "--data", "sim/dataset.csv",
                "--integrated-draws", "fit/integrated_draws.csv", "--baseline-draws", "fit/baseline_draws.csv",
                "--subjects", "s0003,s0010", "--grid-points", points,
            ],
        ));
        let body = fs::read_to_string(dir.join(sub).join("curve_s0003.csv")).unwrap();
        body.lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let coarse = run("c1", "40");
    let fine = run("c2", "80");
    assert_eq!(coarse.len(), 40);
    assert_eq!(fine.len(), 80);
    for (k, row) in coarse.iter().enumerate() {
        assert_eq!(row, &fine[2 * k + 1]);
    }
    let data = read_dataset(&DatasetFileSpec::Combined(dir.join("sim/dataset.csv"))).unwrap();
    let km = kaplan_meier(&data);
    for col in 1..4 {
        assert!(fine.iter().all(|r| (0.0..=1.0).contains(&r[col])));
        assert!(fine.windows(2).all(|w| w[1][col] <= w[0][col]));
    }
    assert!(fine.iter().all(|r| r[1] == km.eval(r[0])));

    let out = semsurv(dir, &["curves", "--data", "sim/dataset.csv", "--integrated-draws", "fit/integrated_draws.csv", "--subjects", "ghost"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_and_env_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "sim", &[]);
    fs::write(dir.join("run.cfg"), "mcmc.iterations = 300\nmcmc.burn_in = 100\nmcmc.thin = 2\nmcmc.seed = 11\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_semsurv"))
        .current_dir(dir)
        .env("SEMSURV_OUT_DIR", "envout")
        .args(["-q", "--config", "run.cfg", "fit", "--data", "sim/dataset.csv", "--thin", "4"])
        .output()
        .unwrap();
    ok(&out);
    let meta = read_draws_meta(&dir.join("envout/integrated_draws.csv")).unwrap();
    assert_eq!((meta.config.iterations, meta.config.burn_in, meta.config.thin, meta.config.seed), (300, 100, 4, 11));
    assert_eq!(meta.draw_count, 50);

    fs::write(dir.join("bad.cfg"), "mcmc.iteration = 3\n").unwrap();
    assert_eq!(code(&semsurv(dir, &["--config", "bad.cfg", "fit", "--data", "sim/dataset.csv"])), 2);
}

fn study(dir: &Path, sub: &str, preset: &str) -> Output {
    semsurv(
        dir,
        &[
            "--out-dir", sub, "-q", "replicate-study", "--preset", preset, "--replicates", "2", "--seed", "5",
            "--iterations", "60", "--burn-in", "10", "--thin", "5", "--n", "40", "--q1", "3", "--q2", "3",
        ],
    )
}

#[test]
fn replicate_study_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&study(dir, "a", "table1-desk"));
    ok(&study(dir, "b", "table1-desk"));
    for f in ["table1_table.csv", "table1_replicates.csv", "table1_orderings.csv", "table1_report.json", "table1_summary.txt"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
    let table = fs::read_to_string(dir.join("a/table1_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 4 * 2);
    let reps = fs::read_to_string(dir.join("a/table1_replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 8 * 2 * 2);

    ok(&study(dir, "c", "table2-desk"));
    let table = fs::read_to_string(dir.join("c/table2_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 6);

    assert_eq!(code(&study(dir, "d", "table9")), 2);
}
