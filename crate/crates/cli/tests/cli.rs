use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use rand::Rng;
use retarget_core::seed::stream;
use retarget_core::simulate::{draw_test, draw_training, DgpConfig};
use retarget_core::value::regret_tabulated;
use retarget_core::{LinearPolicy, ObservationSet};
use tempfile::TempDir;

fn run(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_retarget"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Weight column of a diagnostics file.
fn weights(dir: &Path) -> Vec<f64> {
    let text = fs::read_to_string(dir.join("out/weights.csv")).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "w").unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();

    assert_eq!(code(&run(d, "command = fly\n", &[])), 2);
    assert_eq!(code(&run(d, "command = weights\nn = 10\nbogus = 1\n", &[])), 2);
    assert_eq!(code(&run(d, "command = learn\ninput = missing.csv\n", &[])), 2);

    let props = write(d, "zero.csv", "x1,phi_1,phi_2\n0,0.5,0.5\n1,0,1\n");
    let out = run(
        d,
        &format!("command = weights\npropensities = {}\n", props.display()),
        &[],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    // Action 2 appears once, so some training folds never see it.
    let mut rng = stream(1);
    let mut text = String::from("x1,x2,action,reward\n");
    for i in 0..40 {
        let a = if i == 0 { 2 } else { 1 };
        text += &format!(
            "{},{},{a},{}\n",
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>()
        );
    }
    let data = write(d, "lopsided.csv", &text);
    let out = run(
        d,
        &format!(
            "command = learn\ninput = {}\noutcome_model = least-squares\n",
            data.display()
        ),
        &[],
    );
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));

    // Ten records leave too few per arm and fold for stump outcome models.
    let out = run(
        d,
        "command = simulate\nscenarios = well-stationary\nmethods = dr\nsizes = 10\nreplicates = 2\ntest_size = 100\n",
        &[],
    );
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn uniform_propensities_give_unit_weights() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let props = write(
        d,
        "p.csv",
        "x1,phi_1,phi_2,phi_3\n0,0.25,0.25,0.5\n1,0.25,0.25,0.5\n2,0.25,0.25,0.5\n",
    );
    let out = run(
        d,
        &format!("command = weights\npropensities = {}\n", props.display()),
        &[],
    );
    assert!(out.status.success());
    assert!(weights(d).iter().all(|w| (w - 1.0).abs() < 1e-12));
}

#[test]
fn three_binary_records_by_hand() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    // phi(+) = 0.9, 0.5, 0.2: 1 - (phi+ - phi-)^2 = 0.36, 1, 0.64, mean 2/3.
    let props = write(d, "p.csv", "x1,phi_1,phi_2\n0,0.1,0.9\n1,0.5,0.5\n2,0.8,0.2\n");
    let base = format!("command = weights\npropensities = {}\n", props.display());
    for mode in ["optimal", "binary"] {
        assert!(run(d, &format!("{base}mode = {mode}\n"), &[]).status.success());
        let w = weights(d);
        for (got, want) in w.iter().zip([0.54, 1.5, 0.96]) {
            assert!((got - want).abs() < 1e-12, "{mode}: {w:?}");
        }
    }
    let out = run(d, &base, &[]);
    let plain = weights(d);
    assert!(String::from_utf8_lossy(&out.stdout).contains("omega="));
    assert!(run(d, &format!("{base}mode = regularized\nlambda = 0\n"), &[])
        .status
        .success());
    assert_eq!(weights(d), plain);
}

fn save_training(dir: &Path, dgp: &DgpConfig) -> PathBuf {
    let p = dir.join("train.csv");
    draw_training(dgp).unwrap().save(&p).unwrap();
    p
}

#[test]
fn learn_picks_a_dominant_arm_everywhere() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let mut rng = stream(2);
    let n = 300;
    let xs = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let rewards: Vec<f64> = actions
        .iter()
        .map(|&a| if a == 1 { 5.0 } else { 0.0 } + rng.random_range(-0.1..0.1))
        .collect();
    let path = d.join("three.csv");
    ObservationSet::new(xs.clone(), actions, rewards, 3)
        .unwrap()
        .save(&path)
        .unwrap();
    let out = run(
        d,
        &format!(
            "command = learn\ninput = {}\noutcome_model = least-squares\nmethod = dr\n",
            path.display()
        ),
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let policy = LinearPolicy::from_text(&fs::read_to_string(d.join("out/policy.csv")).unwrap()).unwrap();
    for x in xs.outer_iter() {
        assert_eq!(policy.action(x.as_slice().unwrap()), 1);
    }
}

#[test]
fn learn_is_reproducible_and_beats_constant_rules() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let data = save_training(d, &DgpConfig::new(1.0, 1.0, 3.5, 2000, 3).unwrap());
    let cfg = format!(
        "command = learn\ninput = {}\nmethod = dr\nretarget = binary-homoskedastic\n",
        data.display()
    );
    let files = ["policy.csv", "nuisance.csv", "scores.csv"];
    assert!(run(d, &cfg, &["--seed", "9"]).status.success());
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(d.join("out").join(f)).unwrap()).collect();
    assert!(run(d, &cfg, &["--seed", "9"]).status.success());
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(d.join("out").join(f)).unwrap(), bytes, "{f}");
    }

    let policy = LinearPolicy::from_text(std::str::from_utf8(&first[0]).unwrap()).unwrap();
    let test = draw_test(1.0, 1.0, 50_000, 4).unwrap();
    let learned = regret_tabulated(&policy, &test.covariates, &test.outcome_mean).unwrap();
    for a in 0..2 {
        let constant = LinearPolicy::constant(2, 2, a);
        assert!(learned < regret_tabulated(&constant, &test.covariates, &test.outcome_mean).unwrap());
    }
}

#[test]
fn minimal_simulation_writes_results() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = run(
        d,
        "command = simulate\nscenarios = well-stationary, mis-outward\nmethods = ipw, dr+rt\nsizes = 200\nbetas = 1\nreplicates = 2\ntest_size = 1000\ntheta_steps = 90\n",
        &["--seed", "5"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("rows=4"));
    let text = fs::read_to_string(d.join("out/results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,method,retargeted,n,beta,c,q1_test,q2,mean_regret,se,replicates,failures"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][..3], ["well-stationary", "ipw", "false"]);
    assert_eq!(rows[3][..3], ["mis-outward", "dr", "true"]);
    assert_eq!(rows[3][6..8], ["0.5", "0.5"]);
    assert!(rows.iter().all(|r| r[10] == "2" && r[11] == "0"));
}

#[test]
fn default_size_grid_has_eight_points() {
    let cfg = retarget_cli::config::RawConfig::parse(
        "command = simulate\nscenarios = well-stationary\nmethods = ipw, ipw+rt, dr, dr+rt\nsizes = default\n",
    )
    .unwrap();
    match retarget_cli::RunConfig::from_raw(cfg).unwrap().command {
        retarget_cli::Command::Simulate(s) => {
            assert_eq!(s.sizes, vec![200, 400, 800, 1600, 3200, 6400, 12800, 25600]);
            assert_eq!(s.methods.len(), 4);
            assert_eq!(s.betas, vec![3.5]);
        }
        other => panic!("{other:?}"),
    }
}
