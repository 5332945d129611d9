use std::path::Path;
use std::process::{Command, Output};

use meshcva::PathFamily;

fn meshcva(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshcva"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn estimate_prints_one_csv_row() {
    let out = stdout(&meshcva(&["estimate", "--L", "40", "--n", "10", "--seed", "1"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "estimator,L,L0,n,epsilon,seed,value,std_error");
    let cols: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&cols[..4], &["c1", "40", "NA", "10"]);
    let v: f64 = cols[6].parse().unwrap();
    assert!(v > 0.0 && v < 1.0);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "n = [10]\nL = [30]\nseed = 5\nestimator = \"c2\"\nL0 = 300\n");
    let from_file = stdout(&meshcva(&["estimate", "--config", &cfg]));
    let explicit = stdout(&meshcva(&["estimate", "--estimator", "c2", "--n", "10", "--L", "30", "--L0", "300", "--seed", "5"]));
    assert_eq!(from_file, explicit);
    let overridden = stdout(&meshcva(&["estimate", "--config", &cfg, "--seed", "6"]));
    let direct = stdout(&meshcva(&["estimate", "--estimator", "c2", "--n", "10", "--L", "30", "--L0", "300", "--seed", "6"]));
    assert_eq!(overridden, direct);
    assert_ne!(overridden, from_file);
}

#[test]
fn replicate_writes_a_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    let o = meshcva(&[
        "replicate", "--L", "40", "--L", "20", "--reps", "4", "--L0", "100", "--n", "10", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let rows = meshcva::study::read_report_csv(std::io::BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].0, 20);
    assert!(rows.iter().all(|r| r.1.is_some() && r.2.is_some()));
}

#[test]
fn converge_reports_first_order_error() {
    let out = stdout(&meshcva(&["converge", "--n", "10", "--n", "100", "--n", "1000"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "n,mesh_width,c_delta,abs_error");
    assert_eq!(lines.len(), 4);
}

#[test]
fn oracle_and_file_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(
        dir.path(),
        "model.toml",
        "macro_dim = 1\ncontract_dims = [1]\ninitial_state = [0.0, 0.0]\ndrift = [0.0, 0.05]\ncovariance = [1.0, 0.3, 0.3, 0.5]\n",
    );
    let portfolio = write(
        dir.path(),
        "portfolio.toml",
        "maturities = [0.5, 1.0]\n[[contract]]\nfactor = 1\nmaturity = 2\npayoff = { kind = \"linear\", weights = [1.0, 1.0] }\n\
         [[contract]]\nfactor = 1\nmaturity = 1\npayoff = { kind = \"put\", weights = [0.0, 1.0], strike = 0.2 }\n",
    );
    let out = stdout(&meshcva(&["oracle", "--model", &model, "--portfolio", &portfolio, "--n", "4", "--L", "50", "--L0", "50"]));
    assert!(out.lines().nth(1).unwrap().starts_with("oracle,50,50,4,"));
    let out = stdout(&meshcva(&["estimate", "--model", &model, "--portfolio", &portfolio, "--n", "4", "--L", "30"]));
    assert!(out.lines().nth(1).unwrap().starts_with("c1,30,NA,4,"));
}

#[test]
fn dump_paths_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("paths.csv");
    let o = meshcva(&["dump-paths", "--L", "3", "--n", "5", "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let fam = PathFamily::read_csv(std::io::BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(fam.num_paths(), 3);
    assert_eq!(fam.partition().steps(), 5);
    assert_eq!(fam.seed(), 9);
}

#[test]
fn configuration_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "mesh = 3\n");
    for args in [
        vec!["estimate", "--config", bad.as_str()],
        vec!["estimate", "--model", "/does/not/exist.toml"],
        vec!["estimate", "--n", "0"],
        vec!["estimate", "--L", "1"],
        vec!["estimate", "--delta", "1.5"],
        vec!["replicate", "--estimator", "oracle"],
        vec!["estimate", "--bogus"],
    ] {
        let o = meshcva(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty());
    }
}
