use std::path::Path;
use std::process::Command;
use std::time::Instant;

use utilprice_cli::run::{bench_csv, run_bench, CSV_HEADER};
use utilprice_cli::{parse_config, run_price, CliError};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_utilprice"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn price_writes_csv_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.cfg", "utility = linear\nmc_paths = 2000\n");
    let out = dir.path().join("out");
    let status = bin()
        .args(["price", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--slice", "0.4,0"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = std::fs::read_to_string(out.join("price_curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 101);
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("beta = 0"), "{report}");
    assert!(report.contains("complementarity vdelta"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "sigma = 0.3\ntheta = -0.1\n");
    let out = bin().args(["check", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let missing = bin().args(["price", "--config", "/nonexistent/run.cfg"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn power_utility_on_baseline_grid_exits_4_with_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "pow.cfg", "utility = power\na = 0.5\n");
    let out = bin().args(["price", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("at node ("), "{err}");
    assert!(!dir.path().join("price_curve.csv").exists());
}

#[test]
fn self_difference_prices_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse_config("delta = 0\nmc_paths = 0\n").unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    let run = run_price(&cfg).unwrap();
    assert!(run.pair.surface.price.iter().all(|&p| p == 0.0 || p.is_nan()));
    assert!(run.rows.iter().all(|r| r.price == 0.0));
}

#[test]
fn price_curve_is_bit_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse_config("mc_paths = 0\n").unwrap();
    let mut csv = Vec::new();
    for name in ["a", "b"] {
        cfg.out_dir = dir.path().join(name);
        run_price(&cfg).unwrap();
        csv.push(std::fs::read(cfg.out_dir.join("price_curve.csv")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
}

#[test]
fn trivial_bench_is_fast() {
    let cfg = parse_config("N_alpha = 2\nN_beta = 2\nN_S = 2\nN = 2\nmc_paths = 0\n").unwrap();
    let start = Instant::now();
    let rows = run_bench(&cfg, [1, 1, 1], 1).unwrap();
    assert!(start.elapsed().as_secs_f64() < 0.1);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].cells, 27);
    assert!(bench_csv(&rows).starts_with("cells,seconds,seconds_per_cell_per_iter\n"));
}

#[test]
fn bench_cli_emits_one_row_per_scaled_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "b.cfg", "N_S = 20\nN = 2\n");
    let out = bin()
        .args(["bench", "--config"])
        .arg(&cfg)
        .args(["--scale-dims", "2,1,2", "--repeats", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let cells: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(cells, vec![7 * 7 * 21, 7 * 7 * 41, 7 * 13 * 21]);
}

#[test]
fn domain_errors_map_to_exit_4() {
    let e = parse_config("utility = logarithmic\nb = 1\n").unwrap();
    let err = utilprice_cli::run::prevalidate(&e).unwrap_err();
    assert!(matches!(err, CliError::Domain(_)));
    assert_eq!(err.exit_code(), 4);
}
