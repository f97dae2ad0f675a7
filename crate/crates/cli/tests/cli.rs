use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kdvlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdvlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(o: &Output) -> HashMap<String, String> {
    stdout(o)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn num(r: &HashMap<String, String>, key: &str) -> f64 {
    r[key]
        .parse()
        .unwrap_or_else(|_| panic!("{key} = {}", r[key]))
}

#[test]
fn shipped_figure_config_is_the_builtin_default() {
    let path = configs().join("figure1.toml");
    let from_file = kdv_delay::config::Config::load(&path, &[]).unwrap();
    let mut builtin = kdv_delay::config::Config::figure_one();
    builtin.base_dir = from_file.base_dir.clone();
    assert_eq!(from_file, builtin);
}

#[test]
fn certify_with_fixed_weight() {
    let o = kdvlab(&["certify", "--override", "certificate.mu1=0.04"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(&o);
    assert_eq!(r["feasible"], "true");
    let mu2 = kdv_delay::certify::mu2_of_mu1(1.0, 0.5, 0.5, 5.0, 0.04).unwrap();
    assert_eq!(num(&r, "mu2"), mu2);
    let f = kdv_delay::certify::rate_f(0.04, 5.0, kdv_delay::certify::RateVariant::Proposition)
        .unwrap();
    assert!((num(&r, "lambda") - f.min(0.1 / 3.6)).abs() < 1e-14);
    assert_eq!(r["phi.a11"], "-1.5");
}

#[test]
fn certify_rejects_long_domain() {
    let o = kdvlab(&["certify", "--override", "domain.L=6"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("outside certified range (0, √3π)"));
}

#[test]
fn certify_without_delay_gain() {
    let o = kdvlab(&["certify", "--override", "gains.beta=0"]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&o);
    assert_eq!(r["mu2"], "0");
    let f = kdv_delay::certify::rate_f(
        num(&r, "mu1"),
        5.0,
        kdv_delay::certify::RateVariant::Proposition,
    )
    .unwrap();
    assert_eq!(num(&r, "lambda"), f);
}

#[test]
fn certify_reports_infeasible_weights() {
    let o = kdvlab(&[
        "certify",
        "--override",
        "certificate.mu1=0.15",
        "--override",
        "certificate.mu2=0.9",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let r = report(&o);
    assert_eq!(r["feasible"], "false");
    assert!(r["diagnostics"].contains("a11"));
}

#[test]
fn optimize_writes_figure_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = kdvlab(&["optimize", "--points", "10", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let coarse = report(&o);
    let fine = report(&kdvlab(&["optimize", "--points", "1000"]));
    assert_eq!(coarse["crossing.mu1"], fine["crossing.mu1"]);
    assert!((num(&coarse, "crossing.mu1") - 0.0477723106).abs() < 1e-9);
    assert!((num(&coarse, "crossing.lambda") - 0.0071089027).abs() < 1e-9);
    for name in [
        "curve_f.dat",
        "curve_g.dat",
        "curve_min.dat",
        "figure1.gp",
        "optimum.txt",
        "config.toml",
        "manifest.txt",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let g = std::fs::read_to_string(dir.path().join("curve_g.dat")).unwrap();
    assert!(g.starts_with("# kdvlab curve-g v1 manifest=manifest.txt"));
    let rows: Vec<(f64, f64)> = g
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace().map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 10);
    assert!((rows[0].1 - 1.0 / 12.0).abs() < 1e-12);
    assert_eq!(rows[9], (0.05, 0.0));
    assert!(rows.windows(2).all(|w| w[1].1 < w[0].1));
}

#[test]
fn optimize_without_delay_gain_fails() {
    let o = kdvlab(&["optimize", "--override", "gains.beta=0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("optimizer requires β≠0 (g undefined)"));
}

#[test]
fn simulate_passes_bound_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = kdvlab(&[
        "simulate",
        "--resolution",
        "coarse",
        "--override",
        "time.horizon=30",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(&o);
    assert_eq!(r["bound.pass"], "true");
    assert!(num(&r, "fit.lambda") >= num(&r, "lambda"));
    let csv = std::fs::read_to_string(a.join("record.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("# kdvlab record v1 manifest=manifest.txt")
    );
    assert_eq!(lines.next(), Some("t,E,V,eta_x_L,z1"));

    // Every output is listed in the manifest with its digest.
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    for name in ["record.csv", "report.txt", "config.toml"] {
        let bytes = std::fs::read(a.join(name)).unwrap();
        let line = format!("output.{name}.sha256={}", sha_hex(&bytes));
        assert!(manifest.contains(&line), "{name}");
    }

    let again = kdvlab(&[
        "simulate",
        "--config",
        a.join("config.toml").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("record.csv")).unwrap(),
        std::fs::read(b.join("record.csv")).unwrap()
    );
}

fn sha_hex(bytes: &[u8]) -> String {
    // The manifest digest, recomputed independently of the binary.
    let out = Command::new("sha256sum")
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child.stdin.take().unwrap().write_all(bytes)?;
            child.wait_with_output()
        })
        .unwrap();
    String::from_utf8(out.stdout)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn conservative_run_is_labelled() {
    let cfg = configs().join("conservative.toml");
    let o = kdvlab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--resolution",
        "coarse",
        "--override",
        "time.horizon=5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(&o);
    assert_eq!(r["regime"], "conservative");
    assert!(r["fit.error"].contains("constant"));
    assert!(num(&r, "max_relative_increase").abs() < 1e-12);
}

#[test]
fn nonlinear_run_reports_picard() {
    let o = kdvlab(&[
        "simulate",
        "--resolution",
        "coarse",
        "--override",
        "time.horizon=2",
        "--override",
        "scheme.nonlinear=true",
        "--override",
        "ic.amplitude=1e-2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(&o);
    assert!(num(&r, "picard.max_iterations") <= 10.0);
    assert!(num(&r, "picard.steps") > 0.0);
}

#[test]
fn snapshots_are_dumped_per_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdvlab(&[
        "simulate",
        "--resolution",
        "coarse",
        "--override",
        "time.horizon=1",
        "--override",
        "scheme.snapshot_every=50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let eta = std::fs::read_to_string(dir.path().join("snapshots_eta.txt")).unwrap();
    let first: Vec<&str> = eta.lines().take(2).collect();
    assert!(first[0].starts_with("# t=0e0 nx=128 L=5e0"));
    assert_eq!(first[1].split(' ').count(), 129);
}

#[test]
fn shipped_delay_configs_run() {
    for name in ["tabulated-delay.toml", "constant-delay.toml"] {
        let cfg = configs().join(name);
        let o = kdvlab(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--resolution",
            "coarse",
            "--override",
            "time.horizon=8",
        ]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
        assert_eq!(report(&o)["bound.pass"], "true", "{name}");
    }
}

#[test]
fn zero_data_channels_agree_exactly() {
    let o = kdvlab(&[
        "compare-channels",
        "--resolution",
        "coarse",
        "--override",
        "ic.kind=zero",
        "--override",
        "time.horizon=1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&o);
    assert_eq!(r["trace_sup"], "0");
    assert_eq!(r["energy_sup_relative"], "0");
}

#[test]
fn sweep_flips_feasibility_at_the_alpha_bound() {
    let o = kdvlab(&["sweep", "--param", "alpha=0.3:2:18"]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<Vec<String>> = stdout(&o)
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 18);
    for row in &rows {
        let alpha: f64 = row[0].parse().unwrap();
        assert_eq!(row[5] == "1", alpha > 0.75, "{row:?}");
    }
}

#[test]
fn sweep_rate_collapses_as_d_grows() {
    let o = kdvlab(&["sweep", "--param", "d=0:0.66:23"]);
    let lambdas: Vec<f64> = stdout(&o)
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(7).unwrap().parse().unwrap())
        .collect();
    assert!(lambdas.windows(2).all(|w| w[1] < w[0]));
    assert!(lambdas[22] < 0.1 * lambdas[0]);
}

#[test]
fn sweep_edge_cases() {
    let empty = kdvlab(&["sweep", "--param", "alpha=0:1:0"]);
    assert_eq!(empty.status.code(), Some(0));
    assert_eq!(stdout(&empty).lines().count(), 2);
    let big = kdvlab(&[
        "sweep",
        "--param",
        "alpha=0:1:200",
        "--param",
        "beta=0:1:100",
    ]);
    assert_eq!(big.status.code(), Some(2));
    assert!(stderr(&big).contains("cap"));
    let bad = kdvlab(&["sweep", "--param", "gamma=0:1:3"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_output_is_deterministic() {
    let args = [
        "sweep",
        "--param",
        "alpha=0.8:1.5:7",
        "--param",
        "beta=-0.4:0.4:5",
    ];
    assert_eq!(kdvlab(&args).stdout, kdvlab(&args).stdout);
}

#[test]
fn configuration_errors_exit_with_two() {
    for args in [
        vec!["certify", "--override", "grid.nx=oops"],
        vec!["certify", "--override", "physics.x=1"],
        vec!["certify", "--config", "/nonexistent/run.toml"],
        vec!["simulate", "--resolution", "ultra"],
        vec!["simulate", "--override", "scheme.channel=fifo"],
    ] {
        let o = kdvlab(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}
