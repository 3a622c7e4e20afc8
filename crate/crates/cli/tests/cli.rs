use std::path::PathBuf;
use std::process::{Command, Output};

fn res(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_res")).args(args).output().expect("spawn res")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("res-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn psi_check_reports_res2_conditions() {
    let csv = stdout(&res(&["psi-check", "--scheme", "res2", "--c2", "0.5"]));
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    let conds: Vec<&str> = rows.iter().map(|r| r.split(',').nth(4).unwrap()).collect();
    assert_eq!(conds, ["psi1", "psi2", "psi12"]);
    assert!(rows.iter().all(|r| r.ends_with(",PASS")));
}

#[test]
fn psi_check_flags_dpmpp2() {
    let csv = stdout(&res(&["psi-check", "--scheme", "dpmpp2"]));
    assert!(csv.lines().any(|l| l.contains(",psi2,") && l.ends_with(",FAIL")));
}

#[test]
fn convergence_slope_for_res3() {
    let csv = stdout(&res(&["convergence", "--scheme", "res3", "--problem", "sin"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,problem,n_steps,error,slope,r2"));
    let slope: f64 = lines.next().unwrap().split(',').nth(4).unwrap().parse().unwrap();
    assert!((slope - 3.0).abs() < 0.25, "{slope}");
}

#[test]
fn one_exponential_euler_step_on_a_constant_denoiser() {
    // x1 = e^{-h} x0 + (1 - e^{-h}) κ with e^{-h} = σ1/σ0
    let out = res(&[
        "sample", "--scheme", "expeuler", "--steps", "1", "--problem", "const", "--kappa", "-3",
        "--x0", "2", "--sigma-max", "4", "--sigma-min", "1",
    ]);
    let csv = stdout(&out);
    let last = csv.lines().last().unwrap();
    let x1: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    let want = 0.25 * 2.0 + 0.75 * -3.0;
    assert!((x1 - want).abs() < 1e-15, "{x1} vs {want}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("nfe=1 "));
}

#[test]
fn same_seed_same_bytes() {
    let args = ["sample", "--scheme", "res2", "--nfe", "40", "--eta", "0.2", "--seed", "17", "--final-denoise"];
    let a = stdout(&res(&args));
    let b = stdout(&res(&args));
    assert_eq!(a, b);
    let c = stdout(&res(&["sample", "--scheme", "res2", "--nfe", "40", "--eta", "0.2", "--seed", "18", "--final-denoise"]));
    assert_ne!(a, c);
    assert!(a.lines().last().unwrap().starts_with("final,"));
}

#[test]
fn out_flag_writes_the_file() {
    let path = scratch("psi.csv");
    let out = res(&["psi-check", "--out", path.to_str().unwrap()]);
    assert!(out.status.success() && out.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("scheme,c2,c3,gamma,condition,max_abs,tolerance,status\n"));
    assert!(text.contains("res3,0.5,0.75,0.75,psi3_at_0,"));
}

#[test]
fn mixture_config_file_is_used() {
    let path = scratch("two.cfg");
    std::fs::write(&path, "# symmetric pair\nweights = 0.5, 0.5\nscales = 0.2, 0.2\nmean.0 = 1, 0\nmean.1 = -1, 0\n").unwrap();
    let csv = stdout(&res(&["sample", "--config", path.to_str().unwrap(), "--nfe", "64", "--seed", "4"]));
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert_eq!(last.len(), 2);
    assert!((last[0].abs() - 1.0).abs() < 0.8 && last[1].abs() < 0.8, "{last:?}");

    let csv = stdout(&res(&["defects", "--config", path.to_str().unwrap(), "--nfe", "16", "--schedule", "uniform-lambda"]));
    assert_eq!(csv.lines().next(), Some("method,schedule,rho,nfe,defect_l1,defect_l2"));
    assert!(csv.lines().nth(1).unwrap().starts_with("res2,uniform-lambda,,16,"));
}

#[test]
fn eta_sweep_emits_one_row_per_eta() {
    let csv = stdout(&res(&["eta-sweep", "--nfe", "20", "--eta", "0,0.1,0.3"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,eta,nfe,defect_l1,terminal_nll"));
    let etas: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(etas, ["0", "0.1", "0.3"]);
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!res(&["frobnicate"]).status.success());
    assert!(!res(&["sample", "--scheme", "res9"]).status.success());
    assert!(!res(&["sample", "--scheme", "res2", "--param", "edm"]).status.success());
    assert!(!res(&["sample", "--scheme", "res2m", "--eta", "0.1"]).status.success());
    assert!(!res(&["sample", "--schedule", "edm", "--rho", "-1"]).status.success());

    let bad = scratch("bad.cfg");
    std::fs::write(&bad, "weights = 0.5, 0.4\nscales = 1, 1\nmean.0 = 0\nmean.1 = 1\n").unwrap();
    let out = res(&["defects", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let missing = res(&["eta-sweep", "--config", "/nonexistent/mix.cfg"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn classical_schemes_default_to_edm_time() {
    let out = res(&["sample", "--scheme", "heun", "--steps", "64", "--problem", "gaussian", "--x0", "40"]);
    let csv = stdout(&out);
    let x: f64 = csv.lines().last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    let exact = 40.0 * ((0.25f64 + 0.002 * 0.002) / (0.25 + 6400.0)).sqrt();
    assert!((x / exact - 1.0).abs() < 0.02, "{x} vs {exact}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("nfe=128 "));
}
