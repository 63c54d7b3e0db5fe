use std::process::{Command, Output};

fn qsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsd"))
        .args(args)
        .output()
        .expect("failed to launch qsd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn reference_two_level_to_stdout() {
    let o = qsd(&["reference", "--model", "two-level", "--obs", "population:1", "--t-final", "1", "--dt", "0.25"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,observable,value");
    assert_eq!(lines.len(), 6);
    let last: Vec<&str> = lines[5].split(',').collect();
    assert_eq!(&last[..2], ["1", "population:1"]);
    let p: f64 = last[2].parse().unwrap();
    assert!((p - 0.8 * (-0.4f64).exp()).abs() < 1e-6);
}

#[test]
fn ensemble_writes_file_and_config_is_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "model = two-level\nobs = population:1 # excited\nsamples = 4\nt_final = 0.5\n").unwrap();
    let out = dir.path().join("ens.csv");
    let o = qsd(&[
        "ensemble",
        "--config",
        cfg.to_str().unwrap(),
        "--samples",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,observable,mean,std,ci_halfwidth,n_samples");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("0.5,population:1,"));
    assert!(lines[3].ends_with(",16"));
}

#[test]
fn ensemble_is_reproducible() {
    let args = ["ensemble", "--model", "two-level", "--obs", "energy", "--samples", "8", "--t-final", "0.5", "--seed", "9"];
    assert_eq!(stdout(&qsd(&args)), stdout(&qsd(&args)));
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(qsd(&["ensemble", "--solver", "order7"]).status.code(), Some(2));
    assert_eq!(qsd(&["ensemble", "--t-final", "7.1"]).status.code(), Some(2));
    assert_eq!(qsd(&["ensemble", "--set", "colour=red"]).status.code(), Some(2));
    assert_eq!(qsd(&["audit-integrals", "--draws", "10"]).status.code(), Some(2));
    assert_eq!(qsd(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let o = qsd(&[
        "ensemble", "--model", "two-level", "--obs", "energy", "--solver", "order1", "--set", "gamma=5",
        "--dt", "1", "--t-final", "2", "--samples", "16",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn self_convergence_exits_4_with_report() {
    let o = qsd(&[
        "converge", "--model", "two-level", "--obs", "population:1", "--solver", "reference", "--t-final", "1",
        "--dts", "0.25,0.125,0.0625",
    ]);
    assert_eq!(o.status.code(), Some(4));
    let text = stdout(&o);
    assert!(text.starts_with("dt,abs_error,mc_halfwidth,bias_dominated\n"));
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",false")));
}

#[test]
fn audit_and_stability_tables() {
    let o = qsd(&["audit-integrals", "--n-lindblad", "1", "--draws", "100000"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("cell,expected_re,expected_im,estimate_re,estimate_im,se_re,se_im,pass\n"));
    assert!(text.contains("I^00,0.03125,0,0.03125,0,0,0,true"));

    let o = qsd(&[
        "stability", "--model", "two-level", "--obs", "energy", "--solver", "order1", "--set", "gamma=5",
        "--t-final", "2", "--tau", "1", "--samples", "16", "--dts", "1,0.01",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "dt,diverged,time,trajectory");
    assert!(lines[1].starts_with("1,true,"));
    assert_eq!(lines[2], "0.01,false,,");
}
