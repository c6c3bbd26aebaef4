use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ssp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssp"))
        .args(args)
        .output()
        .expect("spawn ssp")
}

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn simulate_writes_every_table_and_plot_renders_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = ssp(&[
        "simulate",
        "--config",
        smoke().to_str().unwrap(),
        "--sensors",
        "both",
        "--steering",
        "planned",
        "--seed",
        "3",
        "--steps",
        "3",
        "--tl-dump",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        header(&out.join("metrics.csv")),
        "run_id,step,rrmse,ssim,total_variance"
    );
    assert_eq!(header(&out.join("trajectory.csv")), "step,range,depth,pitch,steering");
    assert_eq!(header(&out.join("measurements.csv")), "time_index,range,depth,ctd,tl");
    assert!(header(&out.join("belief.csv")).starts_with("step,theta_0,"));
    assert!(header(&out.join("planner.csv")).starts_with("step,best_cost,straight_cost,evaluations"));
    for f in ["field_true.csv", "field_est.csv"] {
        assert_eq!(header(&out.join(f)), "range,depth,speed");
    }
    assert_eq!(header(&out.join("tl_field.csv")), "range,depth,tl");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);

    let svg = dir.path().join("svg");
    let o = ssp(&["plot", "--in", out.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "rrmse.svg",
        "ssim.svg",
        "field_true.svg",
        "field_est.svg",
        "tl_field.svg",
    ] {
        assert!(svg.join(f).exists(), "{f}");
    }
}

#[test]
fn montecarlo_over_several_configurations_writes_one_directory_each() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    let o = ssp(&[
        "montecarlo",
        "--config",
        smoke().to_str().unwrap(),
        "--runs",
        "2",
        "--steps",
        "2",
        "--sensors",
        "ctd,tl",
        "--steering",
        "straight",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for sub in ["ctd_straight", "tl_straight"] {
        let m = std::fs::read_to_string(out.join(sub).join("metrics.csv")).unwrap();
        assert_eq!(m.lines().count(), 1 + 2 * 3);
        assert_eq!(
            header(&out.join(sub).join("summary.csv")),
            "step,mean_rrmse,mean_ssim,mean_total_variance,runs"
        );
    }
    let svg = dir.path().join("svg");
    let o = ssp(&["plot", "--in", out.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(svg.join("rrmse_by_configuration.svg").exists());
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[planner]\npopulaton = 3\n").unwrap();
    let o = ssp(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error:") && err.contains("bad.toml"), "{err}");

    let o = ssp(&[
        "plot",
        "--in",
        dir.path().join("absent").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = ssp(&["simulate", "--sensors", "sonar", "--out", "x"]);
    assert!(!o.status.success());
}
