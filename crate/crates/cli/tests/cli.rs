use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-epi"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_simulate_calibrate_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "n_agents = 200\nseed = 4\n").unwrap();
    ok(&["gen-data", "--spec", s(&spec), "--out", s(&data)]);
    let config = data.join("scenario.toml");
    assert!(config.exists());

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let printed = ok(&[
        "simulate",
        "--config",
        s(&config),
        "--runs",
        "2",
        "--seed",
        "3",
        "--out",
        s(&a),
    ]);
    assert!(printed.contains("run 1 seed 4"), "{printed}");
    ok(&[
        "simulate",
        "--config",
        s(&config),
        "--runs",
        "2",
        "--seed",
        "3",
        "--out",
        s(&b),
    ]);
    for f in [
        "symptomatic_daily.csv",
        "symptomatic_mean.csv",
        "compartment_masses.csv",
        "exchange_log.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    // Target from the simulated mean, then a 2 x 2 grid around it.
    let mean = std::fs::read_to_string(a.join("symptomatic_mean.csv")).unwrap();
    let mut target = String::from("date,symptomatic_7day_avg\n");
    for line in mean.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        target.push_str(&format!("{},{}\n", cols[0], cols[1]));
    }
    std::fs::write(data.join("target.csv"), target).unwrap();
    let text = std::fs::read_to_string(&config).unwrap() + "target = \"target.csv\"\n";
    std::fs::write(&config, text).unwrap();
    let grid = dir.path().join("grid.toml");
    std::fs::write(
        &grid,
        "interval1 = [450.0, 900.0]\ninterval2 = [160.0, 320.0]\nruns = 2\nparameter = \"pde\"\n",
    )
    .unwrap();
    let cal = dir.path().join("cal");
    let printed = ok(&[
        "calibrate",
        "--config",
        s(&config),
        "--grid",
        s(&grid),
        "--out",
        s(&cal),
    ]);
    assert!(printed.contains("best beta = ("), "{printed}");
    let table = std::fs::read_to_string(cal.join("calibration_grid.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "{table}");

    let sim = dir.path().join("sim");
    ok(&[
        "simulate",
        "--config",
        s(&config),
        "--runs",
        "4",
        "--out",
        s(&sim),
    ]);
    let printed = ok(&[
        "analyze-runs",
        "--metrics",
        s(&sim.join("run_metrics.csv")),
        "--threshold",
        "50",
    ]);
    assert!(printed.contains("runs"), "{printed}");
}

#[test]
fn bad_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "preset = \"berlin-25pct\"\nbogus = 1\n").unwrap();
    let out = cli(&["simulate", "--config", s(&config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field `bogus`"));

    let metrics = dir.path().join("m.csv");
    std::fs::write(&metrics, "run,seed,mae\n0,1,NaN\n").unwrap();
    let out = cli(&["analyze-runs", "--metrics", s(&metrics), "--threshold", "2"]);
    assert!(!out.status.success());
}
