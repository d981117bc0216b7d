use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pdrloop(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdrloop"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PDRLOOP_SEED")
        .output()
        .expect("spawn pdrloop")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn small_dataset(dir: &Path) {
    ok(&pdrloop(
        &[
            "simulate",
            "--out",
            "ds",
            "--set",
            "width=20",
            "--set",
            "height=10",
            "--set",
            "laps=2",
        ],
        dir,
    ));
}

#[test]
fn simulate_run_eval_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    for f in [
        "steps.jsonl",
        "scans.jsonl",
        "truth.jsonl",
        "meta.cfg",
        "aps.jsonl",
    ] {
        assert!(d.join("ds").join(f).is_file(), "{f}");
    }

    fs::write(d.join("run.cfg"), "# small\nn_particles = 100\n").unwrap();
    for m in ["raw", "proposed", "gp"] {
        let report = format!("{m}.json");
        let out = ok(&pdrloop(
            &[
                "run",
                "--dataset",
                "ds",
                "--method",
                m,
                "--config",
                "run.cfg",
                "--out",
                &report,
            ],
            d,
        ));
        assert!(out.starts_with(&format!("{m}: seed 0")), "{out}");
    }

    let table = ok(&pdrloop(
        &[
            "eval",
            "--report",
            "raw.json",
            "proposed.json",
            "gp.json",
            "--dataset",
            "ds",
        ],
        d,
    ));
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].contains("mean_err_m"));
    assert_eq!(lines.len(), 1 + 3 * 2);

    ok(&pdrloop(
        &[
            "plot-data",
            "--report",
            "raw.json",
            "proposed.json",
            "gp.json",
            "--out",
            "plots",
            "--dataset",
            "ds",
            "--gp-map",
            "ap00",
        ],
        d,
    ));
    let epochs = |name: &str| -> Vec<String> {
        fs::read_to_string(d.join("plots").join(name))
            .unwrap()
            .lines()
            .map(|l| l.split(',').next().unwrap().to_owned())
            .collect()
    };
    let raw = epochs("trajectory_raw.csv");
    assert_eq!(raw, epochs("trajectory_proposed.csv"));
    assert_eq!(raw, epochs("trajectory_gp.csv"));
    assert!(d.join("plots/errors_gp.csv").is_file());
    let map = fs::read_to_string(d.join("plots/gp_map.csv")).unwrap();
    assert!(map.starts_with("x,y,mu,var\n"));
    assert!(map.lines().count() > 10);
}

#[test]
fn seed_env_override_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    let out = Command::new(env!("CARGO_BIN_EXE_pdrloop"))
        .args([
            "run",
            "--dataset",
            "ds",
            "--method",
            "proposed",
            "--out",
            "r.json",
        ])
        .args(["--set", "n_particles=50"])
        .env("PDRLOOP_SEED", "42")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(ok(&out).contains("seed 42"));
    let report = fs::read_to_string(d.join("r.json")).unwrap();
    assert!(report.contains("\"seed\": 42"));
    assert!(report.contains("\"rng_seed\": 42"));
}

#[test]
fn no_truth_means_no_error_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    fs::remove_file(d.join("ds/truth.jsonl")).unwrap();
    ok(&pdrloop(
        &[
            "run",
            "--dataset",
            "ds",
            "--method",
            "raw",
            "--out",
            "r.json",
        ],
        d,
    ));
    ok(&pdrloop(
        &["plot-data", "--report", "r.json", "--out", "plots"],
        d,
    ));
    assert!(d.join("plots/trajectory_raw.csv").is_file());
    assert!(!d.join("plots/errors_raw.csv").exists());

    let out = pdrloop(&["eval", "--report", "r.json", "--dataset", "ds"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("truth"));
}

#[test]
fn errors_exit_nonzero_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cases: &[&[&str]] = &[
        &[
            "run",
            "--dataset",
            "missing",
            "--method",
            "raw",
            "--out",
            "r.json",
        ],
        &["simulate", "--out", "ds", "--set", "laps=0"],
        &["simulate", "--out", "ds", "--set", "no_such_key=1"],
        &["simulate", "--out", "ds", "--set", "novalue"],
        &[
            "run",
            "--dataset",
            "ds",
            "--method",
            "kalman",
            "--out",
            "r.json",
        ],
    ];
    for args in cases {
        let out = pdrloop(args, d);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }

    small_dataset(d);
    let steps = d.join("ds/steps.jsonl");
    let mut body = fs::read_to_string(&steps).unwrap();
    body.push_str("{\"t\":1e9,\"dl\":-1.0,\"dtheta\":0.0}\n");
    fs::write(&steps, body).unwrap();
    let out = pdrloop(
        &[
            "run",
            "--dataset",
            "ds",
            "--method",
            "raw",
            "--out",
            "r.json",
        ],
        d,
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("steps.jsonl:"));
}
