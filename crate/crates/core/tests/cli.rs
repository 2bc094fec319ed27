use std::fs;
use std::process::{Command, Output};

use swipt::cli::{cmd_policy_curve, cmd_sweep, Figure, OutputFormat, Render, RunConfig};

fn swipt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swipt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn solve_reports_reference_points() {
    let out = swipt(&["solve", "--lp", "40", "--q0-frac", "0.5"]);
    assert!(out.status.success());
    let csv = stdout(&out);
    assert!((column(&csv, "rho_p")[0] - 0.144).abs() < 1e-3);
    assert!((column(&csv, "rho_d")[0] - 0.738).abs() < 1e-3);

    let out = swipt(&["solve", "--q0-frac", "0.55"]);
    assert_eq!(column(&stdout(&out), "rho_p")[0], 1.0);

    let out = swipt(&["solve", "--q0-frac", "0", "--adaptive", "--format", "json"]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let entry = &json["entries"][0];
    assert_eq!(entry["nonadaptive"]["split"]["rho_p"], 1.0);
    assert_eq!(entry["nonadaptive"]["split"]["rho_d"], 1.0);
    assert_eq!(entry["adaptive"]["kind"]["kind"], "all_detect");
    assert!(entry["adaptive"]["curve"].as_array().unwrap().len() > 1);
}

#[test]
fn exit_codes() {
    assert_eq!(swipt(&["solve", "--q0-frac", "1.5"]).status.code(), Some(1));
    assert_eq!(swipt(&["solve", "--lp", "100"]).status.code(), Some(1));
    assert_eq!(swipt(&["solve", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        swipt(&["solve", "--config", "/nonexistent/run.json"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        swipt(&["solve", "--output", "/nonexistent/dir/out.csv"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn verify_passes_by_default_and_fails_with_crude_quadrature() {
    let out = swipt(&["verify", "--format", "json"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() >= 10);

    let out = swipt(&["verify", "--quad-order", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains(",false,"));

    let out = swipt(&["verify", "--q0-frac", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("endpoint_full_harvesting[lp=4],0,0,true"));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(
        &config,
        r#"{"lp": [4, 40], "q0_grid": {"start": 0.1, "stop": 0.3, "step": 0.1}, "format": "json"}"#,
    )
    .unwrap();
    let output = dir.path().join("policies.csv");
    let out = swipt(&[
        "sweep",
        "--figure",
        "policies",
        "--config",
        config.to_str().unwrap(),
        "--format",
        "csv",
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let csv = fs::read_to_string(&output).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "lp,ld,q0_frac,rho_p,rho_d,rho_fixed"
    );
    assert_eq!(column(&csv, "lp"), vec![4.0, 4.0, 4.0, 40.0, 40.0, 40.0]);
    assert_eq!(column(&csv, "q0_frac"), vec![0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);
}

#[test]
fn db_inputs_convert_at_the_boundary() {
    let linear = stdout(&swipt(&["solve", "--power", "100", "--noise-var", "1"]));
    let db = stdout(&swipt(&[
        "solve",
        "--power",
        "20",
        "--noise-var",
        "0",
        "--db",
    ]));
    assert_eq!(linear, db);
}

#[test]
fn comparison_sweep_schema_and_endpoint() {
    let out = swipt(&[
        "sweep",
        "--figure",
        "capacity-comparison",
        "--q0-grid",
        "0:0.2:0.1",
    ]);
    assert!(out.status.success());
    let csv = stdout(&out);
    assert!(csv.starts_with("q0_frac,rho_p_na,rho_d_na,cap_na,rho_p_ad,cap_ad,cap_ad_stderr\n"));
    assert!(csv.ends_with('\n'));
    let (na, ad) = (column(&csv, "cap_na"), column(&csv, "cap_ad"));
    assert!((na[0] - ad[0]).abs() <= 1e-9);
    assert!(ad.iter().zip(&na).all(|(a, n)| a >= n));
    assert!(column(&csv, "cap_ad_stderr").iter().all(|s| *s == 0.0));

    let out = swipt(&["sweep", "--figure", "capacity-comparison", "--lp", "4,40"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn monte_carlo_sweep_is_byte_identical_across_thread_counts() {
    let args = |threads: &'static str| {
        vec![
            "sweep",
            "--figure",
            "capacity-comparison",
            "--q0-grid",
            "0.2:0.8:0.3",
            "--mc",
            "--blocks",
            "5000",
            "--seed",
            "9",
            "--mode",
            "pilot",
            "--threads",
            threads,
        ]
    };
    let one = swipt(&args("1"));
    let four = swipt(&args("4"));
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(one.stdout, swipt(&args("1")).stdout);
    assert!(column(&stdout(&one), "cap_ad_stderr")
        .iter()
        .all(|s| *s > 0.0));
}

#[test]
fn policy_curve_matches_both_entry_points() {
    let out = swipt(&[
        "policy-curve",
        "--rho-p",
        "1",
        "--g-points",
        "11",
        "--g-max",
        "10",
    ]);
    assert!(out.status.success());
    let via_sweep = swipt(&[
        "sweep",
        "--figure",
        "policy-curve",
        "--rho-p",
        "1",
        "--g-points",
        "11",
        "--g-max",
        "10",
    ]);
    assert_eq!(out.stdout, via_sweep.stdout);
    let csv = stdout(&out);
    assert!(csv.starts_with("g,rho_d_imperfect,rho_d_perfect\n"));
    assert_eq!(
        column(&csv, "g"),
        (0..=10).map(f64::from).collect::<Vec<_>>()
    );
    assert_eq!(column(&csv, "rho_d_imperfect")[0], 0.0);
    assert_eq!(column(&csv, "rho_d_perfect")[0], 1.0);
}

#[test]
fn library_rendering_round_trips() {
    let run = RunConfig {
        lp: vec![4],
        q0_frac: 0.5,
        rho_p: Some(1.0),
        g_points: 21,
        ..RunConfig::default()
    };
    let curve = cmd_policy_curve(&run).unwrap();
    assert!(curve.lambda.is_some() && curve.lambda_perfect.is_some());
    let csv = curve.render(OutputFormat::Csv);
    for (line, p) in csv.lines().skip(1).zip(&curve.points) {
        let values: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values, vec![p.g, p.rho_d_imperfect, p.rho_d_perfect]);
    }

    let sweep = cmd_sweep(&run, Figure::CapacityNonadaptive).unwrap();
    let json: serde_json::Value = serde_json::from_str(&sweep.render(OutputFormat::Json)).unwrap();
    assert_eq!(json["figure"], "capacity-nonadaptive");
    assert_eq!(json["records"].as_array().unwrap().len(), 19);
    for r in &sweep.records {
        assert!(r.capacity_nonadaptive >= r.capacity_fixed);
    }
}
