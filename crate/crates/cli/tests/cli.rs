use std::process::Command;

use entangler_cli::{main_with_args, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with_args(std::iter::once("entangler").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn every_command_needs_a_seed() {
    for cmd in ["run", "sample", "figure4", "table1", "oracle"] {
        let (code, _, err) = cli(&[cmd]);
        assert_eq!(code, EXIT_USAGE, "{cmd}");
        assert!(err.contains("--seed"), "{cmd}: {err}");
    }
}

#[test]
fn usage_errors() {
    assert_eq!(cli(&["oracle", "--seed", "1", "--scope", ""]).0, EXIT_USAGE);
    assert_eq!(cli(&["oracle", "--seed", "1", "--scope", "optics"]).0, EXIT_USAGE);
    assert_eq!(cli(&["run", "--seed", "1", "--bogus"]).0, EXIT_USAGE);
    assert_eq!(cli(&["run", "--seed", "1", "--input", "HX"]).0, EXIT_USAGE);
    assert_eq!(cli(&["run", "--seed", "1", "--gamma", "0.1"]).0, EXIT_USAGE);
    assert_eq!(cli(&["--help"]).0, EXIT_OK);
}

#[test]
fn numeric_domain_errors() {
    assert_eq!(cli(&["run", "--seed", "1", "--eta", "1.5"]).0, EXIT_NUMERIC);
    // QND beams too close for ideal heralding
    assert_eq!(cli(&["run", "--seed", "1", "--qnd-alpha", "1"]).0, EXIT_NUMERIC);
    assert_eq!(cli(&["run", "--seed", "1", "--eta", "0.5", "--gamma", "0.1", "--dt", "1"]).0, EXIT_NUMERIC);
}

#[test]
fn lossless_run_reports_unit_fidelity() {
    let json = |args: &[&str]| {
        let (code, out, _) = cli(args);
        assert_eq!(code, EXIT_OK);
        serde_json::from_str::<serde_json::Value>(out.trim()).unwrap()
    };
    for seed in ["1", "2", "3", "4"] {
        let v = json(&["run", "--seed", seed, "--alpha", "100", "--format", "json"]);
        assert_eq!(v["ports"], "KK");
        assert_eq!(v["success"], true);
        assert!((v["fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-10);
        // at the default amplitude a vacuum herald keeps the e^{-2(α sin θ)²} odd admixture
        let v = json(&["run", "--seed", seed, "--format", "json"]);
        let p_err = (-2.0 * (10.0 * 0.3f64.sin()).powi(2)).exp();
        assert!(v["fidelity"].as_f64().unwrap() >= 1.0 / (1.0 + p_err) - 1e-12);
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 9\neta = 0.5\ninput = \"random\"\nbackend = \"threshold\"\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let from_file = cli(&["run", "--config", cfg]);
    let explicit = cli(&["run", "--seed", "9", "--eta", "0.5", "--input", "random", "--backend", "threshold"]);
    assert_eq!(from_file.0, EXIT_OK);
    assert_eq!(from_file.1, explicit.1);
    let overridden = cli(&["run", "--config", cfg, "--eta", "0.8"]);
    let want = cli(&["run", "--seed", "9", "--eta", "0.8", "--input", "random", "--backend", "threshold"]);
    assert_eq!(overridden.1, want.1);
    assert_ne!(overridden.1, from_file.1);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sede = 1\n").unwrap();
    assert_eq!(cli(&["run", "--config", bad.to_str().unwrap()]).0, EXIT_USAGE);
}

#[test]
fn sweep_csv_goes_to_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_entangler"))
        .args(["figure4", "--seed", "1", "--samples", "500", "--etas", "0.5,0.3", "--f-points", "4"])
        .env("ENTANGLER_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(EXIT_OK));
    let csv = std::fs::read_to_string(dir.path().join("figure4.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# schema: figure4/v1");
    assert_eq!(lines[1], "eta,F,P_closed,P_sim,n,std_err");
    assert_eq!(lines.len(), 2 + 8);
    assert!(lines[2].starts_with("0.5,0.51,"));
}

#[test]
fn traces_are_line_delimited_json() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let (code, _, _) = cli(&["sample", "--seed", "2", "--samples", "5", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let text = std::fs::read_to_string(&trace).unwrap();
    let runs: Vec<u64> =
        text.lines().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["run"].as_u64().unwrap()).collect();
    assert_eq!(runs.len(), 5 * 6);
    assert!(runs.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn table_and_oracle_scopes_pass() {
    let (code, out, _) = cli(&["table1", "--seed", "3", "--trials", "10"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().filter(|l| l.starts_with("pass ")).count(), 10);
    let (code, out, _) = cli(&["oracle", "--seed", "3", "--scope", "elements"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("max elements"));
}

#[test]
fn sweep_row_at_half_transmission() {
    let (code, out, _) =
        cli(&["figure4", "--seed", "5", "--etas", "0.5", "--f-min", "0.9", "--f-max", "0.9", "--f-points", "1"]);
    assert_eq!(code, EXIT_OK);
    let row: Vec<f64> = out.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[..2], [0.5, 0.9]);
    assert!((row[2] - 0.36).abs() < 1e-12);
    assert!((row[3] - 0.36).abs() < 3.0 * row[5]);
}
