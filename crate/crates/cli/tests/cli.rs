use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use psbayes::samplers::ChainConfig;
use psbayes::sim::{run_replicate, DgpSpec, SlotResult};
use psbayes::strategies::{Strategy, StrategyConfig};

const QUICK: [&str; 8] = ["--boot", "40", "--iterations", "600", "--burn-in", "200", "--n", "300"];

fn psbayes(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psbayes"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn replicate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let mut args = vec!["replicate", "--r", "2", "--seed", "7", "--out", out];
        args.extend(QUICK);
        let res = psbayes(&args, dir.path());
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    for file in ["records.csv", "summary.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let records = fs::read_to_string(dir.path().join("a/records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2 * 5);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"seed": 3, "r": 1, "strategies": "A1", "dgp": {"n": 300}, "analysis": {"boot": 40}}"#,
    )
    .unwrap();
    let via_file = psbayes(&["replicate", "--config", "run.json", "--seed", "9", "--out", "f"], dir.path());
    assert_eq!(code(&via_file), 0, "{}", stderr(&via_file));
    let via_flags = psbayes(
        &["replicate", "--r", "1", "--seed", "9", "--strategies", "A1", "--n", "300", "--boot", "40", "--out", "g"],
        dir.path(),
    );
    assert_eq!(code(&via_flags), 0, "{}", stderr(&via_flags));
    let a = fs::read(dir.path().join("f/records.csv")).unwrap();
    let b = fs::read(dir.path().join("g/records.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn analyze_matches_the_in_process_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let sim = psbayes(&["simulate", "--seed", "11", "--n", "300", "--replicate", "2", "--out", "d.csv"], dir.path());
    assert_eq!(code(&sim), 0, "{}", stderr(&sim));
    let mut args = vec!["analyze", "--data", "d.csv", "--seed", "11", "--replicate", "2", "--out", "r.json"];
    args.extend(QUICK);
    let res = psbayes(&args, dir.path());
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("r.json")).unwrap()).unwrap();

    let cfg = StrategyConfig {
        boot: 40,
        chain: ChainConfig {
            iterations: 600,
            burn_in: 200,
            ..ChainConfig::default()
        },
        ..StrategyConfig::default()
    };
    let record = run_replicate(&DgpSpec::default().with_n(300), &Strategy::ALL, &cfg, 11, 2).unwrap();
    for s in Strategy::ALL {
        let SlotResult::Done(d) = record.slot(s) else { panic!("{s} failed in process") };
        let entry = &json[s.name()];
        assert_eq!(entry["delta_hat"].as_f64().unwrap(), d.delta.point, "{s}");
        assert_eq!(entry["ci_low"].as_f64().unwrap(), d.delta.interval_low, "{s}");
        assert_eq!(entry["ci_high"].as_f64().unwrap(), d.delta.interval_high, "{s}");
        let theta: Vec<f64> = entry["theta_xc"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(&theta[1..], &d.theta_xc[..], "{s}");
    }
}

const HEADER: &str = "replicate,strategy,delta_hat,ci_low,ci_high,ci_width,covered,theta_xc_1,theta_xc_2,theta_xc_3,theta_xc_4,theta_xc_5,theta_xc_6,failed";

fn three_interval_fixture(dir: &Path) {
    let rows = [
        "0,A1,0,-1,1,2,1,0.1,0.2,0.3,0.4,0.5,0.6,0",
        "1,A1,0.15,0.1,0.2,0.1,0,0.1,0.2,0.3,0.4,0.5,0.6,0",
        "2,A1,-0.25,-0.5,0,0.5,1,0.1,0.2,0.3,0.4,0.5,0.6,0",
    ];
    fs::write(dir.join("records.csv"), format!("{HEADER}\n{}\n", rows.join("\n"))).unwrap();
}

#[test]
fn summarize_scores_the_three_interval_fixture() {
    let dir = tempfile::tempdir().unwrap();
    three_interval_fixture(dir.path());
    let res = psbayes(&["summarize", "--records", "records.csv"], dir.path());
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let json: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let a1 = &json["A1"];
    assert!((a1["coverage"].as_f64().unwrap() - 0.6667).abs() < 1e-4);
    for field in ["mean_delta", "sd_delta", "bias", "coverage", "coverage_mcse", "mean_width", "median_width", "n_failed", "n_used"] {
        assert!(a1.get(field).is_some(), "missing {field}");
    }
    assert_eq!(a1["n_used"], 3);
}

#[test]
fn plot_draws_one_box_per_strategy_per_panel() {
    let dir = tempfile::tempdir().unwrap();
    three_interval_fixture(dir.path());
    let res = psbayes(&["plot", "--records", "records.csv", "--out", "fig.svg"], dir.path());
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let svg = fs::read_to_string(dir.path().join("fig.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed XML");
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    let metadata = root.children().find(|n| n.has_tag_name("metadata")).unwrap();
    assert!(metadata.text().unwrap().contains("1.5 IQR"));

    let panels: Vec<_> = root.descendants().filter(|n| n.attribute("class") == Some("panel")).collect();
    assert_eq!(panels.len(), 8);
    for panel in &panels {
        let boxes: Vec<_> = panel.descendants().filter(|n| n.attribute("class") == Some("box")).collect();
        assert_eq!(boxes.len(), 1, "panel {:?}", panel.attribute("id"));
        assert_eq!(boxes[0].attribute("data-strategy"), Some("A1"));
        let id = panel.attribute("id").unwrap();
        let rules = panel.descendants().filter(|n| n.attribute("class") == Some("truth")).count();
        assert_eq!(rules, usize::from(id != "panel-width"), "{id}");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["replicate", "--bogus"][..],
        &["frobnicate"],
        &["replicate", "--strategies", "A9"],
        &["replicate", "--r", "0"],
        &["replicate", "--config", "missing.json"],
    ] {
        let res = psbayes(args, dir.path());
        assert_eq!(code(&res), 1, "{args:?}: {}", stderr(&res));
    }
    assert_eq!(code(&psbayes(&["--help"], dir.path())), 0);
}

#[test]
fn malformed_csv_exits_with_two_and_names_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.csv"), "x,y,c1\n1,0,0.5\n0,1,abc\n").unwrap();
    let res = psbayes(&["analyze", "--data", "d.csv", "--strategies", "A1"], dir.path());
    assert_eq!(code(&res), 2);
    let msg = stderr(&res);
    assert!(msg.contains("row 3") && msg.contains("c1"), "{msg}");

    fs::write(dir.path().join("r.csv"), format!("{HEADER}\n0,A1,x,0,0,0,1,0,0,0,0,0,0,0\n")).unwrap();
    let res = psbayes(&["summarize", "--records", "r.csv"], dir.path());
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("delta_hat"));
}

#[test]
fn batch_failures_exit_with_three_after_writing() {
    // Treatment coefficients this large separate X from C in most datasets.
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"dgp": {"n": 50, "treatment_coefs": [40, 40, 40, 40, 40, 40]}, "analysis": {"boot": 20}}"#,
    )
    .unwrap();
    let res = psbayes(
        &["replicate", "--config", "run.json", "--r", "4", "--strategies", "A1", "--out", "o"],
        dir.path(),
    );
    assert_eq!(code(&res), 3, "{}", stderr(&res));
    let records = fs::read_to_string(dir.path().join("o/records.csv")).unwrap();
    assert!(records.lines().skip(1).any(|l| l.ends_with(",1")));
}
