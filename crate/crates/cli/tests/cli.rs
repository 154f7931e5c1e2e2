use std::fs;
use std::process::{Command, Output};

use bht_core::interval::IntervalReport;
use bht_core::report::{HardenReport, PlainReport};

fn bht(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bht-sim"))
        .args(args)
        .env_remove("BHT_SIM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn run_prints_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hello.bhs");
    fs::write(&path, "LOADI R0, 72\nOUT R0\nLOADI R0, 105\nOUT R0\nHALT\n").unwrap();
    let o = bht(&["run", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "72\n105\n");
}

#[test]
fn run_json_round_trips() {
    let o = bht(&["run", "builtin:fib", "--json"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let report: PlainReport = serde_json::from_str(&text).unwrap();
    assert_eq!(&report.output[..6], &[1, 1, 2, 3, 5, 8]);
    assert_eq!(serde_json::to_string_pretty(&report).unwrap() + "\n", text);
}

#[test]
fn trapping_program_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trap.bhs");
    fs::write(&path, "LOADI R0, 99999\nLOAD R1, [R0+0]\nHALT\n").unwrap();
    assert_eq!(code(&bht(&["run", path.to_str().unwrap()])), 2);
    assert_eq!(code(&bht(&["harden", path.to_str().unwrap()])), 2);
}

#[test]
fn harden_fault_free_summary() {
    let o = bht(&["harden", "builtin:fib", "--quantum", "100"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let ratio: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("overhead ratio"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(ratio >= 2.0, "{text}");
    assert!(text.contains("oracle          match"));
}

#[test]
fn harden_json_round_trips_and_matches_oracle() {
    let o = bht(&[
        "harden",
        "builtin:sort",
        "--quantum",
        "50",
        "--mode",
        "single",
        "--seed",
        "5",
        "--json",
    ]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let report: HardenReport = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&report).unwrap() + "\n", text);
    assert_eq!(report.oracle_diff, None);
    assert!(report.faults_applied() > 0);
    assert!(report.overhead_ratio >= 2.0);
}

#[test]
fn seed_falls_back_to_environment() {
    let run = |env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_bht-sim"));
        c.args(["harden", "builtin:gcd", "--mode", "single", "--json"]);
        match env {
            Some(v) => c.env("BHT_SIM_SEED", v),
            None => c.env_remove("BHT_SIM_SEED"),
        };
        serde_json::from_slice::<HardenReport>(&c.output().unwrap().stdout).unwrap()
    };
    assert_eq!(run(Some("31")).seed, 31);
    assert_eq!(run(None).seed, 0);
    assert_eq!(run(Some("31")), run(Some("31")));
}

#[test]
fn scripted_plan_file_exhausting_retries_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    let faults: Vec<String> = (0..4)
        .map(|a| {
            format!(
                r#"{{"treatment": 0, "attempt": {a}, "phase": "run1", "tick": 2, "target": {{"register": {{"index": 0, "bit": 1}}}}}}"#
            )
        })
        .collect();
    fs::write(&plan, format!("[{}]", faults.join(","))).unwrap();
    let o = bht(&[
        "harden",
        "builtin:fib",
        "--fault-plan",
        plan.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn campaign_missing_config_is_usage_error() {
    let o = bht(&["campaign", "definitely-missing.json"]);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
}

#[test]
fn campaign_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"workloads": [{"builtin": "poly"}, {"builtin": "gcd"}],
            "treatment": {"quantum": 40},
            "fault_mode": {"single_per_treatment": {}},
            "trials": 30,
            "outputs": {"csv": "rows.csv", "json": "summary.json", "gnuplot": "overhead.dat"}}"#,
    )
    .unwrap();
    let o = bht(&[
        "campaign",
        cfg.to_str().unwrap(),
        "--jobs",
        "2",
        "--seed",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["trials"], 30);
    assert_eq!(summary["master_seed"], 4);
    assert_eq!(summary["sdc"], 0);
    for f in ["rows.csv", "summary.json", "overhead.dat"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn interval_prints_json() {
    let o = bht(&[
        "interval",
        "--rate",
        "1000",
        "--epsilon",
        "1e-9",
        "--ips",
        "1e9",
    ]);
    assert_eq!(code(&o), 0);
    let r: IntervalReport = serde_json::from_str(&stdout(&o)).unwrap();
    let t = r.t_max.finite().unwrap();
    assert!(bht_core::interval::p_multi(1000.0, t).unwrap() <= 1e-9);
    assert_eq!(r.quantum, Some((t * 1e9 / 2.1).floor() as u64));
}

#[test]
fn gen_size_one_is_halt_and_assembles() {
    let o = bht(&["gen", "--seed", "3", "--size", "1"]);
    assert_eq!(stdout(&o), "HALT\n");
    let o = bht(&["gen", "--seed", "3", "--size", "50", "--yield-density", "0"]);
    assert!(!stdout(&o).contains("YIELD"));
    assert!(bht_core::asm::assemble(&stdout(&o)).is_ok());
}

#[test]
fn asm_writes_binary_and_listing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fib.bin");
    let o = bht(&["asm", "builtin:fib", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let image = bht_core::asm::assemble(&bht_core::corpus::builtin_source("fib").unwrap()).unwrap();
    let bytes = fs::read(&out).unwrap();
    assert_eq!(bytes.len(), image.code.len() * 4);
    assert_eq!(stdout(&o).lines().count(), image.code.len());
    assert!(stdout(&o).starts_with("00000  "));
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(code(&bht(&["run", "builtin:fib", "--bogus"])), 1);
    assert_eq!(code(&bht(&["frobnicate"])), 1);
    assert_eq!(code(&bht(&[])), 1);
    assert_eq!(code(&bht(&["--help"])), 0);
}

#[test]
fn shipped_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = bht_core::campaign::CampaignConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert!(!bht_core::campaign::resolve_workloads(&cfg.workloads)
            .unwrap()
            .is_empty());
        n += 1;
    }
    assert_eq!(n, 4);
}
