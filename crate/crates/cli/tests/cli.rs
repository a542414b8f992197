use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const DEFAULT: &str = include_str!("../../../scenarios/default.toml");

fn mhmp() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mhmp"));
    c.env_remove("MHMP_OUT_DIR");
    c
}

/// Default scenario cut to two replicas of two blocks.
fn small_scenario(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = DEFAULT.replace("horizon_s = 300.0", "horizon_s = 1.0").replace("replicas = 20", "replicas = 2");
    for (from, to) in edits {
        assert!(text.contains(from), "{from}");
        text = text.replace(from, to);
    }
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn run_writes_result_files_with_stable_headers() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[]);
    let out = dir.path().join("out");
    let res = mhmp().arg("run").arg(&scenario).args(["--scheme", "mhmp_ll", "--out"]).arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    assert_eq!(header(&out.join("cdf.csv")), "scheme,service,latency_s,cdf");
    assert_eq!(header(&out.join("channel.csv")), "block,layer,tx,rx,loss_db");
    assert_eq!(header(&out.join("traffic.csv")), "block,layer,relay,service,lambda_pkts,backlog_pkts");
    assert_eq!(
        header(&out.join("trajectories.csv")),
        "block,scheme,layer,relay,service,alpha_link0,alpha_link1,power_link0_w,power_link1_w"
    );
    assert_eq!(
        header(&out.join("metrics.csv")),
        "replica,block,scheme,service,worst_latency_s,total_power_w,status,allp_mode,flagged,within_budget,\
         path0_latency_s,path1_latency_s,path2_latency_s,path3_latency_s"
    );

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let keys: Vec<&str> = summary.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        ["block_s", "blocks", "latency_budget_ms", "p_tot_dbm", "relay_layers", "replicas", "schema_version", "schemes", "seed"]
    );
    let scheme = &summary["schemes"][0];
    assert_eq!(scheme["scheme"], "mhmp_ll");
    let scheme_keys: Vec<&str> = scheme.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        scheme_keys,
        [
            "avg_latency_ms",
            "avg_power_mw",
            "blocks",
            "budget_exceeded_blocks",
            "flagged_blocks",
            "infeasible_blocks",
            "min_power_mode_share",
            "replica_avg_latency_s",
            "replica_avg_power_w",
            "scheme"
        ]
    );
    assert_eq!(summary["schema_version"], 1);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let res = mhmp().arg("run").arg(&scenario).args(["--scheme", "mhmp_lp", "--scheme", "sp_ll", "--seed", "42", "--out"]).arg(&out).output().unwrap();
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["summary.json", "metrics.csv", "cdf.csv", "channel.csv", "traffic.csv", "trajectories.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn environment_sets_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[]);
    let env_out = dir.path().join("from_env");
    let res = mhmp().env("MHMP_OUT_DIR", &env_out).arg("run").arg(&scenario).args(["--scheme", "sp_ll"]).output().unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert!(env_out.join("summary.json").exists());

    let flag_out = dir.path().join("from_flag");
    let res =
        mhmp().env("MHMP_OUT_DIR", &env_out).arg("run").arg(&scenario).args(["--scheme", "sp_ll", "--out"]).arg(&flag_out).output().unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert!(flag_out.join("summary.json").exists());
}

#[test]
fn missing_power_cap_is_a_validation_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[("p_tot_dbm = 23.0", "")]);
    let res = mhmp().arg("run").arg(&scenario).arg("--out").arg(dir.path().join("out")).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    let err = stderr_json(&res);
    assert_eq!(err["error"], "validation");
    assert_eq!(err["keys"][0], "p_tot_dbm");
}

#[test]
fn unknown_scheme_is_a_usage_error_listing_valid_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[]);
    let res = mhmp().arg("compare").arg(&scenario).args(["--schemes", "mhmp_ll,warp_drive"]).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    let err = stderr_json(&res);
    assert_eq!(err["error"], "usage");
    let message = err["message"].as_str().unwrap();
    for kind in ["sp_ll", "ps2_lp", "two_path_ll", "mhmp_lp", "allp"] {
        assert!(message.contains(kind), "{message}");
    }
}

#[test]
fn compare_prints_a_row_per_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[]);
    let res = mhmp().arg("compare").arg(&scenario).args(["--schemes", "sp_ll,ps1_ll,mhmp_ll", "--out"]).arg(dir.path().join("o")).output().unwrap();
    assert_eq!(res.status.code(), Some(0));
    let table = String::from_utf8(res.stdout).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(table.lines().next().unwrap().contains("power_mw"));
}

#[test]
fn impossible_budget_exits_as_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[("latency_budget_ms = 30.0", "latency_budget_ms = 0.001")]);
    let res = mhmp().arg("run").arg(&scenario).args(["--scheme", "mhmp_lp", "--out"]).arg(dir.path().join("o")).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(stderr_json(&res)["error"], "infeasible");
    // Results are still written for inspection.
    assert!(dir.path().join("o/summary.json").exists());
}

#[test]
fn hop_sweep_writes_one_row_per_layer_count() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[("horizon_s = 1.0", "horizon_s = 0.5")]);
    let out = dir.path().join("sweep");
    let res = mhmp().arg("sweep").arg(&scenario).args(["--hops", "1..5", "--metric", "latency", "--out"]).arg(&out).output().unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "relay_layers,metric,unit,mhmp,sp,savings_ratio,savings_ci95_half_width");
    assert_eq!(lines.len(), 6);
    assert_eq!(String::from_utf8(res.stdout).unwrap(), text);
}

#[test]
fn bad_hop_range_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[]);
    let res = mhmp().arg("sweep").arg(&scenario).args(["--hops", "3..1", "--metric", "latency"]).output().unwrap();
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(stderr_json(&res)["error"], "usage");
}

#[test]
fn oracle_check_passes_on_a_symmetric_single_layer() {
    let dir = tempfile::tempdir().unwrap();
    let scenario =
        small_scenario(dir.path(), &[("relay_layers = 2", "relay_layers = 1"), ("shadowing_sigma_db = 7.82", "shadowing_sigma_db = 0.0")]);
    let res = mhmp().arg("oracle-check").arg(&scenario).args(["--resolution", "0.01"]).output().unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(report["max_gap"].as_f64().unwrap() <= 0.01);
    assert_eq!(report["pass"], true);
}

#[test]
fn oracle_check_fails_when_a_threshold_is_exceeded() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path(), &[("relay_layers = 2", "relay_layers = 1")]);
    let res = mhmp().arg("oracle-check").arg(&scenario).args(["--max-gap=-1"]).output().unwrap();
    assert_eq!(res.status.code(), Some(3));
    assert_eq!(stderr_json(&res)["error"], "internal");
}

#[test]
fn help_exits_cleanly() {
    let res = mhmp().arg("--help").output().unwrap();
    assert_eq!(res.status.code(), Some(0));
    let text = String::from_utf8(res.stdout).unwrap();
    for cmd in ["run", "compare", "sweep", "oracle-check"] {
        assert!(text.contains(cmd));
    }
}
