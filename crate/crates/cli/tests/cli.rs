//! Drives the built binary end to end on temp directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pgbk")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn exit(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path
}

const PB_CONFIG: &str =
    r#"{"mode": "piggyback", "k": 4, "r": 3, "s": 3, "w": 16, "seed": 7}"#;

fn ledger_rows(path: &Path) -> Vec<(u64, u64, String, u64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "failed_node,helper,phase,symbols");
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].to_string(),
                f[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn encode_reconstruct_round_trip_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", PB_CONFIG);
    let input = tmp.path().join("input.bin");
    let data: Vec<u8> = (0..1500u32).map(|i| (i * 7 + 3) as u8).collect();
    fs::write(&input, &data).unwrap();
    let shards = tmp.path().join("shards");
    let out = run(&[
        "encode",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        shards.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    assert!(shards.join("manifest.json").exists());
    for subset in ["1,2,3,4", "2,3,5,7", "4,5,6,7"] {
        let back = tmp.path().join(format!("back-{}.bin", subset.replace(',', "-")));
        let out = run(&[
            "reconstruct",
            "--config",
            cfg.to_str().unwrap(),
            "--shards",
            shards.to_str().unwrap(),
            "--nodes",
            subset,
            "--out",
            back.to_str().unwrap(),
        ]);
        assert_eq!(exit(&out), 0, "{}", stderr(&out));
        assert_eq!(fs::read(&back).unwrap(), data, "subset {subset}");
    }
    // Same config and input produce bit-identical shards.
    let shards2 = tmp.path().join("shards2");
    run(&[
        "encode",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        shards2.to_str().unwrap(),
    ]);
    for i in 1..=7 {
        let name = format!("shard-{i:03}.pgbk");
        assert_eq!(
            fs::read(shards.join(&name)).unwrap(),
            fs::read(shards2.join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn empty_file_gives_zero_payloads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", PB_CONFIG);
    let input = tmp.path().join("empty.bin");
    fs::write(&input, []).unwrap();
    let shards = tmp.path().join("shards");
    let out = run(&[
        "encode",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        shards.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    for i in [1usize, 6] {
        let bytes = fs::read(shards.join(format!("shard-{i:03}.pgbk"))).unwrap();
        assert!(bytes[60..].iter().all(|&b| b == 0), "shard {i} payload not zero");
    }
    let back = tmp.path().join("back.bin");
    run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--shards",
        shards.to_str().unwrap(),
        "--nodes",
        "1,2,3,4",
        "--out",
        back.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(&back).unwrap().len(), 0);
}

#[test]
fn repair_restores_both_roles_with_exact_ledgers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", PB_CONFIG);
    let input = tmp.path().join("input.bin");
    fs::write(&input, vec![0xA5u8; 900]).unwrap();
    let shards = tmp.path().join("shards");
    run(&[
        "encode",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        shards.to_str().unwrap(),
    ]);
    // Systematic node 2: (k+r-1)·s·α′/r = 6·3·81/3 = 486 symbols.
    let saved = fs::read(shards.join("shard-002.pgbk")).unwrap();
    fs::remove_file(shards.join("shard-002.pgbk")).unwrap();
    let ledger = tmp.path().join("sys.csv");
    let out = run(&[
        "repair",
        "--config",
        cfg.to_str().unwrap(),
        "--shards",
        shards.to_str().unwrap(),
        "--node",
        "2",
        "--ledger",
        ledger.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(shards.join("shard-002.pgbk")).unwrap(), saved);
    let rows = ledger_rows(&ledger);
    assert_eq!(rows.iter().map(|r| r.3).sum::<u64>(), 486);
    assert!(rows.iter().all(|r| r.0 == 2 && r.3 == 81));
    let helpers: Vec<u64> = rows.iter().map(|r| r.1).collect();
    let mut sorted = helpers.clone();
    sorted.sort_unstable();
    assert_eq!(helpers, sorted);
    assert_eq!(helpers, vec![1, 3, 4, 5, 6, 7]);
    // Parity node 6: (k+s(s-1))·α′ = 10·81 = 810 symbols.
    let saved = fs::read(shards.join("shard-006.pgbk")).unwrap();
    fs::remove_file(shards.join("shard-006.pgbk")).unwrap();
    let ledger = tmp.path().join("par.csv");
    let out = run(&[
        "repair",
        "--config",
        cfg.to_str().unwrap(),
        "--shards",
        shards.to_str().unwrap(),
        "--node",
        "6",
        "--ledger",
        ledger.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(shards.join("shard-006.pgbk")).unwrap(), saved);
    let rows = ledger_rows(&ledger);
    assert_eq!(rows.iter().map(|r| r.3).sum::<u64>(), 810);
    // Two missing shards: refused.
    fs::remove_file(shards.join("shard-003.pgbk")).unwrap();
    fs::remove_file(shards.join("shard-005.pgbk")).unwrap();
    let out = run(&[
        "repair",
        "--config",
        cfg.to_str().unwrap(),
        "--shards",
        shards.to_str().unwrap(),
        "--node",
        "3",
        "--ledger",
        tmp.path().join("x.csv").to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 2);
    assert!(stderr(&out).contains("single failure"));
}

#[test]
fn verify_passes_default_and_rejects_tampered_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", PB_CONFIG);
    let out = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("bit-exact"));
    let tampered = write_config(
        tmp.path(),
        "tampered.json",
        r#"{"mode": "piggyback", "k": 4, "r": 3, "s": 2, "w": 16, "seed": 7,
            "injection": [[1,1],[1,2],[1,3]]}"#,
    );
    let out = run(&["verify", "--config", tampered.to_str().unwrap()]);
    assert_eq!(exit(&out), 1);
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn unbalanced_table_needs_the_flag_and_costs_more() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sub.json",
        r#"{"mode": "piggyback", "k": 3, "r": 3, "s": 2, "w": 8, "seed": 5,
            "injection": [[2,1],[1,2],[1,3]]}"#,
    );
    let input = tmp.path().join("input.bin");
    fs::write(&input, vec![0x5Au8; 100]).unwrap();
    let shards = tmp.path().join("shards");
    let refused = run(&[
        "encode",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        shards.to_str().unwrap(),
    ]);
    assert_eq!(exit(&refused), 2);
    assert!(stderr(&refused).contains("--allow-suboptimal"));
    let out = run(&[
        "encode",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        shards.to_str().unwrap(),
        "--allow-suboptimal",
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    // Reconstruction learns the permission from the shard headers.
    let back = tmp.path().join("back.bin");
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--shards",
        shards.to_str().unwrap(),
        "--nodes",
        "2,4,6",
        "--out",
        back.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(&back).unwrap(), vec![0x5Au8; 100]);
    // First parity: k + |S_1| + |S_0| = 3+1+2 = 6 cells of 27 symbols.
    fs::remove_file(shards.join("shard-004.pgbk")).unwrap();
    let ledger = tmp.path().join("led.csv");
    let out = run(&[
        "repair",
        "--config",
        cfg.to_str().unwrap(),
        "--shards",
        shards.to_str().unwrap(),
        "--node",
        "4",
        "--ledger",
        ledger.to_str().unwrap(),
        "--allow-suboptimal",
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let rows = ledger_rows(&ledger);
    assert_eq!(rows.iter().map(|r| r.3).sum::<u64>(), 162);
}

#[test]
fn balanced_mode_round_trips_with_constant_helpers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bal.json",
        r#"{"mode": "balanced", "k": 4, "r": 3, "s": 3, "w": 16, "seed": 9, "bibd": "fano"}"#,
    );
    let input = tmp.path().join("input.bin");
    let data: Vec<u8> = (0..9000u32).map(|i| (i % 251) as u8).collect();
    fs::write(&input, &data).unwrap();
    let shards = tmp.path().join("shards");
    let out = run(&[
        "encode",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        shards.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let saved = fs::read(shards.join("shard-003.pgbk")).unwrap();
    fs::remove_file(shards.join("shard-003.pgbk")).unwrap();
    let ledger = tmp.path().join("bal.csv");
    let out = run(&[
        "repair",
        "--config",
        cfg.to_str().unwrap(),
        "--shards",
        shards.to_str().unwrap(),
        "--node",
        "3",
        "--ledger",
        ledger.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(shards.join("shard-003.pgbk")).unwrap(), saved);
    let rows = ledger_rows(&ledger);
    let mut per_helper = std::collections::BTreeMap::new();
    for r in &rows {
        *per_helper.entry(r.1).or_insert(0u64) += r.3;
    }
    assert_eq!(per_helper.len(), 6);
    assert!(per_helper.values().all(|&v| v == 729), "{per_helper:?}");
    let back = tmp.path().join("back.bin");
    let out = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--shards",
        shards.to_str().unwrap(),
        "--nodes",
        "1,4,6,7",
        "--out",
        back.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(&back).unwrap(), data);
}

#[test]
fn bench_grid_rows_all_match() {
    let tmp = tempfile::tempdir().unwrap();
    let out_csv = tmp.path().join("bench.csv");
    let out = run(&["bench", "--grid", "k∈{4,8}, r=2, s=2", "--out", out_csv.to_str().unwrap()]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&out_csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("k,r,s,w,alpha"));
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[8], "true", "{line}");
        assert_eq!(fields[11], "true", "{line}");
    }
    // Usage errors come back as exit 2.
    let bad = run(&["bench", "--grid", "k=4", "--out", out_csv.to_str().unwrap()]);
    assert_eq!(exit(&bad), 2);
}

#[test]
fn bibd_preset_emits_and_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let design = tmp.path().join("design.json");
    let out = run(&["bibd", "--preset", "13-4-1", "--emit", design.to_str().unwrap()]);
    assert_eq!(exit(&out), 0, "{}", stderr(&out));
    let out = run(&["bibd", "--validate", design.to_str().unwrap()]);
    assert_eq!(exit(&out), 0);
    assert!(stdout(&out).contains("e=4 b=13 ok=true"));
    let mut value: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&design).unwrap()).unwrap();
    value["blocks"][0][1] = serde_json::json!(3);
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&value).unwrap()).unwrap();
    let out = run(&["bibd", "--validate", bad.to_str().unwrap()]);
    assert_eq!(exit(&out), 1);
    assert!(stdout(&out).contains("ok=false"));
}

#[test]
fn bandwidth_prints_exact_fractions() {
    let out = run(&["bandwidth", "--k", "10", "--r", "2", "--s", "2"]);
    assert_eq!(exit(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("31/4"), "{text}");
    assert!(text.contains("11/2"), "{text}");
}

#[test]
fn oversized_input_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", PB_CONFIG);
    let input = tmp.path().join("big.bin");
    // Capacity is k·s·α′ = 972 symbols = 1944 bytes at w=16.
    fs::write(&input, vec![1u8; 2000]).unwrap();
    let out = run(&[
        "encode",
        "--config",
        cfg.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--out",
        tmp.path().join("shards").to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 2);
    assert!(stderr(&out).contains("symbols"));
}
