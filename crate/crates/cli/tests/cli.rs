use std::path::PathBuf;
use std::process::{Command, Output};

fn selcopy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selcopy")).args(args).output().expect("spawn selcopy")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("selcopy-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn rows(csv: &[u8]) -> Vec<csv::StringRecord> {
    csv::Reader::from_reader(csv).records().map(Result::unwrap).collect()
}

fn column(headers: &csv::StringRecord, name: &str) -> usize {
    headers.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn paired_sweep_has_equal_digests() {
    let out = selcopy(&["run", "--mode", "both", "--sizes", "1K,64K,1M", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(&out.stdout[..]);
    let h = rdr.headers().unwrap().clone();
    let recs = rows(&out.stdout);
    assert_eq!(recs.len(), 6);
    let (mode, size, digest) = (column(&h, "mode"), column(&h, "body_size"), column(&h, "transcript_digest"));
    for pair in recs.chunks(2) {
        assert_eq!((&pair[0][mode], &pair[1][mode]), ("baseline", "selective"));
        assert_eq!(pair[0][size], pair[1][size]);
        assert_eq!(pair[0][digest], pair[1][digest]);
    }
}

#[test]
fn chunked_run_issues_one_identifier_per_chunk() {
    let out = selcopy(&["run", "--chunked", "--sizes", "1M", "--mode", "selective"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(&out.stdout[..]);
    let h = rdr.headers().unwrap().clone();
    let recs = rows(&out.stdout);
    // 4 exchanges x 64 chunks of 16 KiB.
    assert_eq!(&recs[0][column(&h, "vpis_issued")], "256");
}

#[test]
fn empty_bodies_move_nothing_by_reference() {
    let out = selcopy(&["run", "--sizes", "0", "--format", "jsonl"]);
    assert!(out.status.success());
    for line in String::from_utf8(out.stdout).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["meta_selcopy_bytes"], 0);
        assert_eq!(v["meta_skb_trans_count"], 0);
        assert_eq!(v["vpis_issued"], 0);
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let dir = scratch("det");
    let mut bytes = Vec::new();
    for i in 0..2 {
        let path = dir.join(format!("r{i}.csv"));
        let out = selcopy(&["run", "--sizes", "3K,200K", "--connections", "2", "--seed", "11", "--out", path.to_str().unwrap()]);
        assert!(out.status.success());
        bytes.push(std::fs::read(path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = scratch("cfg");
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, "sizes = \"2K\"\nmode = \"selective\"\nformat = \"jsonl\"\nmessages = 2\n").unwrap();
    let out = selcopy(&["run", "--config", cfg.to_str().unwrap(), "--mode", "baseline"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    // Two exchanges, counted as four messages.
    assert_eq!((v["mode"].as_str(), v["body_size"].as_u64(), v["messages"].as_u64()), (Some("baseline"), Some(2048), Some(4)));
    std::fs::write(&cfg, "sizes = \"2K\"\nbogus = 1\n").unwrap();
    assert_eq!(selcopy(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn fuzz_zero_iterations_is_a_no_op() {
    let out = selcopy(&["fuzz", "--iterations", "0"]);
    assert!(out.status.success());
}

#[test]
fn fuzz_with_corrupted_identifiers_passes() {
    let dir = scratch("fuzz");
    let log = dir.join("fuzz.jsonl");
    let out = selcopy(&["fuzz", "--iterations", "5", "--fault", "vpi-corrupt", "--seed", "3", "--out", log.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&log).unwrap();
    assert_eq!(text.lines().count(), 5);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!((v["ok"].as_bool(), v["lookup_hits"].as_u64()), (Some(true), Some(0)));
    }
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn invalid_combinations_are_usage_errors() {
    let out = selcopy(&["run", "--chunk-size", "4K"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--chunked"));
    assert_eq!(selcopy(&["run", "--sizes", "1Q"]).status.code(), Some(2));
    assert_eq!(selcopy(&["run", "--connections", "0"]).status.code(), Some(2));
    assert_ne!(selcopy(&["run", "--mode", "sideways"]).status.code(), Some(0));
}
