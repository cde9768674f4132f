use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fedelim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedelim")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "objective = \"garland\"\nclients = 3\nhorizon = 400\ncheckpoint_stride = 50\n";

#[test]
fn run_writes_three_files_with_fixed_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = fedelim(&[
        "run", "--config", &cfg, "--out", out.to_str().unwrap(), "--runs", "1", "--seed", "7",
        "--variant", "pfpne", "--variant", "local-only",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let regret = fs::read_to_string(out.join("regret.csv")).unwrap();
    let mut lines = regret.lines();
    assert_eq!(lines.next(), Some("variant,seed,t,avg_cum_regret"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 8);
    assert!(rows[0].starts_with("local-only,7,50,"));
    assert!(rows[15].starts_with("pfpne,7,400,"));

    let comm = fs::read_to_string(out.join("comm.csv")).unwrap();
    let mut lines = comm.lines();
    assert_eq!(lines.next(), Some("variant,seed,round_index,depth,scalars_up,scalars_down,cumulative_scalars"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.starts_with("pfpne,7,")));

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    for v in ["pfpne", "local-only"] {
        let s = &summary["variants"][v];
        for key in ["final_mean", "final_std", "comm_rounds_mean", "transition_t_mean"] {
            assert!(s.get(key).is_some(), "{v} lacks {key}");
        }
    }
    assert_eq!(summary["variants"]["local-only"]["comm_rounds_mean"].as_f64(), Some(0.0));
    assert!(out.join("config.toml").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}seeds = [1, 2]\nvariants = [\"pfpne\", \"global-only\"]\n"));
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let o = Command::new(env!("CARGO_BIN_EXE_fedelim"))
            .args(["run", "--config", &cfg, "--out", out.to_str().unwrap()])
            .env("FEDELIM_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(out);
    }
    for f in ["regret.csv", "comm.csv", "summary.json", "config.toml"] {
        assert_eq!(fs::read(outputs[0].join(f)).unwrap(), fs::read(outputs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_config_names_the_path() {
    let o = fedelim(&["run", "--config", "/nonexistent/exp.toml", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/exp.toml"), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    assert_eq!(fedelim(&["run"]).status.code(), Some(1));
    assert_eq!(fedelim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fedelim(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "objective = \"garland\"\nwarmup = 3\n");
    let o = fedelim(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("warmup"));

    let o = fedelim(&["run", "--variant", "fed-ucb", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let bad_threads = Command::new(env!("CARGO_BIN_EXE_fedelim"))
        .args(["run", "--config", &write_config(dir.path(), SMALL), "--out", dir.path().to_str().unwrap()])
        .env("FEDELIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));

    let file = dir.path().join("occupied");
    fs::write(&file, "").unwrap();
    let o = fedelim(&[
        "run", "--config", &write_config(dir.path(), SMALL), "--runs", "1", "--out", file.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = fedelim(&[
        "run", "--config", &cfg, "--out", out.to_str().unwrap(), "--clients", "2", "--horizon", "100", "--runs", "2",
        "--objective", "doublesine",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let canon = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(canon.contains("objective = \"doublesine\""));
    assert!(canon.contains("clients = 2"));
    assert!(canon.contains("horizon = 100"));
    assert!(canon.contains("seeds = [0, 1]"));
}

#[test]
fn local_only_has_no_comm_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = fedelim(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--variant", "local-only", "--runs", "2"]);
    assert!(o.status.success());
    let comm = fs::read_to_string(out.join("comm.csv")).unwrap();
    assert_eq!(comm.lines().count(), 1);
}

#[test]
fn oracle_zero_shift_gives_unit_optima() {
    let o = fedelim(&["oracle", "--objective", "garland", "--clients", "3", "--shift-std", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let values: Vec<f64> = text
        .lines()
        .filter_map(|l| l.split("f* = ").nth(1))
        .map(|r| r.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 4);
    assert!(values.iter().all(|v| (v - 1.0).abs() < 1e-9), "{values:?}");
}

#[test]
fn profile_ladder_is_nonincreasing_and_starts_full() {
    let o = fedelim(&["profile", "--objective", "garland"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let counts: Vec<u64> = text.lines().skip(1).map(|l| l.split_whitespace().last().unwrap().parse().unwrap()).collect();
    assert_eq!(counts.len(), 7);
    assert_eq!(counts[0], 1);
    let at_step = |eps: &str| -> u64 {
        let o = fedelim(&["profile", "--objective", "garland", "--eps", eps, "--grid-step", "0.125"]);
        String::from_utf8(o.stdout).unwrap().lines().nth(1).unwrap().split_whitespace().last().unwrap().parse().unwrap()
    };
    let fixed: Vec<u64> = ["6", "0.75", "0.3", "0.1", "0.01"].iter().map(|e| at_step(e)).collect();
    assert_eq!(fixed[0], 8);
    assert!(fixed.windows(2).all(|w| w[1] <= w[0]), "{fixed:?}");
    assert_eq!(fedelim(&["profile", "--objective", "garland", "--eps", "0"]).status.code(), Some(1));
    assert_eq!(fedelim(&["profile", "--objective", "garland", "--eps=-1", "--grid-step", "0.1"]).status.code(), Some(2));
}

#[test]
fn transcript_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = fedelim(&["transcript", "--config", &cfg, "--runs", "1", "--pulls"]);
    let b = fedelim(&["transcript", "--config", &cfg, "--runs", "1", "--pulls"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("# variant=pfpne seed=0\nreport client=0 depth=0 nodes=1\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("pull ")).count(), 3 * 400);
}
