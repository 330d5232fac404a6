use std::path::Path;
use std::process::Command;

use mobigg::experiments::ResultTable;

fn mobigg(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mobigg"))
        .args(args)
        .env_remove("MOBIGG_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn sausage_run_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", "d = 1\nr = 0.5\nt = 1\ndt = 0.0001\npaths = 4000\n");
    let out = dir.path().join("s.csv");
    let o = mobigg(&["sausage", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = ResultTable::read_csv(&out).unwrap();
    let v = t.numeric("volume_mean").unwrap()[0];
    let se = t.numeric("volume_se").unwrap()[0];
    assert!((v - 2.5958).abs() < 4.0 * se + 0.02, "{v} ± {se}");
    assert_eq!(t.metadata["spec"]["params"]["paths"], "4000");
    assert_eq!(t.metadata["incomplete"], false);
}

#[test]
fn empty_model_never_detects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.cfg", "lambda = 0\ntrials = 20\n");
    let out = dir.path().join("d.csv");
    let o = mobigg(&["detect", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let t = ResultTable::read_csv(&out).unwrap();
    assert_eq!(t.rows.len(), 20);
    let j = t.column("detected").unwrap();
    assert!(t.rows.iter().all(|r| r[j] == "false"));
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.cfg", "lambda = 3\nside = 8\nhorizon = 5\ntrials = 40\n");
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = mobigg(&["perc", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv", "1"), run("b.csv", "3"));
}

#[test]
fn threads_default_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.cfg", "trials = 5\n");
    let out = dir.path().join("d.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_mobigg"))
        .args(["detect", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()])
        .env("MOBIGG_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
    let t = ResultTable::read_csv(&out).unwrap();
    assert_eq!(t.metadata["threads"], 2);
}

#[test]
fn validation_failures_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    for (kind, text) in [
        ("detect", "lambda = -1\n"),
        ("detect", "lamda = 1\n"),
        ("cover", "set = torus\n"),
        ("broadcast", "lambda = 1\nlambda_c = 1.4\n"),
        ("couple", "eps = 1.5\n"),
    ] {
        let cfg = write(dir.path(), "bad.cfg", text);
        let o = mobigg(&[kind, "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{kind}: {text}");
        assert!(!out.exists());
    }
    let o = mobigg(&["detect", "--config", "/nonexistent.cfg", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn aggregate_subcommand_pools_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "d.cfg", "trials = 30\n");
    let mut inputs = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(format!("d{seed}.csv"));
        assert!(mobigg(&["detect", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]).status.success());
        inputs.push(out.display().to_string());
    }
    let summary = dir.path().join("sum.csv");
    let mut args = vec!["aggregate", "--out", summary.to_str().unwrap()];
    args.extend(inputs.iter().map(String::as_str));
    assert!(mobigg(&args).status.success());
    let t = ResultTable::read_csv(&summary).unwrap();
    let row = t.rows.iter().find(|r| r[0] == "trial").unwrap();
    assert_eq!(row[1], "60");

    let other = write(dir.path(), "other.csv", "a,b\n1,2\n");
    let o = mobigg(&["aggregate", "--out", summary.to_str().unwrap(), &inputs[0], &other]);
    assert_eq!(o.status.code(), Some(2));
}
