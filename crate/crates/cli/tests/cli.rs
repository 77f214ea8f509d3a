use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use histosynth::trainer::load_checkpoint;

fn synth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synth"))
        .arg("--quiet")
        .args(args)
        .output()
        .expect("run synth")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn phantom_dir(root: &Path) -> PathBuf {
    let dir = root.join("real");
    let o = synth(&[
        "phantom",
        "--out",
        p(&dir),
        "--styles",
        "2",
        "--per-style",
        "3",
        "--size",
        "48",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn params_file(root: &Path, body: &str) -> PathBuf {
    let path = root.join("params.toml");
    std::fs::write(&path, body).unwrap();
    path
}

/// Every file under `dir`, relative path to bytes.
fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn generate(
    real: &Path,
    params: &Path,
    out: &Path,
    count: &str,
    seed: &str,
    workers: &str,
) -> Output {
    synth(&[
        "generate",
        "--params",
        p(params),
        "--real-dir",
        p(real),
        "--out",
        p(out),
        "--count",
        count,
        "--seed",
        seed,
        "--workers",
        workers,
    ])
}

#[test]
fn count_zero_writes_an_empty_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let real = phantom_dir(tmp.path());
    let params = params_file(tmp.path(), "patch_size = 24\n");
    let out = tmp.path().join("out");
    let o = generate(&real, &params, &out, "0", "1", "1");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read_to_string(out.join("manifest.jsonl")).unwrap(),
        ""
    );
}

#[test]
fn generation_is_seed_determined_and_worker_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let real = phantom_dir(tmp.path());
    let params = params_file(tmp.path(), "patch_size = 24\ncellularity = 25.0\n");
    let runs = [("a", "1"), ("b", "1"), ("c", "8")];
    for (name, workers) in runs {
        let o = generate(&real, &params, &tmp.path().join(name), "12", "40", workers);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = tree(&tmp.path().join("a"));
    assert_eq!(
        a.iter().filter(|(f, _)| f.starts_with("images")).count(),
        12
    );
    assert_eq!(a, tree(&tmp.path().join("b")));
    assert_eq!(a, tree(&tmp.path().join("c")));
    let manifest = String::from_utf8(
        a.iter()
            .find(|(f, _)| f == Path::new("manifest.jsonl"))
            .unwrap()
            .1
            .clone(),
    )
    .unwrap();
    assert_eq!(manifest.lines().count(), 12);

    let o = generate(&real, &params, &tmp.path().join("d"), "12", "41", "1");
    assert!(o.status.success());
    assert_ne!(a, tree(&tmp.path().join("d")));
}

#[test]
fn bad_generate_inputs_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let real = phantom_dir(tmp.path());
    let bad = params_file(tmp.path(), "cellularity = -3.0\n");
    let o = generate(&real, &bad, &tmp.path().join("o1"), "2", "0", "1");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cellularity"), "{}", stderr(&o));

    let good = params_file(tmp.path(), "patch_size = 24\n");
    let o = generate(
        &tmp.path().join("missing"),
        &good,
        &tmp.path().join("o2"),
        "2",
        "0",
        "1",
    );
    assert_eq!(o.status.code(), Some(2));
    let o = generate(&real, &good, &tmp.path().join("o3"), "2", "0", "0");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_samples_give_exit_one_with_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let real = phantom_dir(tmp.path());
    // larger than the 48 px sources
    let params = params_file(tmp.path(), "patch_size = 64\n");
    let o = generate(&real, &params, &tmp.path().join("out"), "3", "0", "1");
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("3 of 3 samples failed"),
        "{}",
        stderr(&o)
    );
}

const SMALL_MODELS: &str = r#"
[models.refiner]
width = 4
wide = 6
[models.discriminator]
width = 4
wide = 6
[models.task]
width = 4
wide = 6
"#;

fn write_config(root: &Path, name: &str, schedule: &str, extra: &str) -> PathBuf {
    let path = root.join(name);
    std::fs::write(
        &path,
        format!("version = 1\nseed = 3\nsamples = 6\n{extra}\n[synthesis]\npatch_size = 24\n\n[schedule]\n{schedule}\n{SMALL_MODELS}"),
    )
    .unwrap();
    path
}

const ZERO: &str =
    "pretrain_g = 0\npretrain_d = 0\npretrain_r = 0\ngd_rounds = 0\ngdr_rounds = 0\n";
const SMALL: &str = "pretrain_g = 2\npretrain_d = 2\ngd_rounds = 1\npretrain_r = 2\ngdr_rounds = 1\nbatch_size = 2\nlr_g = 1e-3\nlr_d = 1e-3\nlr_r = 1e-3\n";

#[test]
fn zero_schedule_completes_immediately() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "zero.toml", ZERO, "");
    let out = tmp.path().join("run");
    let o = synth(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let st = load_checkpoint(&out.join("final.ckpt")).unwrap();
    assert_eq!(st.cursor, 0);
    assert!(st.is_done());
    assert_eq!(
        std::fs::read_to_string(out.join("metrics.csv")).unwrap(),
        "step,stage,network,loss\n"
    );
}

#[test]
fn invalid_config_exits_two_with_field_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "batch_size = 0\nlr_g = -1.0\n", "");
    let o = synth(&[
        "train",
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("batch_size") && err.contains("lr_g"), "{err}");

    let unknown = tmp.path().join("unknown.toml");
    std::fs::write(&unknown, "version = 1\nbogus = true\n").unwrap();
    let o = synth(&[
        "train",
        "--config",
        p(&unknown),
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = synth(&[
        "train",
        "--config",
        p(&tmp.path().join("nope.toml")),
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = synth(&["train"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_checkpoints_and_resume_matches_a_straight_run() {
    let tmp = tempfile::tempdir().unwrap();
    let real = phantom_dir(tmp.path());
    let cfg = write_config(
        tmp.path(),
        "small.toml",
        SMALL,
        &format!(
            "checkpoint_every = 4\n[data]\nreal_dir = \"{}\"\n",
            real.file_name().unwrap().to_str().unwrap()
        ),
    );
    let full = tmp.path().join("full");
    let o = synth(&["train", "--config", p(&cfg), "--out", p(&full)]);
    assert!(o.status.success(), "{}", stderr(&o));
    // default inner steps: 2 G, 1 D, 1 R per round
    let total = 2 + 2 + (2 + 1) + 2 + (2 + 1 + 1);
    let metrics = std::fs::read_to_string(full.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + total);
    let mid = full.join("checkpoints/step_0000004.ckpt");
    assert!(mid.is_file());
    assert!(full.join("checkpoints/step_0000008.ckpt").is_file());

    let resumed = tmp.path().join("resumed");
    let o = synth(&[
        "train",
        "--config",
        p(&cfg),
        "--out",
        p(&resumed),
        "--resume",
        p(&mid),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = load_checkpoint(&full.join("final.ckpt")).unwrap();
    let b = load_checkpoint(&resumed.join("final.ckpt")).unwrap();
    assert_eq!(a.cursor, total);
    assert_eq!(a.refiner.params, b.refiner.params);
    assert_eq!(a.disc.params, b.disc.params);
    assert_eq!(a.task.params, b.task.params);
    assert_eq!(a.history, b.history);

    // a checkpoint from a different config is refused
    let other = write_config(tmp.path(), "other.toml", ZERO, "");
    let o = synth(&[
        "train",
        "--config",
        p(&other),
        "--out",
        p(&tmp.path().join("x")),
        "--resume",
        p(&mid),
    ]);
    assert_eq!(o.status.code(), Some(2));

    // evaluating the trained task network gives one row per image
    let params = params_file(tmp.path(), "patch_size = 24\n");
    let corpus = tmp.path().join("corpus");
    assert!(generate(&real, &params, &corpus, "5", "900", "2")
        .status
        .success());
    let report = tmp.path().join("trained.csv");
    let o = synth(&[
        "eval",
        "--checkpoint",
        p(&full.join("final.ckpt")),
        "--corpus",
        p(&corpus),
        "--report",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 6);
}

#[test]
fn ground_truth_replay_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let real = phantom_dir(tmp.path());
    let params = params_file(tmp.path(), "patch_size = 24\n");
    let corpus = tmp.path().join("corpus");
    assert!(generate(&real, &params, &corpus, "7", "0", "1")
        .status
        .success());
    let report = tmp.path().join("report.csv");
    let o = synth(&[
        "eval",
        "--replay-ground-truth",
        "--corpus",
        p(&corpus),
        "--report",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(&report).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 7);
    for r in &rows {
        assert_eq!(r[3].parse::<f64>().unwrap(), 1.0);
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("average 1.0000"));

    // exactly one model source is required
    let o = synth(&["eval", "--corpus", p(&corpus), "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_on_occupied_port_fails_cleanly() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = synth(&["serve", "--port", &port, "--workers", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(
        err.contains("cannot listen") && err.contains(&port),
        "{err}"
    );
    assert!(!err.contains("panicked"), "{err}");
}
