//! End-to-end checks of the command-line interface: every subcommand, the
//! config-file/flag override order, and the error paths' exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_streamformer"))
}

fn write_toy_inputs(dir: &Path) -> (String, String) {
    let vocab = dir.join("vocab.txt");
    std::fs::write(&vocab, "<blank>\n<sos/eos>\n<unk>\non\noff\nlights\ntv\n").unwrap();
    let feats = dir.join("utt1.feats");
    let mut body = String::from("96 8\n");
    let mut state = 0x12345u64;
    for _ in 0..96 {
        let mut row = Vec::new();
        for _ in 0..8 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let v = ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0;
            row.push(format!("{v:.6}"));
        }
        body.push_str(&row.join(" "));
        body.push('\n');
    }
    std::fs::write(&feats, body).unwrap();
    (
        vocab.to_string_lossy().into_owned(),
        feats.to_string_lossy().into_owned(),
    )
}

fn model_args() -> Vec<&'static str> {
    vec![
        "--d-model",
        "16",
        "--n-heads",
        "2",
        "--ff-dim",
        "32",
        "--enc-layers",
        "3",
        "--dec-layers",
        "2",
        "--intermediate-layer",
        "2",
        "--feature-dim",
        "8",
    ]
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn streamformer binary")
}

#[test]
fn run_stream_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, feats) = write_toy_inputs(dir.path());
    let run_once = |out: &str| {
        let out_dir = dir.path().join(out);
        let output = run(bin()
            .args(["run-stream", "--features", &feats, "--vocab", &vocab])
            .args(["--output-dir", out_dir.to_str().unwrap()])
            .args(["--chunk-ms", "320", "--seed", "7", "--block-size", "16"])
            .args(["--beam-size", "4", "--ctc-weight", "0.3"])
            .args(model_args()));
        assert!(
            output.status.success(),
            "{}",
            String::from_utf8_lossy(&output.stderr)
        );
        (
            std::fs::read(out_dir.join("utt1.hyp.txt")).unwrap(),
            std::fs::read(out_dir.join("utt1.emission.tsv")).unwrap(),
            std::fs::read(out_dir.join("utt1.report.tsv")).unwrap(),
            output.stdout,
        )
    };
    let a = run_once("a");
    let b = run_once("b");
    assert_eq!(a, b);
}

#[test]
fn streaming_runs_differ_only_by_scoring_weight() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, feats) = write_toy_inputs(dir.path());
    let with_mu = |mu: &str, out: &str| {
        let out_dir = dir.path().join(out);
        let output = run(bin()
            .args(["run-stream", "--features", &feats, "--vocab", &vocab])
            .args(["--output-dir", out_dir.to_str().unwrap()])
            .args(["--chunk-ms", "320", "--seed", "7", "--block-size", "16"])
            .args(["--beam-size", "4", "--ctc-weight", mu])
            .args(model_args()));
        assert!(
            output.status.success(),
            "{}",
            String::from_utf8_lossy(&output.stderr)
        );
        std::fs::read_to_string(out_dir.join("utt1.emission.tsv")).unwrap()
    };
    let log0 = with_mu("0.0", "mu0");
    let log3 = with_mu("0.3", "mu3");
    // Both logs parse and share the source bookkeeping even when scoring
    // changes the emitted tokens.
    let header = |s: &str| s.lines().next().unwrap().to_string();
    let total = |s: &str| {
        header(s)
            .split('\t')
            .nth(1)
            .unwrap()
            .parse::<u64>()
            .unwrap()
    };
    assert_eq!(total(&log0), total(&log3));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, feats) = write_toy_inputs(dir.path());
    let config = serde_json::json!({
        "features": feats,
        "vocab": vocab,
        "chunk_ms": 320,
        "seed": 3,
        "model": {
            "d_model": 16, "n_heads": 2, "ff_dim": 32, "enc_layers": 3,
            "dec_layers": 2, "intermediate_layer": 2, "feature_dim": 8,
            "subsample_factor": 4, "vocab_size": 0, "frame_ms": 10
        },
        "decode": { "beam_size": 4, "block_size": 16, "hop": 3, "look_ahead": 3 }
    });
    let config_path = dir.path().join("run.json");
    std::fs::write(&config_path, config.to_string()).unwrap();

    let base = run(bin().args(["run-stream", "--config", config_path.to_str().unwrap()]));
    assert!(
        base.status.success(),
        "{}",
        String::from_utf8_lossy(&base.stderr)
    );

    // Overriding the seed changes the model, hence (in general) the output.
    let other = run(bin()
        .args(["run-stream", "--config", config_path.to_str().unwrap()])
        .args(["--seed", "123"]));
    assert!(other.status.success());
    assert_ne!(base.stdout, other.stdout);
}

#[test]
fn missing_vocab_fails_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (_, feats) = write_toy_inputs(dir.path());
    let output = run(bin()
        .args([
            "run-stream",
            "--features",
            &feats,
            "--vocab",
            "/no/such/vocab.txt",
        ])
        .args(model_args()));
    assert!(!output.status.success());
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("/no/such/vocab.txt"), "stderr: {err}");
}

#[test]
fn eval_objective_and_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, feats) = write_toy_inputs(dir.path());
    let manifest = dir.path().join("manifest.tsv");
    std::fs::write(
        &manifest,
        format!("utt1\t{feats}\ton lights\ton lights\ton\n"),
    )
    .unwrap();

    let output = run(bin()
        .args(["eval-objective", "--manifest", manifest.to_str().unwrap()])
        .args([
            "--vocab", &vocab, "--seed", "7", "--task", "slu", "--lambda", "0",
        ])
        .args(model_args()));
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let text = String::from_utf8(output.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split('\t').collect();
    assert_eq!(cols[0], "utt1");
    // λ = 0 makes the total the CE column.
    assert_eq!(cols[1], cols[4]);

    // γ = 1 for ST leaves only the auxiliary CTC term.
    let output = run(bin()
        .args(["eval-objective", "--manifest", manifest.to_str().unwrap()])
        .args([
            "--vocab", &vocab, "--seed", "7", "--task", "st", "--gamma", "1",
        ])
        .args(model_args()));
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let text = String::from_utf8(output.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split('\t').collect();
    assert_eq!(cols[3], cols[4], "gamma=1 total must equal the aux column");

    let empty = dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let output = run(bin()
        .args(["eval-objective", "--manifest", empty.to_str().unwrap()])
        .args(["--vocab", &vocab, "--seed", "7", "--task", "st"])
        .args(model_args()));
    assert!(!output.status.success());
}

#[test]
fn eval_latency_reads_back_run_output() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, feats) = write_toy_inputs(dir.path());
    let out_dir = dir.path().join("out");
    let output = run(bin()
        .args(["run-stream", "--features", &feats, "--vocab", &vocab])
        .args(["--output-dir", out_dir.to_str().unwrap()])
        .args(["--chunk-ms", "320", "--seed", "7", "--block-size", "16"])
        .args(model_args()));
    assert!(output.status.success());
    let stream_stdout = String::from_utf8(output.stdout).unwrap();

    let log = out_dir.join("utt1.emission.tsv");
    let output = run(bin().args([
        "eval-latency",
        "--log",
        log.to_str().unwrap(),
        "--vocab",
        &vocab,
    ]));
    assert!(output.status.success());
    let latency_stdout = String::from_utf8(output.stdout).unwrap();
    // The recomputed AL matches the one the run reported.
    let find = |text: &str, key: &str| {
        text.lines()
            .find(|l| l.starts_with(key))
            .map(|l| l.to_string())
            .unwrap_or_else(|| panic!("no {key} in: {text}"))
    };
    assert_eq!(
        find(&stream_stdout, "al_ms"),
        find(&latency_stdout, "al_ms")
    );
    assert_eq!(
        find(&stream_stdout, "wait_events"),
        find(&latency_stdout, "wait_events")
    );
}

#[test]
fn eval_latency_warns_on_clamped_logs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("clamped.emission.tsv");
    std::fs::write(
        &log,
        "#source_total_ms\t1000\tlast_arrival_wall_ms\t1000\tcompletion_wall_ms\t900\twait_events\t0\n\
         1\ta\t0\t1000\t900\n",
    )
    .unwrap();
    let output = run(bin().args(["eval-latency", "--log", log.to_str().unwrap()]));
    assert!(output.status.success());
    let out = String::from_utf8(output.stdout).unwrap();
    assert!(out.contains("ep_ms\t0.000"), "stdout: {out}");
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("clamped"), "stderr: {err}");
}

#[test]
fn intent_eval_cli() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = dir.path().join("hyp.txt");
    let refs = dir.path().join("ref.txt");
    std::fs::write(&hyp, "on a\noff b\nup c\nplay d\n").unwrap();
    std::fs::write(&refs, "on x\noff y\nup z\nstop w\n").unwrap();
    let output = run(bin()
        .args(["intent-eval", "--hypotheses", hyp.to_str().unwrap()])
        .args(["--references", refs.to_str().unwrap()]));
    assert!(output.status.success());
    assert_eq!(
        String::from_utf8_lossy(&output.stdout).trim(),
        "intent_accuracy\t75.0"
    );
}

#[test]
fn weight_export_import_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (vocab, _) = write_toy_inputs(dir.path());
    let weights = dir.path().join("toy.bstw");
    let output = run(bin()
        .args(["export-weights", "--vocab", &vocab, "--seed", "11"])
        .args(["--output", weights.to_str().unwrap()])
        .args(model_args()));
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );

    let output = run(bin().args(["import-weights", "--weights", weights.to_str().unwrap()]));
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("d_model\t16"));
    assert!(text.contains("vocab_size\t7"));

    // A truncated file is rejected.
    let bytes = std::fs::read(&weights).unwrap();
    let clipped = dir.path().join("clipped.bstw");
    std::fs::write(&clipped, &bytes[..bytes.len() - 2]).unwrap();
    let output = run(bin().args(["import-weights", "--weights", clipped.to_str().unwrap()]));
    assert!(!output.status.success());
}
