use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ser_core::cli::{dispatch, RunConfig};
use ser_core::dsp::read_spectrogram;
use ser_core::eval::ParsedReport;
use ser_core::kv::KeyValues;

const TINY: &str = "\
# small enough for a test run
mel_bands = 16
conv_stack = 4x3x3s2
rnn_width = 4
feature_dim = 4
max_epochs = 2
batch_size = 8
learning_rate = 0.003
synth_min_duration = 0.35
synth_max_duration = 0.45
synth_noise = 1.0
";

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("ser").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    corpus: PathBuf,
}

fn workspace(count: usize) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.cfg");
    fs::write(&config, TINY).unwrap();
    let corpus = root.join("corpus");
    let code = run(&[
        "synth-data",
        "--config",
        s(&config),
        "--seed",
        "3",
        "--count",
        &count.to_string(),
        "--out",
        s(&corpus),
    ]);
    assert_eq!(code, 0);
    Workspace {
        _dir: dir,
        root,
        config,
        corpus,
    }
}

#[test]
fn binary_without_arguments_prints_usage() {
    let out = Command::new(env!("CARGO_BIN_EXE_ser")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]), 1);
    assert_eq!(run(&["dance"]), 1);
    assert_eq!(run(&["train"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        run(&["synth-data", "--frontend", "wavelet", "--out", s(&out)]),
        1
    );
    assert_eq!(run(&["synth-data", "--alpha", "2", "--out", s(&out)]), 1);
    assert_eq!(
        run(&[
            "synth-data",
            "--config",
            "/nonexistent.cfg",
            "--out",
            s(&out)
        ]),
        1
    );
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(
        run(&["synth-data", "--config", s(&cfg), "--out", s(&out)]),
        1
    );
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        run(&[
            "train",
            "--manifest",
            "/nonexistent/manifest.csv",
            "--out",
            s(&out)
        ]),
        2
    );
    let manifest = dir.path().join("m.csv");
    fs::write(&manifest, "path,label,subset\nx.wav,bored,train\n").unwrap();
    assert_eq!(
        run(&["extract-spec", "--manifest", s(&manifest), "--out", s(&out)]),
        2
    );
}

#[test]
fn flags_override_file_which_overrides_defaults() {
    let file = KeyValues::parse("seed = 3\nlambda = 0.7\nmel_bands = 40").unwrap();
    let mut flags = KeyValues::default();
    flags.set("seed", "9");
    let cfg = RunConfig::from_kv(&file.overlay(&flags), "o".into()).unwrap();
    assert_eq!(cfg.train.seed, 9);
    assert_eq!(cfg.train.lambda, 0.7);
    assert_eq!(cfg.train.alpha, 0.5);
    assert_eq!(cfg.dsp.mel_bands, 40);
    assert_eq!(cfg.encoder.input_bins, 40);
    let stft =
        RunConfig::from_kv(&KeyValues::parse("frontend = stft").unwrap(), "o".into()).unwrap();
    assert_eq!(stft.encoder.input_bins, 513);
}

#[test]
fn synth_extract_train_eval_embed() {
    let ws = workspace(60);
    let manifest = ws.corpus.join("manifest.csv");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.starts_with("path,label,subset\n"));
    assert_eq!(text.lines().count(), 61);

    let specs = ws.root.join("specs");
    assert_eq!(
        run(&[
            "extract-spec",
            "--config",
            s(&ws.config),
            "--frontend",
            "stft",
            "--manifest",
            s(&manifest),
            "--out",
            s(&specs)
        ]),
        0
    );
    let spec = read_spectrogram(fs::File::open(specs.join("clip_00000.spgm")).unwrap()).unwrap();
    assert_eq!(spec.n_bins(), 513);

    let model = ws.root.join("model");
    assert_eq!(
        run(&[
            "train",
            "--config",
            s(&ws.config),
            "--manifest",
            s(&manifest),
            "--out",
            s(&model)
        ]),
        0
    );
    let ckpt = model.join("model.ckpt");
    assert!(ckpt.exists());
    assert_eq!(
        fs::read_to_string(model.join("history.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );

    let eval = ws.root.join("eval");
    assert_eq!(
        run(&[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--manifest",
            s(&manifest),
            "--out",
            s(&eval)
        ]),
        0
    );
    let report =
        ParsedReport::parse(&fs::read_to_string(eval.join("report.txt")).unwrap()).unwrap();
    for key in ["ua", "wa"] {
        let v = report.get_f64(key).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    assert_eq!(report.confusion.len(), 4);

    let emb = ws.root.join("emb");
    assert_eq!(
        run(&[
            "embed",
            "--checkpoint",
            s(&ckpt),
            "--manifest",
            s(&manifest),
            "--out",
            s(&emb)
        ]),
        0
    );
    let tsv = fs::read_to_string(emb.join("embedding.tsv")).unwrap();
    let test_rows = text.lines().filter(|l| l.ends_with(",test")).count();
    assert_eq!(tsv.lines().count(), test_rows + 1);
    assert!(tsv.lines().skip(1).all(|l| l.split('\t').count() == 3));

    assert_eq!(
        run(&[
            "eval",
            "--checkpoint",
            s(&ws.root.join("none.ckpt")),
            "--manifest",
            s(&manifest),
            "--out",
            s(&eval)
        ]),
        2
    );
}

#[test]
fn sweep_writes_one_record_per_cell() {
    let ws = workspace(60);
    let manifest = ws.corpus.join("manifest.csv");
    let out = ws.root.join("sweep");
    let code = run(&[
        "sweep",
        "--config",
        s(&ws.config),
        "--manifest",
        s(&manifest),
        "--lambdas",
        "0,0.3",
        "--alphas",
        "0.1,0.9",
        "--max-epochs-hint",
    ]);
    assert_eq!(code, 1);
    let code = run(&[
        "sweep",
        "--config",
        s(&ws.config),
        "--manifest",
        s(&manifest),
        "--lambdas",
        "0,0.3",
        "--alphas",
        "0.1,0.9",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let lines: Vec<serde_json::Value> = fs::read_to_string(out.join("sweep.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let cells: Vec<(f64, f64)> = lines
        .iter()
        .map(|v| (v["lambda"].as_f64().unwrap(), v["alpha"].as_f64().unwrap()))
        .collect();
    assert_eq!(cells, vec![(0.0, 0.1), (0.0, 0.9), (0.3, 0.1), (0.3, 0.9)]);
    assert_eq!(fs::read_dir(out.join("sweep")).unwrap().count(), 4);
}

#[test]
fn cv_is_byte_reproducible() {
    let ws = workspace(60);
    let manifest = ws.corpus.join("manifest.csv");
    let cfg = ws.root.join("cv.cfg");
    fs::write(&cfg, format!("{TINY}max_epochs = 1\n")).unwrap();
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = ws.root.join(format!("cv{k}"));
        let code = run(&[
            "cv",
            "--config",
            s(&cfg),
            "--seed",
            "5",
            "--repeats",
            "1",
            "--manifest",
            s(&manifest),
            "--out",
            s(&out),
        ]);
        assert_eq!(code, 0);
        reports.push(fs::read(out.join("cv_report.txt")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let parsed = ParsedReport::parse(std::str::from_utf8(&reports[0]).unwrap()).unwrap();
    assert_eq!(parsed.get("folds"), Some("5"));
    assert_eq!(parsed.confusion.len(), 4);
    for row in &parsed.confusion {
        assert_eq!(row.len(), 4);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn diverging_training_exits_three() {
    let ws = workspace(60);
    let cfg = ws.root.join("hot.cfg");
    fs::write(&cfg, format!("{TINY}learning_rate = 1e300\n")).unwrap();
    let code = run(&[
        "train",
        "--config",
        s(&cfg),
        "--manifest",
        s(&ws.corpus.join("manifest.csv")),
        "--out",
        s(&ws.root.join("m")),
    ]);
    assert_eq!(code, 3);
}
