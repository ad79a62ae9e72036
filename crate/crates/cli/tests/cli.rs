use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use ulmfit::checkpoint::Checkpoint;
use ulmfit::textpipe::{load_corpus_lines, preprocess, split_indices, NumericalizedCorpus, SplitTag};
use ulmfit::train::evaluate_lm;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn ulmfit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ulmfit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {stdout}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

const PRETRAIN_CONFIG: &str = "# smoke run\nepochs=2\nbptt_len=10\nbatch_size=8\nseed=1\n";

/// Pretrained, LM-fine-tuned and classifier checkpoints shared by the tests.
struct Pipeline {
    dir: PathBuf,
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let labeled = std::fs::read_to_string(fixture("labeled.csv")).unwrap();
        let lines: Vec<&str> = labeled.lines().collect();
        let train = [&lines[..1], &lines[1..41]].concat().join("\n") + "\n";
        let test = [&lines[..1], &lines[41..]].concat().join("\n") + "\n";
        std::fs::write(dir.join("train.csv"), train).unwrap();
        std::fs::write(dir.join("test.csv"), test).unwrap();
        std::fs::write(dir.join("pretrain.cfg"), PRETRAIN_CONFIG).unwrap();
        let corpus = fixture("lm_corpus.txt");
        ok(&ulmfit(
            &["pretrain", "--corpus", corpus.to_str().unwrap(), "--preset", "tiny", "--config", "pretrain.cfg", "--seed", "5", "--out", "lm.ckpt"],
            &dir,
        ));
        ok(&ulmfit(
            &["finetune-lm", "--checkpoint", "lm.ckpt", "--dataset", "train.csv", "--set", "batch_size=8", "--out", "ft.ckpt"],
            &dir,
        ));
        ok(&ulmfit(
            &["finetune-clf", "--checkpoint", "ft.ckpt", "--dataset", "train.csv", "--valid", "test.csv", "--set", "batch_size=8", "--out", "clf.ckpt"],
            &dir,
        ));
        Pipeline { dir }
    })
}

#[test]
fn missing_input_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = ulmfit(&["pretrain", "--corpus", "no/such/corpus.txt", "--out", "x.ckpt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/corpus.txt"));
    assert!(!dir.path().join("x.ckpt").exists());
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ulmfit(&["eval", "--nonsense"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("lm_corpus.txt");
    let out = ulmfit(&["pretrain", "--corpus", corpus.to_str().unwrap(), "--set", "colour=blue", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn pretrain_checkpoint_reproduces_valid_loss() {
    let p = pipeline();
    let ckpt = Checkpoint::<f32>::load(&p.dir.join("lm.ckpt")).unwrap();
    assert_eq!(ckpt.seed, 5, "flag must win over the config file");
    assert_eq!(ckpt.config_value("seed"), Some("5"));
    assert_eq!(ckpt.phases, vec!["pretrain".to_string()]);
    let recorded = ckpt.recorded_valid_loss.unwrap();

    let lines = load_corpus_lines(&fixture("lm_corpus.txt")).unwrap();
    let streams: Vec<Vec<u32>> = lines.iter().map(|l| ckpt.vocab.numericalize(&preprocess(l))).collect();
    let parts = split_indices(streams.len(), &[0.9, 0.1], 5).unwrap();
    let valid = NumericalizedCorpus::unlabeled(parts[1].iter().map(|&i| streams[i].clone()).collect(), SplitTag::Valid);
    let ev = evaluate_lm(ckpt.lm().unwrap(), &valid, 8, 10).unwrap();
    assert!((ev.loss - recorded).abs() < 1e-9, "{} vs {recorded}", ev.loss);

    let log = std::fs::read_to_string(p.dir.join("lm.ckpt.metrics.csv")).unwrap();
    assert!(log.starts_with("# seed=5\n"));
    assert!(log.contains("\nphase,stage,epoch,train_loss,valid_loss,valid_accuracy\n"));
    assert_eq!(log.lines().filter(|l| l.starts_with("pretrain,")).count(), 2);
}

#[test]
fn pretrain_is_byte_reproducible() {
    let p = pipeline();
    let corpus = fixture("lm_corpus.txt");
    let args = |out: &'static str| {
        vec![
            "pretrain".to_string(),
            "--corpus".into(),
            corpus.to_str().unwrap().into(),
            "--preset".into(),
            "tiny".into(),
            "--config".into(),
            "pretrain.cfg".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            out.into(),
        ]
    };
    let run = |out: &'static str| {
        let a = args(out);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        ok(&ulmfit(&refs, &p.dir));
    };
    run("again.ckpt");
    let a = std::fs::read(p.dir.join("lm.ckpt")).unwrap();
    let b = std::fs::read(p.dir.join("again.ckpt")).unwrap();
    assert!(a == b, "checkpoints differ");
    let la = std::fs::read_to_string(p.dir.join("lm.ckpt.metrics.csv")).unwrap();
    let lb = std::fs::read_to_string(p.dir.join("again.ckpt.metrics.csv")).unwrap();
    assert_eq!(la, lb);
}

#[test]
fn phases_accumulate_through_pipeline() {
    let p = pipeline();
    let clf = Checkpoint::<f32>::load(&p.dir.join("clf.ckpt")).unwrap();
    assert_eq!(clf.phases, vec!["pretrain", "lm-finetune", "clf-finetune"]);
    assert!(clf.classifier().is_ok());
    assert_eq!(clf.config_value("command"), Some("finetune-clf"));
    assert!(clf.recorded_valid_loss.is_some());
}

#[test]
fn eval_prints_metrics_line() {
    let p = pipeline();
    let out = ok(&ulmfit(&["eval", "--checkpoint", "clf.ckpt", "--dataset", "test.csv"], &p.dir));
    let line = out.trim();
    let parts: Vec<&str> = line.split(", ").collect();
    assert_eq!(parts.len(), 3, "{line}");
    assert!(parts[0].starts_with("accuracy="));
    assert!(parts[1].starts_with("loss="));
    assert_eq!(parts[2], "n=20");
    let acc: f64 = parts[0]["accuracy=".len()..].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn predict_prints_label_and_probability() {
    let p = pipeline();
    let out = ok(&ulmfit(
        &["predict", "--checkpoint", "clf.ckpt", "Ayoko kay Roxas , tanga siya", "Salamat Poe , sobrang mabait"],
        &p.dir,
    ));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    for l in lines {
        let (label, prob) = l.split_once(", probability=").unwrap();
        assert!(label == "label=0 (not hate)" || label == "label=1 (hate)", "{l}");
        let prob: f64 = prob.parse().unwrap();
        assert!((0.5..=1.0).contains(&prob));
    }
}

#[test]
fn preset_mismatch_fails_with_exit_1() {
    let p = pipeline();
    let out = ulmfit(&["eval", "--checkpoint", "clf.ckpt", "--dataset", "test.csv", "--preset", "full"], &p.dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("preset"));
}

#[test]
fn wrong_checkpoint_kind_fails_with_exit_1() {
    let p = pipeline();
    let out = ulmfit(&["eval", "--checkpoint", "lm.ckpt", "--dataset", "test.csv"], &p.dir);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_rejected() {
    let p = pipeline();
    let mut bytes = std::fs::read(p.dir.join("clf.ckpt")).unwrap();
    let n = bytes.len();
    bytes.truncate(n / 2);
    std::fs::write(p.dir.join("broken.ckpt"), bytes).unwrap();
    let out = ulmfit(&["eval", "--checkpoint", "broken.ckpt", "--dataset", "test.csv"], &p.dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn top_losses_ranked_descending() {
    let p = pipeline();
    let out = ok(&ulmfit(
        &["top-losses", "--checkpoint", "clf.ckpt", "--dataset", "test.csv", "--set", "k=5", "--out", "top.csv"],
        &p.dir,
    ));
    let losses: Vec<f64> = out
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().trim_start_matches("loss=").parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[0] >= w[1]));
    let csv = std::fs::read_to_string(p.dir.join("top.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("rank,loss,target,predicted,probability,text\n"));
}

#[test]
fn degrade_emits_three_rows() {
    let p = pipeline();
    let args = [
        "degrade", "--checkpoint", "lm.ckpt", "--train", "train.csv", "--test", "test.csv", "--set", "fractions=1.0,0.5,0.1",
        "--set", "repeats=5", "--set", "lm_finetune=false", "--set", "batch_size=16", "--seed", "3", "--out", "report.csv",
    ];
    ok(&ulmfit(&args, &p.dir));
    let csv = std::fs::read_to_string(p.dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("# base_seed=3\n"));
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert!(rows[0].starts_with("1,40,5,"));
    assert!(rows[0].ends_with(",0.0000"));
    assert!(rows[1].starts_with("0.5,20,5,"));
    assert!(rows[2].starts_with("0.1,4,5,"));
    ok(&ulmfit(&args.map(|a| if a == "report.csv" { "report2.csv" } else { a }), &p.dir));
    assert_eq!(csv, std::fs::read_to_string(p.dir.join("report2.csv")).unwrap());
}

#[test]
fn inputs_are_not_mutated() {
    let p = pipeline();
    let before = std::fs::read(p.dir.join("ft.ckpt")).unwrap();
    ok(&ulmfit(
        &["finetune-clf", "--checkpoint", "ft.ckpt", "--dataset", "train.csv", "--set", "batch_size=8", "--out", "clf2.ckpt"],
        &p.dir,
    ));
    assert_eq!(before, std::fs::read(p.dir.join("ft.ckpt")).unwrap());
}
