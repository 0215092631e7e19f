use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use topk::dataset::{load_libsvm, write_libsvm, Dataset};
use topk::losses::LossFamily;
use topk::metrics::topk_accuracy;
use topk::model::Model;

fn topk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topk"))
        .args(args)
        .env("TOPK_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn letter_dir() -> PathBuf {
    std::env::var_os("TOPK_LETTER_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/letter"))
}

/// Small three-class problem written to `dir/toy.train`.
fn toy_file(dir: &Path) -> PathBuf {
    let features = vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0, 0.9, 0.1, 0.1, 0.8, -0.7, -0.9];
    let data = Dataset::new(features, vec![0, 1, 2, 0, 1, 2], 2, 3).unwrap();
    let path = dir.join("toy.train");
    write_libsvm(&path, &data).unwrap();
    path
}

#[test]
fn default_synth_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = topk(&["synth", "--outdir", p(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    for (name, n) in [("circle.train", 200), ("circle.val", 200), ("circle.test", 200_000)] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), n, "{name}");
    }
}

#[test]
fn train_on_letter_writes_model_with_letter_dims() {
    let train = letter_dir().join("letter.train");
    if !train.exists() {
        eprintln!("skipping: {} not found", train.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.bin");
    let out = topk(&["train", "--data", p(&train), "--loss", "svm_multi", "--c", "1", "--epochs", "5", "--out", p(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&model).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("topk-model v1"));
    let meta: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(&meta[..3], &["16", "26", "multi_hinge_topk_alpha"]);
    assert_eq!(lines.count(), 26);
    let summary = stdout(&out);
    assert!(summary.starts_with("P=") && summary.contains(" D=") && summary.contains(" gap=") && summary.contains(" epochs="));
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_file(dir.path());
    let out_path = dir.path().join("m.txt");
    let base = ["train", "--data", p(&data), "--out", p(&out_path)];
    let cases: [&[&str]; 6] = [
        &["--loss", "topk_ent", "--k", "0", "--c", "1"],
        &["--loss", "nonsense", "--c", "1"],
        &["--loss", "svm_multi", "--c", "0"],
        &["--loss", "svm_multi", "--c", "-1"],
        &["--loss", "svm_multi"],
        &["--loss", "svm_multi", "--c", "1", "--lambda", "1"],
    ];
    for extra in cases {
        let args: Vec<&str> = base.iter().copied().chain(extra.iter().copied()).collect();
        let out = topk(&args);
        assert_eq!(out.status.code(), Some(2), "{extra:?}: {}", stderr(&out));
        assert!(stdout(&out).is_empty());
    }
    // k larger than the data allows is only known after loading
    let args: Vec<&str> = base.iter().copied().chain(["--loss", "topk_ent", "--k", "3", "--c", "1"]).collect();
    assert_eq!(topk(&args).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = topk(&["train", "--data", "/nonexistent/file", "--loss", "svm_multi", "--c", "1", "--out", p(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/nonexistent/file"));

    // a model for 2 features cannot score 3-feature data
    let model = dir.path().join("m.txt");
    Model::zeros(2, 3, LossFamily::TopkHingeAlpha, 1, 0.0, 1.0).save(&model).unwrap();
    let wide = dir.path().join("wide");
    write_libsvm(&wide, &Dataset::new(vec![1.0, 2.0, 3.0, 0.0, 1.0, 0.0], vec![0, 1], 3, 2).unwrap()).unwrap();
    let out = topk(&["eval", "--model", p(&model), "--data", p(&wide)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_file(dir.path());
    for loss in ["topk_svm_a_smooth", "lr_ova", "topk_ent_trunc"] {
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        for out in [&a, &b] {
            let o = topk(&["train", "--data", p(&data), "--loss", loss, "--k", "2", "--c", "4", "--seed", "3", "--out", p(out)]);
            assert!(o.status.success(), "{loss}: {}", stderr(&o));
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{loss}");
    }
}

#[test]
fn eval_perfect_model_and_kmax_clipping() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_file(dir.path());
    // scores: class 0 likes x1, class 1 likes x2, class 2 likes -x1-x2
    let w = vec![1.0, 0.0, -1.0, 0.0, 1.0, -1.0];
    let model = Model::from_weights(2, 3, w, LossFamily::TopkHingeAlpha, 1, 0.0, 0.5).unwrap();
    let path = dir.path().join("m.txt");
    model.save(&path).unwrap();
    let out = topk(&["eval", "--model", p(&path), "--data", p(&data), "--kmax", "7"]);
    assert!(out.status.success());
    assert_eq!(
        stdout(&out),
        "method,C,lambda,k_target,top1,top2,top3\nmulti_hinge_topk_alpha,nan,0.5,1,100.00,100.00,100.00\n"
    );
    assert!(stderr(&out).contains("kmax"));
}

#[test]
fn saved_model_evaluates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = toy_file(dir.path());
    let model_path = dir.path().join("m.txt");
    let out = topk(&["train", "--data", p(&data_path), "--loss", "topk_ent", "--k", "2", "--c", "10", "--out", p(&model_path)]);
    assert!(out.status.success());
    let data = load_libsvm(&data_path).unwrap();
    let loaded = Model::load(&model_path).unwrap();
    let resaved = dir.path().join("again.txt");
    loaded.save(&resaved).unwrap();
    assert_eq!(std::fs::read(&model_path).unwrap(), std::fs::read(&resaved).unwrap());
    let reloaded = Model::load(&resaved).unwrap();
    assert_eq!(topk_accuracy(&loaded, &data, 3).unwrap(), topk_accuracy(&reloaded, &data, 3).unwrap());
}

#[test]
fn cv_singleton_and_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy_file(dir.path());
    let out = topk(&["cv", "--train", p(&data), "--val", p(&data), "--loss", "svm_multi", "--grid-lo", "2", "--grid-hi", "2", "--kmax", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,C,lambda,k_target,top1,top2");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("svm_multi,4,"));
    assert!(!stderr(&out).contains("edge of the grid"));

    let out = topk(&["cv", "--train", p(&data), "--val", p(&data), "--loss", "svm_multi", "--grid-lo", "-3", "--grid-hi", "3"]);
    assert!(out.status.success());
    // every C separates this toy problem, so the smallest one wins and sits on the edge
    assert!(stdout(&out).lines().last().unwrap().starts_with("svm_multi,0.125,"));
    assert!(stderr(&out).contains("edge of the grid"));
}
