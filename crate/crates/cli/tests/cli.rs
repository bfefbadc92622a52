//! End-to-end runs of the `sgmi` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgmi::model::Model;
use sgmi::tudataset::load_tudataset;

fn sgmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgmi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn mutag() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/MUTAG")
}

/// Writes a synthetic dataset to `dir/SYNTH` and returns that directory.
fn synth(dir: &Path, seed: u64, graphs: usize, classes: usize) -> PathBuf {
    let out = dir.join("SYNTH");
    let o = sgmi(&[
        "synth",
        "--seed",
        &seed.to_string(),
        "--graphs",
        &graphs.to_string(),
        "--classes",
        &classes.to_string(),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn small_config(dir: &Path, data: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "[data]\ndir = {:?}\nname = {name:?}\n[encoder]\nhidden = 16\nlayers = 2\n[train]\nepochs = 2\nbatch_size = 16\neval_every = 1\n[eval]\nrepetitions = 3\n{extra}",
        s(data)
    );
    fs::write(&path, text).unwrap();
    path
}

fn train(config: &Path, out: &Path) -> Output {
    sgmi(&["train", "--config", s(config), "--out", s(out)])
}

fn accuracy_line(o: &Output) -> (f64, f64) {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout.clone()).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1, "{stdout}");
    let fields: Vec<&str> = lines[0].split(' ').collect();
    assert_eq!(fields.len(), 3);
    assert_eq!(fields[0], "accuracy");
    (fields[1].parse().unwrap(), fields[2].parse().unwrap())
}

#[test]
fn missing_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(&dir.path().join("absent.toml"), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.toml"));
}

#[test]
fn invalid_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 0, 20, 2);
    let config = small_config(dir.path(), &data, "SYNTH", "[objective]\nlambda = -1.0\n");
    let out = dir.path().join("out");
    assert_eq!(train(&config, &out).status.code(), Some(2));
    assert!(!out.exists());

    fs::write(&config, "[train]\nepochz = 3\n").unwrap();
    assert_eq!(train(&config, &out).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn training_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1, 40, 2);
    let config = small_config(dir.path(), &data, "SYNTH", "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&config, out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let stdout = String::from_utf8(o.stdout).unwrap();
        assert!(stdout.starts_with("best_epoch "), "{stdout}");
    }
    for file in ["checkpoint.bin", "best.bin", "metrics.csv", "config.toml", "evals.csv"] {
        assert!(a.join(file).is_file(), "{file}");
    }
    let metrics = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read(b.join("metrics.csv")).unwrap());
    let text = String::from_utf8(metrics).unwrap();
    assert!(text.starts_with("step,total,pos,head_neg,tail_neg\n"));
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 5);
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
}

#[test]
fn feature_width_mismatch_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 20, 2);
    let config = small_config(dir.path(), &data, "SYNTH", "");
    let out = dir.path().join("out");
    assert!(train(&config, &out).status.success());
    let o = sgmi(&["eval", "--checkpoint", s(&out.join("best.bin")), "--data", s(&mutag())]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn corrupt_checkpoint_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    fs::write(&bad, b"SGMI\x01").unwrap();
    let o = sgmi(&["eval", "--checkpoint", s(&bad), "--data", s(&mutag())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mutag_checkpoint_evaluates_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), &mutag(), "MUTAG", "");
    let out = dir.path().join("out");
    let o = train(&config, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = out.join("best.bin");

    let direct = accuracy_line(&sgmi(&["eval", "--checkpoint", s(&ckpt), "--data", s(&mutag())]));
    assert!((0.0..=1.0).contains(&direct.0));

    let emb = dir.path().join("emb.csv");
    let o = sgmi(&[
        "export", "--checkpoint", s(&ckpt), "--data", s(&mutag()), "--what", "embeddings", "--out", s(&emb),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&emb).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 189);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(header.len(), 17);
    assert_eq!((header[0], header[15], header[16]), ("h0", "h15", "label"));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 17));

    let reimported = accuracy_line(&sgmi(&["eval", "--embeddings", s(&emb)]));
    assert_eq!(direct, reimported);

    let masks = dir.path().join("masks.csv");
    let o = sgmi(&[
        "export", "--checkpoint", s(&ckpt), "--data", s(&mutag()), "--what", "masks", "--out", s(&masks),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&masks).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("graph_id,node_id,subgraph_id,weight"));
    let nodes: usize = load_tudataset(&mutag(), "MUTAG").unwrap().graphs.iter().map(|g| g.num_nodes).sum();
    // default tree-split of depth 2: four soft weights per node
    assert_eq!(lines.count(), 4 * nodes);

    let hard = dir.path().join("hard.csv");
    let o = sgmi(&[
        "export", "--checkpoint", s(&ckpt), "--data", s(&mutag()), "--what", "masks", "--out", s(&hard), "--hard",
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&hard).unwrap();
    assert!(text.lines().skip(1).all(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap() >= 0.5));
}

#[test]
fn untrained_checkpoint_still_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3, 40, 2);
    let mut cfg = sgmi::config::RunConfig::default();
    cfg.data.dir = data.clone();
    cfg.data.name = "SYNTH".into();
    cfg.encoder.hidden = 8;
    let dataset = cfg.load_dataset().unwrap();
    let model = Model::new(cfg.model_config(&dataset, false).unwrap(), 0).unwrap();
    let ckpt = dir.path().join("init.bin");
    model.save(&ckpt).unwrap();
    accuracy_line(&sgmi(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data)]));
}

#[test]
fn synth_output_is_deterministic_and_loadable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (da, db) = (synth(a.path(), 7, 30, 3), synth(b.path(), 7, 30, 3));
    let mut files: Vec<_> = fs::read_dir(&da).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert!(!files.is_empty());
    for f in &files {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f:?}");
    }
    let ds = load_tudataset(&da, "SYNTH").unwrap();
    assert_eq!(ds.meta.num_graphs, 30);
    assert_eq!(ds.meta.num_classes, 3);

    let o = sgmi(&["synth", "--seed", "1", "--graphs", "0", "--classes", "2", "--out", s(&a.path().join("z"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!a.path().join("z").exists());
}

#[test]
fn documented_mutag_config_is_the_default() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mutag.toml");
    let cfg = sgmi::config::RunConfig::from_path(&path).unwrap();
    assert_eq!(cfg, sgmi::config::RunConfig::default());
}
