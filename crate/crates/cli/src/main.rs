//! `sgmi` command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data or
//! checkpoint error, 4 non-finite objective during training.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use sgmi::autodiff::Tensor;
use sgmi::config::RunConfig;
use sgmi::eval::{evaluate_linear, EvalConfig};
use sgmi::graph::{Dataset, Graph};
use sgmi::model::Model;
use sgmi::synthetic::synthetic_dataset;
use sgmi::train::{split_indices, train_semisupervised, train_unsupervised, SemiSplits};
use sgmi::tudataset::{load_tudataset, write_tudataset};
use sgmi::Error;

#[derive(Parser)]
#[command(name = "sgmi", version, about = "Graph representations from subgraph reconstructions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Semi-supervised training with a prediction head.
        #[arg(long)]
        semi: bool,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `data.dir`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Cross-validated linear accuracy of checkpoint or exported embeddings.
    Eval {
        #[arg(long, required_unless_present = "embeddings", requires = "data")]
        checkpoint: Option<PathBuf>,
        /// Dataset directory; the dataset name defaults to its last component.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        /// CSV written by `export --what embeddings`.
        #[arg(long, conflicts_with = "checkpoint")]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write graph embeddings or subgraph masks as CSV.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_enum)]
        what: Export,
        #[arg(long)]
        out: PathBuf,
        /// Masks: keep only memberships with weight >= 0.5.
        #[arg(long)]
        hard: bool,
    },
    /// Generate a planted-motif dataset in TUDataset format.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        graphs: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "SYNTH")]
        name: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Export {
    Embeddings,
    Masks,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(
            Error::Load { .. } | Error::Integrity { .. } | Error::DataMismatch(_) | Error::Checkpoint(_),
        ) => 3,
        Some(Error::NonFinite { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train {
            config,
            out,
            semi,
            seed,
            data,
        } => train(&config, &out, semi, seed, data),
        Command::Eval {
            checkpoint,
            data,
            name,
            embeddings,
            seed,
        } => {
            let eval = EvalConfig {
                seed,
                ..EvalConfig::default()
            };
            let (x, labels) = match embeddings {
                Some(path) => read_embeddings(&path)?,
                None => {
                    let model = Model::load(&checkpoint.expect("required by clap"))?;
                    let dataset = load_data(&data.expect("required by clap"), name.as_deref())?;
                    let graphs = model.prepare(&dataset.graphs)?;
                    (model.embed(&graphs)?, dataset.class_labels()?)
                }
            };
            let acc = evaluate_linear(&x, &labels, &eval)?;
            println!("accuracy {} {}", acc.mean, acc.std);
            Ok(())
        }
        Command::Export {
            checkpoint,
            data,
            name,
            what,
            out,
            hard,
        } => {
            let model = Model::load(&checkpoint)?;
            let dataset = load_data(&data, name.as_deref())?;
            let graphs = model.prepare(&dataset.graphs)?;
            let text = match what {
                Export::Embeddings => embeddings_csv(&model, &graphs, &dataset)?,
                Export::Masks => masks_csv(&model, &graphs, hard)?,
            };
            fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            Ok(())
        }
        Command::Synth {
            seed,
            graphs,
            classes,
            out,
            name,
        } => {
            if graphs == 0 || classes == 0 {
                return Err(Error::Config("--graphs and --classes must be >= 1".into()).into());
            }
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_tudataset(&out, &name, &synthetic_dataset(seed, graphs, classes))?;
            Ok(())
        }
    }
}

fn load_data(dir: &Path, name: Option<&str>) -> anyhow::Result<Dataset> {
    let name = match name {
        Some(n) => n.to_string(),
        None => dir
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Config(format!("cannot infer a dataset name from {}", dir.display())))?,
    };
    Ok(load_tudataset(dir, &name)?)
}

fn train(
    config: &Path,
    out: &Path,
    semi: bool,
    seed: Option<u64>,
    data: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::from_path(config)?;
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    if let Some(dir) = data {
        cfg.data.dir = dir;
    }
    cfg.eval.seed = cfg.train.seed;
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    let model = Model::new(cfg.model_config(&dataset, semi)?, cfg.train.seed)?;
    let graphs = model.prepare(&dataset.graphs)?;
    let labels = dataset.class_labels().ok();
    if !semi && labels.is_none() {
        log::warn!("dataset has no class labels; periodic linear evaluation is skipped");
    }

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outcome = if semi {
        let s = split_indices(
            graphs.len(),
            cfg.data.labeled_fraction,
            cfg.data.validation_fraction,
            cfg.data.test_fraction,
            cfg.train.seed,
        );
        let pick = |idx: &[usize]| idx.iter().map(|&i| graphs[i].clone()).collect::<Vec<Graph>>();
        let (labeled, unlabeled) = (pick(&s.labeled), pick(&s.unlabeled));
        let (validation, test) = (pick(&s.validation), pick(&s.test));
        let splits = SemiSplits {
            labeled: &labeled,
            unlabeled: &unlabeled,
            validation: &validation,
            test: &test,
        };
        train_semisupervised(model, splits, &cfg.train, cfg.objective.estimator, cfg.objective.lambda)?
    } else {
        train_unsupervised(
            model,
            &graphs,
            labels.as_deref(),
            &cfg.train,
            cfg.objective.estimator,
            &cfg.eval,
        )?
    };

    let write = |file: &str, text: &str| -> anyhow::Result<()> {
        let path = out.join(file);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    outcome.model.save(&out.join("checkpoint.bin"))?;
    outcome.best.save(&out.join("best.bin"))?;
    write("metrics.csv", &outcome.record.metrics_csv())?;
    write("config.toml", &cfg.snapshot())?;
    let mut evals = String::from("epoch,mean,std\n");
    for e in &outcome.record.evals {
        let _ = writeln!(evals, "{},{},{}", e.epoch, e.mean, e.std);
    }
    write("evals.csv", &evals)?;
    log::info!("finished in {:.1?}", outcome.record.wall_clock);
    if let Some(best) = outcome.record.best_epoch {
        let e = outcome.record.evals.iter().find(|e| e.epoch == best).expect("recorded");
        println!("best_epoch {best} {} {}", e.mean, e.std);
    }
    if let Some(t) = outcome.record.test_metric {
        println!("test {t}");
    }
    Ok(())
}

fn embeddings_csv(model: &Model, graphs: &[Graph], dataset: &Dataset) -> anyhow::Result<String> {
    let x = model.embed(graphs)?;
    let labels = dataset.class_labels()?;
    let mut out = String::new();
    for j in 0..x.cols() {
        let _ = write!(out, "h{j},");
    }
    out.push_str("label\n");
    for (i, label) in labels.iter().enumerate() {
        for v in x.row(i) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{label}");
    }
    Ok(out)
}

fn masks_csv(model: &Model, graphs: &[Graph], hard: bool) -> anyhow::Result<String> {
    let mut out = String::from("graph_id,node_id,subgraph_id,weight\n");
    for (g, graph) in graphs.iter().enumerate() {
        let masks = model.masks(graph)?;
        for v in 0..masks.rows() {
            for (s, &w) in masks.row(v).iter().enumerate() {
                if !hard || w >= 0.5 {
                    let _ = writeln!(out, "{g},{v},{s},{w}");
                }
            }
        }
    }
    Ok(out)
}

fn read_embeddings(path: &Path) -> anyhow::Result<(Tensor, Vec<usize>)> {
    let load_err = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
    let mut lines = text.lines().enumerate();
    let header = lines.next().ok_or_else(|| load_err("empty file".into()))?.1;
    let width = header.split(',').count();
    if width < 2 {
        return Err(load_err("expected embedding columns followed by a label column".into()).into());
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("expected {width} fields, found {}", fields.len()),
            }
            .into());
        }
        let bad = |f: &str| Error::Integrity {
            path: path.to_path_buf(),
            line: i + 1,
            reason: format!("cannot parse `{f}`"),
        };
        for f in &fields[..width - 1] {
            data.push(f.trim().parse::<f64>().map_err(|_| bad(f))?);
        }
        let label = fields[width - 1];
        labels.push(label.trim().parse::<usize>().map_err(|_| bad(label))?);
    }
    let x = Tensor::matrix(labels.len(), width - 1, data)?;
    Ok((x, labels))
}
