//! Command-line entry point: `prepare`, `train`, `eval`, `predict`,
//! `variant`, and `report`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure. Metrics and predictions go to standard output,
//! logs to standard error, and every file-producing run writes a manifest
//! next to its outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::checkpoint::{Checkpoint, VocabHashes};
use crate::config::TrainConfig;
use crate::encoder::encode_all;
use crate::error::{Error, Result};
use crate::eval::{count_parameters, evaluate_space, Metrics};
use crate::graph::{load_dataset, write_triples, write_tuples, Dataset, Split};
use crate::manifest::RunManifest;
use crate::model::{compute_alignments, forward_unified, prepare};
use crate::ot::{ota_plan, Alignment};
use crate::tape::Tape;
use crate::train::{train, TrainOptions};
use crate::typing::predict_entity;
use crate::variants::{VariantKind, VariantSpec};

#[derive(Parser)]
#[command(
    name = "kgetot",
    version,
    about = "Knowledge-graph entity typing with multi-view encoders and optimal-transport alignment"
)]
struct Cli {
    /// Worker threads for batch scoring and gradient accumulation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Force fully sequential fixed-order execution (same results, no
    /// parallelism).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive the cluster vocabulary and write the three view edge lists.
    Prepare {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the derived files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` config overrides.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Swap the source/destination roles in the alignment step.
        #[arg(long)]
        swap_roles: bool,
    },
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: String,
        /// Also print the one-line machine-readable form.
        #[arg(long)]
        machine: bool,
    },
    /// Rank the most likely types for one entity.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Entity name as it appears in the input files.
        #[arg(long)]
        entity: String,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Generate a dataset variant.
    Variant {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One of easy, hard, drop_neighbors, drop_relation_types.
        #[arg(long)]
        kind: String,
        /// Frequency threshold for easy/hard.
        #[arg(long)]
        threshold: Option<usize>,
        /// Removal rate for the dropping kinds.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Diagnostic reports.
    Report {
        #[command(subcommand)]
        what: ReportCommand,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Dump the cost matrix, transport plan, and residuals of one alignment.
    Ot {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// One of entity, type, cluster.
        #[arg(long)]
        alignment: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the total parameter count of a checkpoint.
    Params {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };

    let threads = if cli.deterministic { 1 } else { cli.threads.max(1) };
    match dispatch(cli.command, threads) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) | Error::Config(_) => 1,
                Error::Io { .. }
                | Error::Parse { .. }
                | Error::Consistency(_)
                | Error::Lookup(_) => 2,
                Error::Numerical(_) => 3,
            }
        }
    }
}

fn dispatch(command: Command, threads: usize) -> Result<()> {
    match command {
        Command::Prepare {
            data,
            out,
            config,
            set,
            seed,
        } => {
            let cfg = resolve_config(config.as_deref(), &set, seed, None, false)?;
            cmd_prepare(&data, &out, &cfg)
        }
        Command::Train {
            data,
            out,
            config,
            set,
            seed,
            epochs,
            swap_roles,
        } => {
            let cfg = resolve_config(config.as_deref(), &set, seed, epochs, swap_roles)?;
            cmd_train(&data, &out, &cfg, threads)
        }
        Command::Eval {
            ckpt,
            data,
            split,
            machine,
        } => cmd_eval(&ckpt, &data, &split, machine),
        Command::Predict {
            ckpt,
            data,
            entity,
            top_k,
        } => cmd_predict(&ckpt, &data, &entity, top_k),
        Command::Variant {
            data,
            out,
            kind,
            threshold,
            rate,
            seed,
        } => cmd_variant(&data, &out, &kind, threshold, rate, seed),
        Command::Report { what } => match what {
            ReportCommand::Ot {
                ckpt,
                data,
                alignment,
                out,
            } => cmd_report_ot(&ckpt, &data, &alignment, &out),
            ReportCommand::Params { ckpt } => {
                let ckpt = Checkpoint::load(&ckpt)?;
                println!("parameters\t{}", count_parameters(&ckpt));
                Ok(())
            }
        },
    }
}

/// defaults < config file < environment < --set pairs < dedicated flags
fn resolve_config(
    file: Option<&Path>,
    set: &[String],
    seed: Option<u64>,
    epochs: Option<usize>,
    swap_roles: bool,
) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = file {
        cfg.apply_file(path)?;
    }
    cfg.apply_env()?;
    for pair in set {
        let Some((k, v)) = pair.split_once('=') else {
            return Err(Error::Config(format!(
                "--set expects KEY=VALUE, got '{pair}'"
            )));
        };
        cfg.apply_kv(k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if swap_roles {
        cfg.swap_roles = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Resolved input file paths of a dataset directory.
pub struct DatasetPaths {
    pub triples: PathBuf,
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

/// Locates the four input files, accepting both the canonical names and the
/// names used by the public corpus distributions.
pub fn resolve_dataset_paths(dir: &Path) -> Result<DatasetPaths> {
    let find = |candidates: &[&str], what: &str| -> Result<PathBuf> {
        for c in candidates {
            let p = dir.join(c);
            if p.is_file() {
                return Ok(p);
            }
        }
        Err(Error::Lookup(format!(
            "no {what} file in {} (tried {})",
            dir.display(),
            candidates.join(", ")
        )))
    };
    Ok(DatasetPaths {
        triples: find(
            &[
                "triples.txt",
                "freebase_mtr100_mte100-train.txt",
                "YAGO43k_train.txt",
                "train_triples.txt",
            ],
            "triples",
        )?,
        train: find(
            &[
                "type_train.txt",
                "FB15k_Entity_Type_train.txt",
                "YAGO43k_Entity_Type_train.txt",
                "Entity_Type_train.txt",
            ],
            "train tuples",
        )?,
        valid: find(
            &[
                "type_valid.txt",
                "FB15k_Entity_Type_valid.txt",
                "YAGO43k_Entity_Type_valid.txt",
                "Entity_Type_valid.txt",
            ],
            "valid tuples",
        )?,
        test: find(
            &[
                "type_test.txt",
                "FB15k_Entity_Type_test.txt",
                "YAGO43k_Entity_Type_test.txt",
                "Entity_Type_test.txt",
            ],
            "test tuples",
        )?,
    })
}

fn load_from_dir(dir: &Path) -> Result<(Dataset, DatasetPaths)> {
    let paths = resolve_dataset_paths(dir)?;
    let ds = load_dataset(&paths.triples, &paths.train, &paths.valid, &paths.test)?;
    Ok((ds, paths))
}

fn manifest_inputs(manifest: &mut RunManifest, paths: &DatasetPaths) -> Result<()> {
    for p in [&paths.triples, &paths.train, &paths.valid, &paths.test] {
        manifest.add_input(p)?;
    }
    Ok(())
}

fn config_json(cfg: &TrainConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

fn cmd_prepare(data: &Path, out: &Path, cfg: &TrainConfig) -> Result<()> {
    let started = Instant::now();
    let (mut ds, paths) = load_from_dir(data)?;
    let prepared = prepare(&mut ds, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut clusters = String::new();
    for (id, name) in ds.vocabs.clusters.names().enumerate() {
        clusters.push_str(&format!("{id}\t{name}\n"));
    }
    write_text(&out.join("clusters.tsv"), &clusters)?;

    let mut e2t = String::new();
    for &(e, t) in &prepared.viewset.e2t {
        e2t.push_str(&format!(
            "{}\t{}\n",
            ds.vocabs.entities.name(e),
            ds.vocabs.types.name(t)
        ));
    }
    write_text(&out.join("e2t.tsv"), &e2t)?;

    let mut e2c = String::new();
    for &(e, c) in &prepared.viewset.e2c {
        e2c.push_str(&format!(
            "{}\t{}\n",
            ds.vocabs.entities.name(e),
            ds.vocabs.clusters.name(c)
        ));
    }
    write_text(&out.join("e2c.tsv"), &e2c)?;

    let mut tct = String::new();
    for &(t1, c, t2) in &prepared.viewset.tct {
        tct.push_str(&format!(
            "{}\t{}\t{}\n",
            ds.vocabs.types.name(t1),
            ds.vocabs.clusters.name(c),
            ds.vocabs.types.name(t2)
        ));
    }
    write_text(&out.join("tct.tsv"), &tct)?;

    println!(
        "prepared views: {} clusters, {} e2t, {} e2c, {} tct edges",
        ds.vocabs.clusters.len(),
        prepared.viewset.e2t.len(),
        prepared.viewset.e2c.len(),
        prepared.viewset.tct.len()
    );

    let mut manifest = RunManifest::new("prepare", config_json(cfg), cfg.seed);
    manifest_inputs(&mut manifest, &paths)?;
    manifest.write(&out.join("prepare.manifest.json"), started)
}

fn cmd_train(data: &Path, out: &Path, cfg: &TrainConfig, threads: usize) -> Result<()> {
    let started = Instant::now();
    let (mut ds, paths) = load_from_dir(data)?;
    let prepared = prepare(&mut ds, cfg)?;
    let outcome = train(&ds, &prepared, cfg, &TrainOptions { threads })?;

    let ckpt = Checkpoint::from_space(
        &outcome.space,
        cfg,
        VocabHashes::of(&ds),
        outcome.best_epoch,
        outcome.best_valid_mrr,
    )?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    ckpt.save(out)?;

    match outcome.best_valid_mrr {
        Some(mrr) => println!(
            "trained {} epochs; best valid mrr {:.4} at epoch {}; checkpoint {}",
            cfg.epochs,
            mrr,
            outcome.best_epoch,
            out.display()
        ),
        None => println!(
            "trained {} epochs; checkpoint {}",
            cfg.epochs,
            out.display()
        ),
    }

    let mut manifest = RunManifest::new("train", config_json(cfg), cfg.seed);
    manifest_inputs(&mut manifest, &paths)?;
    manifest.write(&manifest_path(out), started)
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_eval(ckpt_path: &Path, data: &Path, split: &str, machine: bool) -> Result<()> {
    let split: Split = split.parse()?;
    if split == Split::Train {
        return Err(Error::InvalidArgument(
            "eval split must be valid or test".into(),
        ));
    }
    let ckpt = Checkpoint::load(ckpt_path)?;
    let cfg = ckpt.train_config()?;
    let (mut ds, _) = load_from_dir(data)?;
    let prepared = prepare(&mut ds, &cfg)?;
    ckpt.check_vocab_hashes(&ds)?;
    let space = ckpt.space();
    let metrics: Metrics = evaluate_space(&space, &ds, &prepared, &cfg, split)?;
    println!("{}", metrics.table());
    if machine {
        println!("{}", metrics.machine_line());
    }
    Ok(())
}

fn cmd_predict(ckpt_path: &Path, data: &Path, entity: &str, top_k: usize) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let cfg = ckpt.train_config()?;
    let (mut ds, _) = load_from_dir(data)?;
    let prepared = prepare(&mut ds, &cfg)?;
    ckpt.check_vocab_hashes(&ds)?;
    let space = ckpt.space();

    let eid = ds
        .vocabs
        .entities
        .get(entity)
        .ok_or_else(|| Error::Lookup(format!("unknown entity '{entity}'")))?;

    let alignments = compute_alignments(&space, &prepared, &cfg)?;
    let fwd = forward_unified(&space, &prepared, &cfg, &alignments)?;
    let (ze, zt, zc) = fwd.z_values();
    let layout = fwd.layout;
    drop(fwd);
    let mut unified = ndarray::Array2::<f64>::zeros((layout.total_rows(), space.dim));
    unified
        .slice_mut(ndarray::s![0..layout.num_entities, ..])
        .assign(&ze);
    unified
        .slice_mut(ndarray::s![
            layout.num_entities..layout.num_entities + layout.num_types,
            ..
        ])
        .assign(&zt);
    unified
        .slice_mut(ndarray::s![layout.num_entities + layout.num_types.., ..])
        .assign(&zc);

    let scores = predict_entity(
        eid,
        &prepared.index,
        &unified.view(),
        &layout,
        &space.get("relation").view(),
        &space.get("pred_w").view(),
        &space.get("pred_b").row(0),
        &cfg.temperatures,
    )?;

    let mut ranked: Vec<(usize, f64)> = scores.s_e.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    for (t, p) in ranked.into_iter().take(top_k) {
        println!("{}\t{:.6}", ds.vocabs.types.name(t), p);
    }
    Ok(())
}

fn cmd_variant(
    data: &Path,
    out: &Path,
    kind: &str,
    threshold: Option<usize>,
    rate: Option<f64>,
    seed: u64,
) -> Result<()> {
    let started = Instant::now();
    let kind: VariantKind = kind.parse()?;
    let spec = VariantSpec {
        kind,
        threshold,
        rate,
        seed,
    };
    spec.validate()?;
    let (ds, paths) = load_from_dir(data)?;
    let variant = spec.apply(&ds)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match kind {
        VariantKind::Easy | VariantKind::Hard => {
            // relational graph unchanged: copy the input bytes verbatim
            copy_file(&paths.triples, &out.join("triples.txt"))?;
            write_tuples(&out.join("type_train.txt"), &variant, Split::Train)?;
            write_tuples(&out.join("type_valid.txt"), &variant, Split::Valid)?;
            write_tuples(&out.join("type_test.txt"), &variant, Split::Test)?;
        }
        VariantKind::DropNeighbors | VariantKind::DropRelationTypes => {
            // the type graph must stay byte-identical
            write_triples(&out.join("triples.txt"), &variant)?;
            copy_file(&paths.train, &out.join("type_train.txt"))?;
            copy_file(&paths.valid, &out.join("type_valid.txt"))?;
            copy_file(&paths.test, &out.join("type_test.txt"))?;
        }
    }
    println!(
        "variant written: {} edges, {}/{}/{} tuples",
        variant.relational_edges.len(),
        variant.train_tuples.len(),
        variant.valid_tuples.len(),
        variant.test_tuples.len()
    );

    let mut manifest = RunManifest::new(
        "variant",
        serde_json::to_value(&spec).unwrap_or(serde_json::Value::Null),
        seed,
    );
    manifest_inputs(&mut manifest, &paths)?;
    manifest.write(&out.join("variant.manifest.json"), started)
}

fn cmd_report_ot(ckpt_path: &Path, data: &Path, alignment: &str, out: &Path) -> Result<()> {
    let started = Instant::now();
    let ckpt = Checkpoint::load(ckpt_path)?;
    let cfg = ckpt.train_config()?;
    let (mut ds, paths) = load_from_dir(data)?;
    let prepared = prepare(&mut ds, &cfg)?;
    ckpt.check_vocab_hashes(&ds)?;
    let space = ckpt.space();

    let mut tape = Tape::new();
    let params = space.register(&mut tape);
    let enc_cfg = cfg.encoder_config()?;
    let enc = encode_all(&mut tape, &params, &prepared.graphs, &enc_cfg);
    let pair = match alignment {
        "entity" => enc.entity_pair(),
        "type" => enc.type_pair(),
        "cluster" => enc.cluster_pair(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "alignment must be entity|type|cluster, got '{other}'"
            )))
        }
    };
    let (src, dst) = if cfg.swap_roles {
        (pair.1, pair.0)
    } else {
        pair
    };
    let (Some(src), Some(dst)) = (src, dst) else {
        return Err(Error::InvalidArgument(format!(
            "alignment '{alignment}' has a single view; nothing to transport"
        )));
    };

    let source = tape.value(src).clone();
    let dest = tape.value(dst).clone();
    let cost = crate::ot::cost_matrix(&source.view(), &dest.view());
    let plan = match ota_plan(&source.view(), &dest.view(), &cfg.ota_config())? {
        Alignment::Transport { plan, .. } => plan,
        _ => {
            return Err(Error::InvalidArgument(
                "alignment fell back (table exceeds the transport cap)".into(),
            ))
        }
    };

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_matrix(&out.join("cost.tsv"), &cost)?;
    write_matrix(&out.join("plan.tsv"), &plan.matrix)?;
    let summary = format!(
        "transport_cost\t{:.12}\niterations\t{}\nmarginal_residual\t{:.3e}\nrows\t{}\ncols\t{}\n",
        plan.cost,
        plan.iterations,
        plan.marginal_residual,
        plan.matrix.nrows(),
        plan.matrix.ncols()
    );
    write_text(&out.join("summary.tsv"), &summary)?;
    println!(
        "alignment '{alignment}': cost {:.6}, residual {:.3e}, {} iterations",
        plan.cost, plan.marginal_residual, plan.iterations
    );

    let mut manifest = RunManifest::new("report-ot", config_json(&cfg), cfg.seed);
    manifest_inputs(&mut manifest, &paths)?;
    manifest.write(&out.join("report.manifest.json"), started)
}

fn write_matrix(path: &Path, m: &ndarray::Array2<f64>) -> Result<()> {
    let mut text = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        text.push_str(&line.join("\t"));
        text.push('\n');
    }
    write_text(path, &text)
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn copy_file(from: &Path, to: &Path) -> Result<()> {
    std::fs::copy(from, to)
        .map(|_| ())
        .map_err(|e| Error::io(from, e))
}
