//! The four subcommands as library functions. Each writes under an output
//! directory and is bit-reproducible for a fixed config and seed.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use csikit::ai4csi::{load_model, save_model, train_e2e, train_rx, SavedModel, TrainingSet};
use csikit::channel::{make_dataset, read_dataset, write_dataset, ChannelTensor, Dataset, Split};
use csikit::evaluate::{self, read_results_csv, training_pairs, write_jsonl, write_results_csv, LoadedModel, PointOutcome, SweepOutput};
use csikit::hash::config_hash;
use csikit::legacy::kbps;
use csikit::numerics::derive_seed;
use csikit_neural::LossTrace;
use serde::Serialize;

use crate::config::{ExperimentConfig, PointConfig};
use crate::{CliError, Result};

const DATA_STREAM: u64 = 0x00da_7a00;
const TRAIN_STREAM: u64 = 0x007a_1400;

pub fn data_path(out: &Path, split: Split) -> PathBuf {
    out.join("data").join(format!("{}.csid", split.name()))
}

pub fn model_path(out: &Path, id: &str) -> PathBuf {
    out.join("models").join(format!("{id}.model"))
}

pub fn trace_path(out: &Path, id: &str) -> PathBuf {
    out.join("models").join(format!("{id}.loss.csv"))
}

pub fn results_path(out: &Path) -> PathBuf {
    out.join("results.csv")
}

fn split_seed(cfg: &ExperimentConfig, split: Split) -> u64 {
    let index = Split::ALL.iter().position(|&s| s == split).unwrap_or(0) as u64;
    derive_seed(derive_seed(cfg.seed, DATA_STREAM), index)
}

/// Seed of one point's training run, keyed by its id so that adding or
/// reordering points leaves the other models unchanged.
fn point_seed(cfg: &ExperimentConfig, id: &str) -> u64 {
    derive_seed(derive_seed(cfg.seed, TRAIN_STREAM), u64::from_le_bytes(config_hash(id)))
}

/// Draws the train, val and test splits and writes one file per split.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out.join("data"))?;
    let recipe = cfg.dataset.recipe();
    let mut written = Vec::new();
    for split in Split::ALL {
        let ds = make_dataset(
            &recipe,
            cfg.dataset.size(split),
            &cfg.system.channel_config(),
            split_seed(cfg, split),
            Some(split),
        )?;
        let path = data_path(out, split);
        let mut w = BufWriter::new(File::create(&path)?);
        write_dataset(&mut w, &ds)?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

fn load_split(cfg: &ExperimentConfig, out: &Path, split: Split) -> Result<Vec<ChannelTensor>> {
    let path = data_path(out, split);
    let file = File::open(&path).map_err(|e| {
        CliError::Run(csikit::Error::InvalidArgument(format!(
            "cannot open dataset {} ({e}); run `csikit generate` first",
            path.display()
        )))
    })?;
    let ds: Dataset = read_dataset(BufReader::new(file))?;
    let sys = &cfg.system;
    if (ds.k, ds.nr, ds.nt) != (sys.k(), sys.nr, sys.nt()) {
        return Err(CliError::Config(format!(
            "{} holds {}x{}x{} channels but the config needs {}x{}x{}; rerun `csikit generate`",
            path.display(),
            ds.k,
            ds.nr,
            ds.nt,
            sys.k(),
            sys.nr,
            sys.nt()
        )));
    }
    Ok(ds.samples)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub id: String,
    pub samples: usize,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub final_val_loss: Option<f64>,
}

fn write_trace(path: &Path, trace: &LossTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let io = |e: csv::Error| CliError::Run(csikit::Error::Format(e.to_string()));
    w.write_record(["epoch", "train_loss", "val_loss"]).map_err(io)?;
    for (i, t) in trace.train.iter().enumerate() {
        let v = trace.validation.get(i).map(f64::to_string).unwrap_or_default();
        w.write_record([(i + 1).to_string(), t.to_string(), v]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn train_point(cfg: &ExperimentConfig, out: &Path, p: &PointConfig, train: &[ChannelTensor], val: &[ChannelTensor]) -> Result<TrainSummary> {
    let seed = point_seed(cfg, &p.id);
    let (tc, limit) = cfg.train_config(p, derive_seed(seed, 3));
    let train = &train[..limit.unwrap_or(train.len()).min(train.len())];
    let tr = training_pairs(&p.scheme, &cfg.system, train, derive_seed(seed, 1))?;
    let va = training_pairs(&p.scheme, &cfg.system, val, derive_seed(seed, 2))?;
    let set = TrainingSet {
        inputs: &tr.inputs,
        targets: &tr.targets,
        val_inputs: &va.inputs,
        val_targets: &va.targets,
    };
    let deployment = p.scheme.deployment().expect("AI point has a deployment tag");
    let (model, trace) = if let Some(rx) = p.scheme.rx_config(&cfg.system) {
        let (graph, trace) = train_rx(&rx, &set, &tc)?;
        (SavedModel::Rx { config: rx, graph }, trace)
    } else {
        let e2e = p.scheme.e2e_config(&cfg.system).expect("AI point is Rx or E2E");
        let qat = match p.scheme {
            evaluate::SchemeSpec::E2e { qat_epochs, .. } => qat_epochs,
            _ => 0,
        };
        let (model, trace) = train_e2e(&e2e, &set, &tc, qat)?;
        (SavedModel::E2E(model), trace)
    };
    save_model(&model_path(out, &p.id), &model, &deployment)?;
    write_trace(&trace_path(out, &p.id), &trace)?;
    Ok(TrainSummary {
        id: p.id.clone(),
        samples: train.len(),
        epochs: trace.train.len(),
        final_train_loss: trace.train.last().copied().unwrap_or(f64::NAN),
        final_val_loss: trace.validation.last().copied(),
    })
}

/// Trains the AI points named in `only`, or every AI point when it is empty.
pub fn train(cfg: &ExperimentConfig, out: &Path, only: &[String]) -> Result<Vec<TrainSummary>> {
    for id in only {
        match cfg.point(id) {
            None => return Err(CliError::Config(format!("no operating point with id `{id}`"))),
            Some(p) if !p.scheme.is_ai() => {
                return Err(CliError::Config(format!("point `{id}` ({}) has no model to train", p.scheme.kind())))
            }
            Some(_) => {}
        }
    }
    let points: Vec<&PointConfig> = cfg
        .points
        .iter()
        .filter(|p| p.scheme.is_ai() && (only.is_empty() || only.contains(&p.id)))
        .collect();
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let train = load_split(cfg, out, Split::Train)?;
    let val = load_split(cfg, out, Split::Val)?;
    fs::create_dir_all(out.join("models"))?;
    points.iter().map(|p| train_point(cfg, out, p, &train, &val)).collect()
}

fn load_for(cfg: &ExperimentConfig, out: &Path, p: &evaluate::OperatingPoint) -> csikit::Result<LoadedModel> {
    let Some(deployment) = p.scheme.deployment() else {
        return Ok(LoadedModel::None);
    };
    match load_model(&model_path(out, &p.id), &deployment)? {
        SavedModel::Rx { config, graph } => {
            if Some(config) != p.scheme.rx_config(&cfg.system) {
                return Err(csikit::Error::ModelMismatch(format!("{}: network shape differs from the config", p.id)));
            }
            Ok(LoadedModel::Rx(graph))
        }
        SavedModel::E2E(m) => {
            if Some(m.config) != p.scheme.e2e_config(&cfg.system) {
                return Err(csikit::Error::ModelMismatch(format!("{}: network shape differs from the config", p.id)));
            }
            Ok(LoadedModel::E2E(m))
        }
    }
}

/// Evaluates every point on the test split and writes `results.csv` plus
/// `results.jsonl`. Fails only if no point produced a row.
pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepOutput> {
    let test = load_split(cfg, out, Split::Test)?;
    let points: Vec<_> = cfg.points.iter().map(PointConfig::operating_point).collect();
    let result = evaluate::sweep(&points, &cfg.system, &test, cfg.seed, |p| load_for(cfg, out, p))?;
    fs::create_dir_all(out)?;
    let rows = result.rows();
    write_results_csv(BufWriter::new(File::create(results_path(out))?), &rows, cfg.system.users)?;
    write_jsonl(BufWriter::new(File::create(out.join("results.jsonl"))?), &result.outcomes)?;
    if rows.is_empty() {
        return Err(CliError::Run(csikit::Error::Invariant("every operating point failed".into())));
    }
    Ok(result)
}

/// One line per grid point: overhead, SE and, for failures, the reason.
pub fn summary_table(outcomes: &[PointOutcome]) -> String {
    let mut s = format!(
        "{:<24} {:>10} {:>8} {:>10} {:>9} {:>9}\n",
        "scheme", "kbps", "density", "se_sum", "nmse_db", "dropped"
    );
    for o in outcomes {
        match &o.row {
            Some(r) => {
                let flag = if r.valid { "" } else { " (invalid)" };
                let _ = writeln!(
                    s,
                    "{:<24} {:>10.1} {:>8} {:>10.3} {:>9.2} {:>9}{flag}",
                    r.scheme, r.overhead_kbps, r.density, r.se_sum, r.nmse_db, r.n_dropped
                );
            }
            None => {
                let _ = writeln!(s, "{:<24} FAILED: {}", o.id, o.error.as_deref().unwrap_or("unknown error"));
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub scheme: String,
    pub overhead_kbps: f64,
    pub bits_per_report: usize,
    pub bs_gflops: f64,
    pub ue_gflops: f64,
}

/// Overhead and complexity per result row. Bits per report are recovered
/// from the kbps column and must reproduce it exactly.
pub fn report(cfg: &ExperimentConfig, results: &Path, out: &Path) -> Result<(Vec<ReportRow>, String)> {
    let file = File::open(results).map_err(|e| CliError::Config(format!("cannot open {}: {e}", results.display())))?;
    let rows = read_results_csv(BufReader::new(file))?;
    let period = cfg.system.period_s;
    let mut table = Vec::with_capacity(rows.len());
    for r in rows {
        let bits = (r.overhead_kbps * period * 1000.0).round() as usize;
        if kbps(bits, period) != r.overhead_kbps {
            return Err(CliError::Run(csikit::Error::Format(format!(
                "{}: {} kbps is not a whole number of bits per {} s report",
                r.scheme, r.overhead_kbps, period
            ))));
        }
        table.push(ReportRow {
            scheme: r.scheme,
            overhead_kbps: r.overhead_kbps,
            bits_per_report: bits,
            bs_gflops: r.bs_gflops,
            ue_gflops: r.ue_gflops,
        });
    }
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("report.csv"))?));
    for row in &table {
        w.serialize(row).map_err(|e| CliError::Run(csikit::Error::Format(e.to_string())))?;
    }
    if table.is_empty() {
        w.write_record(["scheme", "overhead_kbps", "bits_per_report", "bs_gflops", "ue_gflops"])
            .map_err(|e| CliError::Run(csikit::Error::Format(e.to_string())))?;
    }
    w.flush()?;

    let mut text = format!(
        "{:<24} {:>10} {:>12} {:>10} {:>10}\n",
        "scheme", "kbps", "bits/report", "bs_gflops", "ue_gflops"
    );
    for r in &table {
        let _ = writeln!(
            text,
            "{:<24} {:>10.1} {:>12} {:>10.4} {:>10.4}",
            r.scheme, r.overhead_kbps, r.bits_per_report, r.bs_gflops, r.ue_gflops
        );
    }
    Ok((table, text))
}
