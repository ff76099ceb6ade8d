use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use specprint::evaluation::{
    cross_config_eval, enumerate_configs, evaluate, write_sweep_csv, CrossConfigReport, ExperimentConfig, SweepRow,
    SWEEP_HEADER,
};
use specprint::imaging::png::write_image;
use specprint::pipeline::{build_datasets, extract_features, Features, Prepared};
use specprint::sidecar::{load_stats, save_stats};
use specprint::trace::{check_dense, write_stats_csv, write_traces, PacketTrace};
use specprint::training::{epoch_metrics, train, SplitKind, TrainHistory};
use specprint::vit::{load_checkpoint, save_checkpoint, VitModel};
use specprint::Real;

use crate::cache::{hex, FeatureCache};
use crate::config::{read_trace_file, RunConfig};
use crate::histogram::write_heatmap;
use crate::InputError;

pub const CHECKPOINT: &str = "best.ckpt";
pub const HISTORY: &str = "history.csv";
pub const SPLIT: &str = "split.csv";

pub struct Ctx {
    pub quiet: bool,
    pub cache: Option<PathBuf>,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn features<T: Real>(&self, traces: &[PacketTrace], cfg: &RunConfig) -> Result<Features<T>> {
        match &self.cache {
            Some(dir) => {
                let (f, hit) = FeatureCache::new(dir).get_or_extract(traces, &cfg.features)?;
                if hit {
                    self.log("spectrograms loaded from cache");
                }
                Ok(f)
            }
            None => Ok(extract_features(traces, &cfg.features)?),
        }
    }

    fn prepare<T: Real>(&self, traces: &[PacketTrace], cfg: &RunConfig) -> Result<Prepared<T>> {
        let f = self.features(traces, cfg)?;
        Ok(build_datasets(&f, &cfg.split, &cfg.features)?)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, bytes: Vec<u8>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn ingest(ctx: &Ctx, files: &[PathBuf], out: &Path) -> Result<()> {
    let mut traces = Vec::new();
    for f in files {
        traces.extend(read_trace_file(f)?);
    }
    check_dense(&traces).map_err(|e| InputError(e.to_string()))?;
    traces.sort_by_key(|t| t.device_id);
    create_dir(out)?;
    let mut buf = Vec::new();
    write_stats_csv(&traces, &mut buf)?;
    write_file(&out.join("trace_stats.csv"), buf)?;
    write_heatmap(&out.join("packet_histogram.png"), &traces)?;
    ctx.log(format!("{} devices, stats written to {}", traces.len(), out.display()));
    Ok(())
}

pub fn synth(ctx: &Ctx, cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.data.traces.is_some() {
        return Err(InputError("synth needs data.synth profiles, not data.traces".into()).into());
    }
    let traces = cfg.load_traces()?;
    create_dir(out)?;
    let mut buf = Vec::new();
    write_traces(&traces, &mut buf)?;
    write_file(&out.join("traces.csv"), buf)?;
    cfg.write(out)?;
    ctx.log(format!("{} traces of {} packets", traces.len(), cfg.data.synth_packets));
    Ok(())
}

pub fn image_name(device: usize, segment: usize, method: impl std::fmt::Display, r: usize) -> String {
    format!("{device}_{segment}_{method}_{r}.png")
}

pub fn spectrogram<T: Real>(ctx: &Ctx, cfg: &RunConfig, out: &Path, csv: bool) -> Result<()> {
    let traces = cfg.load_traces()?;
    let features = ctx.features::<T>(&traces, cfg)?;
    let prepared = build_datasets(&features, &cfg.split, &cfg.features)?;
    let images = out.join("images");
    create_dir(&images)?;
    let all: Vec<_> = [SplitKind::Train, SplitKind::Val, SplitKind::Test]
        .into_iter()
        .flat_map(|k| prepared.datasets.get(k).iter())
        .collect();
    all.par_iter().try_for_each(|l| {
        let name = image_name(l.image.device_id, l.image.segment_index, cfg.features.method, cfg.features.resolution);
        write_image(&images.join(name), &l.image)
    })?;
    if csv {
        let dir = out.join("csv");
        create_dir(&dir)?;
        for s in features.spectrograms.iter().flatten() {
            let name = image_name(s.device_id, s.segment_index, s.method, cfg.features.resolution).replace(".png", ".csv");
            write_file(&dir.join(name), csv_bytes(|b| s.write_csv(b))?)?;
        }
    }
    save_stats(out, &prepared.stats, cfg.features.normalization)?;
    write_file(&out.join(SPLIT), csv_bytes(|b| prepared.split.write_csv(b))?)?;
    cfg.write(out)?;
    ctx.log(format!("{} images written to {}", all.len(), images.display()));
    Ok(())
}

/// Trains one model and writes the run directory.
fn train_run<T: Real>(
    ctx: &Ctx,
    cfg: &RunConfig,
    prepared: &Prepared<T>,
    out: &Path,
) -> Result<(VitModel<T>, TrainHistory)> {
    create_dir(out)?;
    cfg.write(out)?;
    let model = VitModel::<T>::init(cfg.model_for(prepared.num_classes), cfg.init_seed)?;
    ctx.log(format!(
        "training {} parameters on {} images ({} val)",
        model.num_params(),
        prepared.datasets.train.len(),
        prepared.datasets.val.len()
    ));
    let (model, history) = train(model, &prepared.datasets, &cfg.train)?;
    save_checkpoint(&out.join(CHECKPOINT), &model)?;
    write_file(&out.join(HISTORY), csv_bytes(|b| history.write_csv(b))?)?;
    write_file(&out.join(SPLIT), csv_bytes(|b| prepared.split.write_csv(b))?)?;
    save_stats(out, &prepared.stats, cfg.features.normalization)?;
    Ok((model, history))
}

pub fn train_cmd<T: Real>(ctx: &Ctx, cfg: &RunConfig, out: &Path) -> Result<()> {
    let traces = cfg.load_traces()?;
    let prepared = ctx.prepare::<T>(&traces, cfg)?;
    let (_, history) = train_run(ctx, cfg, &prepared, out)?;
    let best = history.best().expect("training ran at least one epoch");
    ctx.log(format!(
        "best epoch {} of {}: val accuracy {:.2}%{}",
        history.best_epoch,
        history.epochs.len(),
        100.0 * best.val_acc,
        if history.stopped_early { " (stopped early)" } else { "" }
    ));
    Ok(())
}

/// Loads the run's model and checks its stored statistics against the data.
fn load_run<T: Real>(ctx: &Ctx, run: &Path) -> Result<(RunConfig, Vec<PacketTrace>, Prepared<T>, VitModel<T>)> {
    let cfg = RunConfig::read_run(run)?;
    let traces = cfg.load_traces()?;
    let prepared = ctx.prepare::<T>(&traces, &cfg)?;
    let (stats, _) = load_stats::<T>(run)?;
    if stats != prepared.stats {
        return Err(InputError(format!(
            "statistics stored in {} do not match the data; were the traces changed?",
            run.display()
        ))
        .into());
    }
    let model = load_checkpoint::<T>(&run.join(CHECKPOINT))?;
    Ok((cfg, traces, prepared, model))
}

pub fn evaluate_cmd<T: Real>(ctx: &Ctx, run: &Path, out: &Path) -> Result<()> {
    let (cfg, _, prepared, model) = load_run::<T>(ctx, run)?;
    let report = evaluate(&model, &prepared.datasets.examples(SplitKind::Test), &cfg.eval)?;
    create_dir(out)?;
    write_file(&out.join("report.csv"), csv_bytes(|b| report.write_summary_csv(b))?)?;
    write_file(&out.join("per_class.csv"), csv_bytes(|b| report.write_per_class_csv(b))?)?;
    write_file(&out.join("confusion.csv"), csv_bytes(|b| report.write_confusion_csv(b))?)?;
    ctx.log(format!(
        "test accuracy {:.2}% (CI {:.2}..{:.2}, width {:.2}), weighted F1 {:.4}, n={}",
        report.accuracy_pct, report.ci.low, report.ci.high, report.ci.width, report.weighted_f1, report.n_test
    ));
    Ok(())
}

pub fn crosseval_cmd<T: Real>(ctx: &Ctx, run: &Path, out: &Path) -> Result<()> {
    let (cfg, traces, prepared, model) = load_run::<T>(ctx, run)?;
    let x = &cfg.crosseval;
    let report = cross_config_eval(
        &model,
        &prepared.stats,
        &cfg.features,
        &traces,
        &prepared.regions,
        &x.seg_lens,
        &x.overlaps,
        x.max_segments,
    )?;
    create_dir(out)?;
    write_file(
        &out.join("crosseval.csv"),
        csv_bytes(|b| CrossConfigReport::write_grid_csv(std::slice::from_ref(&report), b))?,
    )?;
    write_file(&out.join("crosseval_cells.csv"), csv_bytes(|b| report.write_cells_csv(b))?)?;
    for c in &report.cells {
        ctx.log(format!(
            "L={:<4} p={:<5} {:>7.2}%  n={}{}",
            c.seg_len,
            c.overlap,
            c.accuracy_pct,
            c.n,
            if c.matched { "  (trained)" } else { "" }
        ));
    }
    ctx.log(format!("max gap {:.2} points", report.max_gap));
    Ok(())
}

fn sweep_config(base: &RunConfig, c: &ExperimentConfig) -> RunConfig {
    let mut cfg = base.clone();
    cfg.features.method = c.method;
    cfg.features.resolution = c.resolution;
    cfg.features.seg_len = c.seg_len;
    cfg.features.overlap = c.overlap;
    cfg
}

fn run_dir_name(c: &ExperimentConfig, cfg: &RunConfig) -> Result<String> {
    let digest = Sha256::digest(cfg.to_toml()?.as_bytes());
    Ok(format!(
        "{}_{}_{}_{}-{}",
        c.method.to_string().to_lowercase(),
        c.resolution,
        c.seg_len,
        (c.overlap * 100.0).round(),
        &hex(&digest)[..12]
    ))
}

fn sweep_one<T: Real>(ctx: &Ctx, base: &RunConfig, traces: &[PacketTrace], c: &ExperimentConfig, out: &Path) -> Result<SweepRow> {
    let cfg = sweep_config(base, c);
    let dir = out.join("runs").join(run_dir_name(c, &cfg)?);
    let row_path = dir.join("row.csv");
    if let Ok(text) = fs::read_to_string(&row_path) {
        if let Some(row) = parse_row(&text, c) {
            ctx.log(format!("{c}: cached"));
            return Ok(row);
        }
    }
    let prepared = ctx.prepare::<T>(traces, &cfg).with_context(|| format!("configuration {c}"))?;
    let (model, history) = train_run(ctx, &cfg, &prepared, &dir).with_context(|| format!("configuration {c}"))?;
    let report = evaluate(&model, &prepared.datasets.examples(SplitKind::Test), &cfg.eval)?;
    let (_, train_acc) = epoch_metrics(&model, &prepared.datasets.examples(SplitKind::Train), 0.0)?;
    let row = SweepRow {
        config: *c,
        train_acc: 100.0 * train_acc,
        val_acc: 100.0 * history.best().expect("one epoch").val_acc,
        test_acc: report.accuracy_pct,
        weighted_f1: report.weighted_f1,
        ci_width: report.ci.width,
    };
    write_file(&dir.join("report.csv"), csv_bytes(|b| report.write_summary_csv(b))?)?;
    write_file(&row_path, format!("{SWEEP_HEADER}\n{}\n", row.csv_line()).into_bytes())?;
    ctx.log(format!("{c}: test {:.2}%", row.test_acc));
    Ok(row)
}

fn parse_row(text: &str, c: &ExperimentConfig) -> Option<SweepRow> {
    let line = text.lines().nth(1)?;
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 9 {
        return None;
    }
    let n = |i: usize| f[i].parse::<f64>().ok();
    Some(SweepRow {
        config: *c,
        train_acc: n(4)?,
        val_acc: n(5)?,
        test_acc: n(6)?,
        weighted_f1: n(7)?,
        ci_width: n(8)?,
    })
}

pub fn sweep<T: Real>(ctx: &Ctx, cfg: &RunConfig, out: &Path) -> Result<()> {
    let traces = cfg.load_traces()?;
    create_dir(out)?;
    cfg.write(out)?;
    let ctx = Ctx {
        quiet: ctx.quiet,
        cache: Some(ctx.cache.clone().unwrap_or_else(|| out.join("cache"))),
    };
    let rows: Vec<SweepRow> = enumerate_configs()
        .par_iter()
        .map(|c| sweep_one::<T>(&ctx, cfg, &traces, c, out))
        .collect::<Result<_>>()?;
    write_file(&out.join("sweep.csv"), csv_bytes(|b| write_sweep_csv(&rows, b))?)?;
    ctx.log(format!("{} configurations written to {}", rows.len(), out.join("sweep.csv").display()));
    Ok(())
}
