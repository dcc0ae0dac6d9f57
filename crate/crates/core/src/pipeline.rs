//! End-to-end orchestration: source days, sample, split, fit, evaluate and
//! write the report directory.
//!
//! Days are processed independently (in parallel when enabled); every
//! reduction runs in day order, so the output directory is a function of
//! the configuration, the seed and the input files alone.

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, RunConfig, Source};
use crate::evaluation::{
    self, evaluate_scores, imbalance_histogram, null_model_report, queue_survivor, roc_curve, EvalReport, Histogram,
    ModelId, RocCurve, Survivor,
};
use crate::inference::{
    cv_bandwidth, fit_intercept_only, fit_local_logistic, fit_logistic, lr_test, predict_local, predict_logistic,
    uniform_grid, wald_test, Bandwidth, Coefficient, CvResult, LocalLogisticFit, LogisticFit,
};
use crate::ingest::{
    day_activity, messages_to_events, parse_message_file, parse_orderbook_file, replay, steps_per_message,
    summary_stats, verify_against_snapshots, write_message_file, write_orderbook_file, DayActivity, Level1Row,
    LobsterMessage, SummaryStats,
};
use crate::par::{self, Exec};
use crate::rng::{derive_seed, stream, Purpose};
use crate::sampling::{
    read_samples_csv, sample_day, subsample_day, train_test_split, write_samples_csv, DayStats, SamplePoint,
    SplitDataset,
};
use crate::simulator::{regime_preset, simulate};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Ingest,
    Sample,
    Fit,
    Evaluate,
    Report,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Simulate => "simulate",
            Stage::Ingest => "ingest",
            Stage::Sample => "sample",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{stage}: {locus}: {message}")]
    Data {
        stage: Stage,
        locus: String,
        message: String,
    },
    #[error("{stage}: {locus}: {message}")]
    Numerical {
        stage: Stage,
        locus: String,
        message: String,
    },
    #[error("{}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },
}

impl PipelineError {
    /// Process exit code: 2 config, 3 data or I/O, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data { .. } | PipelineError::Io { .. } => 3,
            PipelineError::Numerical { .. } => 4,
        }
    }
}

fn data_err(stage: Stage, locus: impl Into<String>, e: impl ToString) -> PipelineError {
    PipelineError::Data {
        stage,
        locus: locus.into(),
        message: e.to_string(),
    }
}

fn num_err(stage: Stage, locus: impl Into<String>, e: impl ToString) -> PipelineError {
    PipelineError::Numerical {
        stage,
        locus: locus.into(),
        message: e.to_string(),
    }
}

fn io_err(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files written by a run. Unless committed, everything written is removed
/// when this is dropped, so a failed run leaves no partial artifacts.
pub struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
    created: Vec<PathBuf>,
    committed: bool,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, PipelineError> {
        let mut created = Vec::new();
        let mut p = dir.to_path_buf();
        while !p.as_os_str().is_empty() && !p.exists() {
            created.push(p.clone());
            if !p.pop() {
                break;
            }
        }
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            created,
            committed: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, PipelineError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            if !parent.exists() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                self.created.insert(0, parent.to_path_buf());
            }
        }
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, PipelineError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(&self.dir.join(name), e))?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        // innermost first; only directories this run created
        for d in &self.created {
            let _ = fs::remove_dir(d);
        }
    }
}

/// One instrument-day of raw input.
#[derive(Clone, Debug)]
pub struct DayInput {
    pub instrument: String,
    pub day: String,
    pub messages: Vec<LobsterMessage>,
    pub orderbook: Option<Vec<Level1Row>>,
    pub tick_size: i64,
}

/// A LOBSTER message file and its optional orderbook companion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub instrument: String,
    pub day: String,
    pub message_path: PathBuf,
    pub orderbook_path: Option<PathBuf>,
}

/// Finds `{instrument}_{day}_..._message_*.csv` files, sorted by name.
pub fn discover_inputs(dir: &Path) -> Result<Vec<InputFile>, PipelineError> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv") && n.contains("_message_"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(data_err(
            Stage::Ingest,
            dir.display().to_string(),
            "no *_message_*.csv files",
        ));
    }
    names
        .into_iter()
        .map(|name| {
            let mut parts = name.split('_');
            let (Some(instrument), Some(day)) = (parts.next(), parts.next()) else {
                return Err(data_err(
                    Stage::Ingest,
                    &name,
                    "expected {instrument}_{day}_..._message_N.csv",
                ));
            };
            let book_name = name.replacen("_message_", "_orderbook_", 1);
            let book = dir.join(&book_name);
            Ok(InputFile {
                instrument: instrument.to_string(),
                day: day.to_string(),
                message_path: dir.join(&name),
                orderbook_path: book.is_file().then_some(book),
            })
        })
        .collect()
}

fn load_file(f: &InputFile, tick_size: i64) -> Result<DayInput, PipelineError> {
    let locus = f.message_path.display().to_string();
    let file = fs::File::open(&f.message_path).map_err(|e| io_err(&f.message_path, e))?;
    let messages = parse_message_file(BufReader::new(file)).map_err(|e| data_err(Stage::Ingest, &locus, e))?;
    let orderbook = match &f.orderbook_path {
        Some(p) => {
            let file = fs::File::open(p).map_err(|e| io_err(p, e))?;
            Some(
                parse_orderbook_file(BufReader::new(file))
                    .map_err(|e| data_err(Stage::Ingest, p.display().to_string(), e))?,
            )
        }
        None => None,
    };
    Ok(DayInput {
        instrument: f.instrument.clone(),
        day: f.day.clone(),
        messages,
        orderbook,
        tick_size,
    })
}

pub fn day_label(index: usize) -> String {
    format!("d{:03}", index + 1)
}

/// Simulated day `index` of a preset; its seed is derived from the master.
pub fn simulate_day(preset: &str, master: u64, index: usize) -> Result<(DayInput, Vec<Level1Row>), PipelineError> {
    let cfg = regime_preset(preset)
        .map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))?
        .with_seed(derive_seed(master, Purpose::Simulate, index as u64));
    let out = simulate(&cfg).map_err(|e| data_err(Stage::Simulate, day_label(index), e))?;
    if out.side_depleted {
        warn!(
            "{preset} {}: a side of the book emptied; day ended early",
            day_label(index)
        );
    }
    let rows = out.truth.iter().map(|s| s.level1(cfg.tick_size)).collect();
    Ok((
        DayInput {
            instrument: preset.to_string(),
            day: day_label(index),
            messages: out.messages,
            orderbook: None,
            tick_size: cfg.tick_size,
        },
        rows,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub instrument: String,
    pub day: String,
    pub messages: usize,
    pub hidden_executions: usize,
    pub decomposed_submits: usize,
    /// Rows disagreeing with the orderbook file, when one was supplied.
    pub snapshot_mismatches: Option<usize>,
    pub sampled: usize,
    pub kept: usize,
    pub stats: DayStats,
}

#[derive(Clone, Debug)]
pub struct DayResult {
    pub record: DayRecord,
    pub points: Vec<SamplePoint>,
    pub queues: Vec<(u64, u64)>,
    pub activity: DayActivity,
}

/// Reconstructs one day, checks it against its snapshots, samples it and
/// keeps the per-day subsample.
pub fn process_day(cfg: &RunConfig, index: usize, input: &DayInput) -> Result<DayResult, PipelineError> {
    let locus = format!("{} {}", input.instrument, input.day);
    let conv = messages_to_events(&input.messages, input.tick_size).map_err(|e| data_err(Stage::Ingest, &locus, e))?;
    let steps = replay(&conv.events, input.tick_size).map_err(|e| data_err(Stage::Ingest, &locus, e))?;
    let snapshot_mismatches = match &input.orderbook {
        Some(rows) => {
            let per_msg = steps_per_message(&conv, &steps, &input.messages);
            let bad = verify_against_snapshots(&per_msg, rows, input.tick_size)
                .map_err(|e| data_err(Stage::Ingest, &locus, e))?;
            if let Some(first) = bad.first() {
                warn!(
                    "{locus}: {} snapshot mismatches, first at row {}",
                    bad.len(),
                    first.index + 1
                );
            }
            Some(bad.len())
        }
        None => None,
    };
    let activity = day_activity(&input.messages, &conv, &steps, cfg.window, input.tick_size);
    let mut rng = stream(cfg.seed, Purpose::Sample, index as u64);
    let day = sample_day(&input.instrument, &input.day, &steps, cfg.window, cfg.mode, &mut rng);
    let sampled = day.points.len();
    let mut rng = stream(cfg.seed, Purpose::Subsample, index as u64);
    let day = subsample_day(day, cfg.subsample_n, &mut rng);
    if day.stats.short_day {
        warn!("{locus}: only {sampled} observations, fewer than {}", cfg.subsample_n);
    }
    Ok(DayResult {
        record: DayRecord {
            instrument: input.instrument.clone(),
            day: input.day.clone(),
            messages: input.messages.len(),
            hidden_executions: conv.hidden_executions,
            decomposed_submits: conv.decomposed_submits,
            snapshot_mismatches,
            sampled,
            kept: day.points.len(),
            stats: day.stats,
        },
        points: day.points,
        queues: day.queues,
        activity,
    })
}

/// Provenance of one input file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything the sampling stage produces.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub days: Vec<DayRecord>,
    pub points: Vec<SamplePoint>,
    pub queues: Vec<(u64, u64)>,
    pub summary: Vec<(String, SummaryStats)>,
    pub inputs: Vec<InputDigest>,
}

/// Sources every day (simulated or read), then samples and subsamples it.
pub fn collect_samples(cfg: &RunConfig, exec: Exec) -> Result<SampleSet, PipelineError> {
    let mut inputs = Vec::new();
    let results: Vec<Result<DayResult, PipelineError>> = match &cfg.source {
        Source::Preset(name) => {
            info!("simulating {} {name} days", cfg.days);
            par::map_range(exec, cfg.days, |d| {
                let (input, _) = simulate_day(name, cfg.seed, d)?;
                process_day(cfg, d, &input)
            })
        }
        Source::Lobster(dir) => {
            let files = discover_inputs(dir)?;
            info!("ingesting {} files from {}", files.len(), dir.display());
            for f in &files {
                for p in std::iter::once(&f.message_path).chain(f.orderbook_path.as_ref()) {
                    let bytes = fs::read(p).map_err(|e| io_err(p, e))?;
                    inputs.push(InputDigest {
                        path: p.display().to_string(),
                        sha256: sha256_hex(&bytes),
                    });
                }
            }
            par::map_range(exec, files.len(), |i| {
                process_day(cfg, i, &load_file(&files[i], cfg.tick_size)?)
            })
        }
    };
    let mut days = Vec::with_capacity(results.len());
    let mut points = Vec::new();
    let mut queues = Vec::new();
    let mut activity: Vec<(String, Vec<DayActivity>)> = Vec::new();
    for r in results {
        let r = r?;
        match activity.iter_mut().find(|(k, _)| *k == r.record.instrument) {
            Some((_, v)) => v.push(r.activity),
            None => activity.push((r.record.instrument.clone(), vec![r.activity])),
        }
        points.extend(r.points);
        queues.extend(r.queues);
        days.push(r.record);
    }
    let mut summary = Vec::new();
    for (instrument, acts) in activity {
        match summary_stats(&acts) {
            Ok(s) => summary.push((instrument, s)),
            Err(e) => warn!("{instrument}: no summary ({e})"),
        }
    }
    Ok(SampleSet {
        days,
        points,
        queues,
        summary,
        inputs,
    })
}

pub fn split_samples(cfg: &RunConfig, points: &[SamplePoint]) -> Result<SplitDataset, PipelineError> {
    let mut rng = stream(cfg.seed, Purpose::Split, 0);
    train_test_split(points, cfg.train_fraction, cfg.seed, &mut rng)
        .map_err(|e| data_err(Stage::Sample, "pooled samples", e))
}

/// Local fit together with its bandwidth selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub cv: CvResult,
    pub fit: LocalLogisticFit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitSet {
    pub logistic: Option<LogisticFit>,
    pub intercept_only: Option<LogisticFit>,
    pub local: Option<LocalModel>,
}

fn columns(points: &[SamplePoint]) -> (Vec<f64>, Vec<u8>) {
    (
        points.iter().map(|p| p.imbalance).collect(),
        points.iter().map(|p| p.y).collect(),
    )
}

pub fn dataset_ref(points: &[SamplePoint]) -> String {
    format!("sha256:{}", sha256_hex(write_samples_csv(points).as_bytes()))
}

pub fn fit_models(cfg: &RunConfig, train: &[SamplePoint], exec: Exec) -> Result<FitSet, PipelineError> {
    let (xs, ys) = columns(train);
    let locus = "training set";
    let mut fits = FitSet::default();
    if cfg.models.contains(&ModelId::Logistic) {
        let fit = fit_logistic(&xs, &ys).map_err(|e| num_err(Stage::Fit, locus, e))?;
        if fit.separated {
            warn!("logistic fit is separated; standard errors suppressed");
        }
        fits.logistic = Some(fit);
        fits.intercept_only = Some(fit_intercept_only(&ys).map_err(|e| num_err(Stage::Fit, locus, e))?);
    }
    if cfg.models.contains(&ModelId::Local) {
        let grid = uniform_grid(cfg.grid_points);
        let mut rng = stream(cfg.seed, Purpose::CrossValidation, 0);
        let cv = cv_bandwidth(&xs, &ys, &cfg.alpha_candidates, cfg.cv_folds, &grid, &mut rng, exec)
            .map_err(|e| num_err(Stage::Fit, "cross-validation", e))?;
        info!("cross-validated bandwidth {}", cv.selected);
        let mut fit = fit_local_logistic(&xs, &ys, Bandwidth::NearestNeighbor(cv.selected), &grid, exec)
            .map_err(|e| num_err(Stage::Fit, locus, e))?;
        if !fit.degenerate.is_empty() {
            warn!("{} grid points had degenerate neighbourhoods", fit.degenerate.len());
        }
        fit.train_ref = dataset_ref(train);
        fits.local = Some(LocalModel { cv, fit });
    }
    Ok(fits)
}

/// ROC curves of one model on both splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRoc {
    pub model_id: ModelId,
    pub train: RocCurve,
    pub test: RocCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reports: Vec<EvalReport>,
    pub rocs: Vec<ModelRoc>,
}

pub fn evaluate_models(cfg: &RunConfig, fits: &FitSet, split: &SplitDataset) -> Result<Evaluation, PipelineError> {
    let (tx, ty) = columns(&split.train);
    let (vx, vy) = columns(&split.test);
    let mut reports = Vec::new();
    let mut rocs = Vec::new();
    for &model in &cfg.models {
        let locus = model.as_str();
        let missing = || num_err(Stage::Evaluate, locus, "model was not fitted");
        let eval_err = |e: evaluation::EvalError| num_err(Stage::Evaluate, locus, e);
        let score = |f: &dyn Fn(f64) -> Result<f64, PipelineError>, xs: &[f64]| -> Result<Vec<f64>, PipelineError> {
            xs.iter().map(|&x| f(x)).collect()
        };
        let (train_scores, test_scores) = match model {
            ModelId::Null => {
                reports.push(null_model_report(&ty, &vy).map_err(eval_err)?);
                continue;
            }
            ModelId::Logistic => {
                let fit = fits.logistic.as_ref().ok_or_else(missing)?;
                let f = |x| Ok(predict_logistic(fit, x));
                (score(&f, &tx)?, score(&f, &vx)?)
            }
            ModelId::Local => {
                let fit = &fits.local.as_ref().ok_or_else(missing)?.fit;
                let f = |x| predict_local(fit, x).map_err(|e| num_err(Stage::Evaluate, locus, e));
                (score(&f, &tx)?, score(&f, &vx)?)
            }
        };
        let mut report = evaluate_scores(model, (&train_scores, &ty), (&test_scores, &vy)).map_err(eval_err)?;
        if model == ModelId::Logistic {
            let fit = fits.logistic.as_ref().ok_or_else(missing)?;
            report.wald_x0 = wald_test(fit, Coefficient::Intercept).ok();
            report.wald_x1 = wald_test(fit, Coefficient::Slope).ok();
            if let Some(nested) = &fits.intercept_only {
                report.lr_full = Some(lr_test(fit, nested).map_err(|e| num_err(Stage::Evaluate, locus, e))?);
            }
        }
        rocs.push(ModelRoc {
            model_id: model,
            train: roc_curve(&train_scores, &ty).map_err(eval_err)?,
            test: roc_curve(&test_scores, &vy).map_err(eval_err)?,
        });
        reports.push(report);
    }
    Ok(Evaluation { reports, rocs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
    pub config: String,
    pub inputs: Vec<InputDigest>,
    pub train_ref: String,
    pub test_ref: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub fits: FitSet,
    pub reports: Vec<EvalReport>,
}

/// The resolved config as written beside the outputs. The output directory
/// is left out so that identical runs into different places agree.
pub fn resolved_config(cfg: &RunConfig) -> String {
    cfg.to_kv()
        .lines()
        .filter(|l| !l.starts_with("out ="))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn provenance(cfg: &RunConfig, inputs: &[InputDigest], split: &SplitDataset) -> Provenance {
    Provenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: resolved_config(cfg),
        inputs: inputs.to_vec(),
        train_ref: dataset_ref(&split.train),
        test_ref: dataset_ref(&split.test),
    }
}

fn fmt_coef(est: f64, se: Option<f64>) -> String {
    match se {
        Some(se) => format!("{est:.4} ({se:.4})"),
        None => format!("{est:.4} (-)"),
    }
}

fn fmt_test(t: &Option<crate::stats::TestResult>) -> String {
    match t {
        Some(t) => format!("{:.2}{}", t.statistic, t.stars()),
        None => "-".to_string(),
    }
}

/// Aligned text table of coefficients, tests and scores.
pub fn render_table(report: &RunReport) -> String {
    let header = [
        "model", "x0 (se)", "x1 (se)", "wald x0", "wald x1", "lr", "auc in", "auc out", "msr in", "msr out",
    ];
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &report.reports {
        let (c0, c1) = match (r.model_id, &report.fits.logistic, &report.fits.local) {
            (ModelId::Logistic, Some(f), _) => (fmt_coef(f.x0, f.se0), fmt_coef(f.x1, f.se1)),
            (ModelId::Local, _, Some(l)) => ("-".into(), format!("alpha {}", l.cv.selected)),
            _ => ("-".into(), "-".into()),
        };
        rows.push(vec![
            r.model_id.as_str().to_string(),
            c0,
            c1,
            fmt_test(&r.wald_x0),
            fmt_test(&r.wald_x1),
            fmt_test(&r.lr_full),
            format!("{:.4}", r.auc_in),
            format!("{:.4}", r.auc_out),
            format!("{:.4}", r.msr_in),
            format!("{:.4}", r.msr_out),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    let n = report.reports.first().map_or((0, 0), |r| (r.n_train, r.n_test));
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "n_train = {}, n_test = {}, seed = {}",
        n.0, n.1, report.provenance.seed
    );
    let _ = writeln!(out, "* chi-square(1) statistic >= 3.84, ** >= 6.63");
    out
}

fn roc_csv(roc: &ModelRoc) -> String {
    let mut s = String::from("split,false_pos,true_pos,fpr,tpr\n");
    for (name, curve) in [("train", &roc.train), ("test", &roc.test)] {
        for (v, (x, y)) in curve.vertices.iter().zip(curve.points()) {
            let _ = writeln!(s, "{name},{},{},{x},{y}", v.false_pos, v.true_pos);
        }
    }
    s
}

fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("lo,hi,count\n");
    let w = h.bin_width();
    for (i, c) in h.counts.iter().enumerate() {
        let lo = h.lo + i as f64 * w;
        let hi = if i + 1 == h.counts.len() {
            h.hi
        } else {
            h.lo + (i + 1) as f64 * w
        };
        let _ = writeln!(s, "{lo},{hi},{c}");
    }
    s
}

fn survivor_csv(sv: &Survivor) -> String {
    let mut s = String::from("length,survivor\n");
    for (v, p) in sv.points() {
        let _ = writeln!(s, "{v},{p}");
    }
    s
}

fn local_csv(fit: &LocalLogisticFit) -> String {
    let mut s = String::from("grid,fitted\n");
    for (g, p) in fit.grid.iter().zip(&fit.fitted) {
        let _ = writeln!(s, "{g},{p}");
    }
    s
}

fn days_csv(days: &[DayRecord]) -> String {
    let mut s = String::from(
        "instrument,day,messages,hidden_executions,decomposed_submits,snapshot_mismatches,mid_changes,sampled,kept,one_sided_skipped,empty_intervals,event_fallbacks,trailing_dropped,short_day\n",
    );
    for d in days {
        let st = &d.stats;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            d.instrument,
            d.day,
            d.messages,
            d.hidden_executions,
            d.decomposed_submits,
            d.snapshot_mismatches.map_or(String::new(), |m| m.to_string()),
            st.mid_changes,
            d.sampled,
            d.kept,
            st.one_sided_skipped,
            st.empty_intervals,
            st.event_fallbacks,
            st.trailing_dropped,
            st.short_day,
        );
    }
    s
}

/// Writes the sampling-stage artifacts.
pub fn write_samples(
    art: &mut Artifacts,
    cfg: &RunConfig,
    set: &SampleSet,
    split: &SplitDataset,
) -> Result<(), PipelineError> {
    art.write("config.resolved", resolved_config(cfg))?;
    art.write("samples.csv", write_samples_csv(&set.points))?;
    art.write("train.csv", write_samples_csv(&split.train))?;
    art.write("test.csv", write_samples_csv(&split.test))?;
    art.write("days.csv", days_csv(&set.days))?;
    let summary: Vec<_> = set
        .summary
        .iter()
        .map(|(k, v)| serde_json::json!({ "instrument": k, "stats": v }))
        .collect();
    art.write_json("summary.json", &summary)?;
    art.write_json("inputs.json", &set.inputs)?;
    let imbalances: Vec<f64> = set.points.iter().map(|p| p.imbalance).collect();
    let hist =
        imbalance_histogram(&imbalances, cfg.histogram_bins).map_err(|e| num_err(Stage::Sample, "histogram", e))?;
    art.write("histogram.csv", histogram_csv(&hist))?;
    let lengths: Vec<u64> = set.queues.iter().flat_map(|&(b, a)| [b, a]).collect();
    if let Ok(sv) = queue_survivor(&lengths) {
        art.write("survivor.csv", survivor_csv(&sv))?;
    }
    Ok(())
}

pub fn write_fits(art: &mut Artifacts, fits: &FitSet) -> Result<(), PipelineError> {
    art.write_json("fits.json", fits)?;
    if let Some(local) = &fits.local {
        art.write("local.csv", local_csv(&local.fit))?;
    }
    Ok(())
}

pub fn write_evaluation(art: &mut Artifacts, ev: &Evaluation) -> Result<(), PipelineError> {
    art.write_json("evaluation.json", &ev.reports)?;
    for roc in &ev.rocs {
        art.write(&format!("roc_{}.csv", roc.model_id.as_str()), roc_csv(roc))?;
    }
    Ok(())
}

pub fn write_report(art: &mut Artifacts, report: &RunReport) -> Result<(), PipelineError> {
    art.write_json("report.json", report)?;
    art.write("report.txt", render_table(report))?;
    Ok(())
}

/// In-memory result of a full run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub samples: SampleSet,
    pub split: SplitDataset,
    pub fits: FitSet,
    pub evaluation: Evaluation,
    pub report: RunReport,
    pub files: Vec<PathBuf>,
}

/// Runs every stage and writes the report directory `cfg.out`.
pub fn run_pipeline(cfg: &RunConfig, exec: Exec) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    let mut art = Artifacts::create(&cfg.out)?;
    let samples = collect_samples(cfg, exec)?;
    info!(
        "{} observations pooled from {} days",
        samples.points.len(),
        samples.days.len()
    );
    let split = split_samples(cfg, &samples.points)?;
    write_samples(&mut art, cfg, &samples, &split)?;
    let fits = fit_models(cfg, &split.train, exec)?;
    write_fits(&mut art, &fits)?;
    let evaluation = evaluate_models(cfg, &fits, &split)?;
    write_evaluation(&mut art, &evaluation)?;
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        provenance: provenance(cfg, &samples.inputs, &split),
        fits: fits.clone(),
        reports: evaluation.reports.clone(),
    };
    write_report(&mut art, &report)?;
    let files = art.commit();
    Ok(RunOutcome {
        samples,
        split,
        fits,
        evaluation,
        report,
        files,
    })
}

/// Writes simulated days as LOBSTER message and orderbook files.
pub fn write_simulated_days(cfg: &RunConfig, exec: Exec) -> Result<Vec<PathBuf>, PipelineError> {
    cfg.validate()?;
    let Source::Preset(name) = &cfg.source else {
        return Err(ConfigError::Invalid("simulate needs a preset".into()).into());
    };
    let mut art = Artifacts::create(&cfg.out)?;
    art.write("config.resolved", resolved_config(cfg))?;
    for chunk_start in (0..cfg.days).step_by(16) {
        let chunk: Vec<usize> = (chunk_start..cfg.days.min(chunk_start + 16)).collect();
        let files = par::map_slice(exec, &chunk, |&d| {
            simulate_day(name, cfg.seed, d).map(|(input, rows)| {
                (
                    input.day,
                    write_message_file(&input.messages),
                    write_orderbook_file(&rows),
                )
            })
        });
        for f in files {
            let (day, msgs, book) = f?;
            art.write(&format!("data/{name}_{day}_message_1.csv"), msgs)?;
            art.write(&format!("data/{name}_{day}_orderbook_1.csv"), book)?;
        }
    }
    Ok(art.commit())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub days: Vec<DayRecord>,
    pub summary: Vec<(String, SummaryStats)>,
    pub inputs: Vec<InputDigest>,
}

/// Ingest-only stage: reconstruction, verification and summary statistics.
pub fn run_ingest(cfg: &RunConfig, exec: Exec) -> Result<IngestReport, PipelineError> {
    cfg.validate()?;
    if !matches!(cfg.source, Source::Lobster(_)) {
        return Err(ConfigError::Invalid("ingest needs data_dir".into()).into());
    }
    let mut art = Artifacts::create(&cfg.out)?;
    let set = collect_samples(cfg, exec)?;
    let report = IngestReport {
        days: set.days.clone(),
        summary: set.summary.clone(),
        inputs: set.inputs.clone(),
    };
    art.write("config.resolved", resolved_config(cfg))?;
    art.write("days.csv", days_csv(&set.days))?;
    art.write_json("ingest.json", &report)?;
    art.commit();
    Ok(report)
}

/// Sampling stage on its own: writes samples, split and descriptives.
pub fn run_sample(cfg: &RunConfig, exec: Exec) -> Result<(SampleSet, SplitDataset), PipelineError> {
    cfg.validate()?;
    let mut art = Artifacts::create(&cfg.out)?;
    let set = collect_samples(cfg, exec)?;
    let split = split_samples(cfg, &set.points)?;
    write_samples(&mut art, cfg, &set, &split)?;
    art.commit();
    Ok((set, split))
}

fn read_points(path: &Path, stage: Stage) -> Result<Vec<SamplePoint>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    read_samples_csv(&text).map_err(|e| data_err(stage, path.display().to_string(), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: Stage) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| data_err(stage, path.display().to_string(), e))
}

fn read_split(cfg: &RunConfig, stage: Stage) -> Result<SplitDataset, PipelineError> {
    Ok(SplitDataset {
        train: read_points(&cfg.out.join("train.csv"), stage)?,
        test: read_points(&cfg.out.join("test.csv"), stage)?,
        seed: cfg.seed,
    })
}

/// Fit stage: reads `train.csv` from the output directory.
pub fn run_fit(cfg: &RunConfig, exec: Exec) -> Result<FitSet, PipelineError> {
    cfg.validate()?;
    let train = read_points(&cfg.out.join("train.csv"), Stage::Fit)?;
    let fits = fit_models(cfg, &train, exec)?;
    let mut art = Artifacts::create(&cfg.out)?;
    write_fits(&mut art, &fits)?;
    art.commit();
    Ok(fits)
}

/// Evaluate stage: reads the split and `fits.json`.
pub fn run_evaluate(cfg: &RunConfig) -> Result<Evaluation, PipelineError> {
    cfg.validate()?;
    let split = read_split(cfg, Stage::Evaluate)?;
    let fits: FitSet = read_json(&cfg.out.join("fits.json"), Stage::Evaluate)?;
    let ev = evaluate_models(cfg, &fits, &split)?;
    let mut art = Artifacts::create(&cfg.out)?;
    write_evaluation(&mut art, &ev)?;
    art.commit();
    Ok(ev)
}

/// Report stage: assembles `report.json` and `report.txt`.
pub fn run_report(cfg: &RunConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let split = read_split(cfg, Stage::Report)?;
    let fits: FitSet = read_json(&cfg.out.join("fits.json"), Stage::Report)?;
    let reports: Vec<EvalReport> = read_json(&cfg.out.join("evaluation.json"), Stage::Report)?;
    if reports.is_empty() {
        return Err(data_err(Stage::Report, "evaluation.json", "no reports"));
    }
    let inputs: Vec<InputDigest> = match fs::read_to_string(cfg.out.join("inputs.json")) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| data_err(Stage::Report, "inputs.json", e))?,
        Err(_) => Vec::new(),
    };
    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        provenance: provenance(cfg, &inputs, &split),
        fits,
        reports,
    };
    let mut art = Artifacts::create(&cfg.out)?;
    write_report(&mut art, &report)?;
    art.commit();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config(ConfigError::Invalid("x".into())).exit_code(), 2);
        assert_eq!(data_err(Stage::Ingest, "f", "bad").exit_code(), 3);
        assert_eq!(num_err(Stage::Fit, "f", "bad").exit_code(), 4);
    }

    #[test]
    fn uncommitted_artifacts_are_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("a/b");
        {
            let mut art = Artifacts::create(&dir).unwrap();
            art.write("x.txt", "1").unwrap();
            art.write("sub/y.txt", "2").unwrap();
        }
        assert!(!tmp.path().join("a").exists());
        let mut art = Artifacts::create(&dir).unwrap();
        art.write("x.txt", "1").unwrap();
        art.commit();
        assert!(dir.join("x.txt").is_file());
    }

    #[test]
    fn stars_in_table() {
        let t = |w| Some(crate::stats::TestResult::chi2_1(w));
        let r = EvalReport {
            schema_version: 1,
            model_id: ModelId::Null,
            auc_in: 0.5,
            auc_out: 0.5,
            msr_in: 0.25,
            msr_out: 0.25,
            wald_x0: t(7.0),
            wald_x1: t(4.0),
            lr_full: t(1.0),
            n_train: 8,
            n_test: 2,
        };
        let report = RunReport {
            schema_version: 1,
            provenance: Provenance {
                tool_version: "0".into(),
                seed: 1,
                config: String::new(),
                inputs: vec![],
                train_ref: String::new(),
                test_ref: String::new(),
            },
            fits: FitSet::default(),
            reports: vec![r],
        };
        let table = render_table(&report);
        let row = table.lines().nth(1).unwrap();
        assert!(row.contains("7.00**") && row.contains("4.00*") && row.contains("1.00"));
        assert!(!row.contains("1.00*"));
    }
}
