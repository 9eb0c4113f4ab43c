use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, majority_vote, MetricsReport};
use crate::backbone::{attach_heads, build, Checkpoint, CheckpointMeta, Depth, Network};
use crate::config::ExperimentConfig;
use crate::cotuning::{
    calibrate, fit, predict, relationship_direct, relationship_reverse, source_probabilities, CategoryRelationship, Dataset,
    FitOutcome, Mode, RelationshipMethod,
};
use crate::ingest::{SplitPlan, Task};
use crate::pipeline::{load_corpus, prepare_fold, split_plan, task_units, PreparedFold};
use crate::{Error, Result};

/// Version of the results CSV layout.
pub const RESULTS_SCHEMA: u32 = 1;

/// One fold × run of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema: u32,
    pub config_hash: String,
    pub name: String,
    pub task: Task,
    pub mode: Mode,
    pub depth: Depth,
    pub fold: usize,
    pub run: usize,
    pub run_seed: u64,
    pub n_units: usize,
    pub se: f64,
    pub sp: f64,
    pub score: f64,
    pub hs: f64,
    pub accuracy: f64,
    /// Crackle precision, recall and F1 (crackle task only).
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Normal/abnormal scores of a multi-class task.
    pub binary_se: Option<f64>,
    pub binary_sp: Option<f64>,
    pub binary_score: Option<f64>,
    pub binary_hs: Option<f64>,
    pub best_epoch: usize,
    pub checkpoint: String,
}

impl ResultRow {
    fn key(&self) -> (String, usize, usize) {
        (self.config_hash.clone(), self.fold, self.run)
    }
}

/// Mean and sample standard deviation over the runs of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub name: String,
    pub task: Task,
    pub mode: Mode,
    pub depth: Depth,
    pub n: usize,
    pub score_mean: f64,
    pub score_std: f64,
    pub se_mean: f64,
    pub se_std: f64,
    pub sp_mean: f64,
    pub sp_std: f64,
    pub hs_mean: f64,
    pub hs_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Aggregate result rows per cell, in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(&r.config_hash) {
            order.push(r.config_hash.clone());
        }
        groups.entry(r.config_hash.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|h| {
            let g = &groups[&h];
            let col = |f: fn(&ResultRow) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (score_mean, score_std) = col(|r| r.score);
            let (se_mean, se_std) = col(|r| r.se);
            let (sp_mean, sp_std) = col(|r| r.sp);
            let (hs_mean, hs_std) = col(|r| r.hs);
            SummaryRow {
                config_hash: h.clone(),
                name: g[0].name.clone(),
                task: g[0].task,
                mode: g[0].mode,
                depth: g[0].depth,
                n: g.len(),
                score_mean,
                score_std,
                se_mean,
                se_std,
                sp_mean,
                sp_std,
                hs_mean,
                hs_std,
            }
        })
        .collect()
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows: Vec<ResultRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = rows.iter().find(|r| r.schema != RESULTS_SCHEMA) {
        return Err(Error::Data(format!("{}: results schema {} is not {RESULTS_SCHEMA}", path.display(), bad.schema)));
    }
    Ok(rows)
}

/// Append one row, writing the header when the file is new.
pub fn append_result(path: &Path, row: &ResultRow) -> Result<()> {
    let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Seed of one run, derived from the experiment seed.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    seed.wrapping_add((run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Unit-level scores from segment probabilities: segments vote per unit,
/// and for multi-class tasks the normal/abnormal collapse happens on the
/// segment labels before voting.
pub fn evaluate_units(probs: &Array2<f64>, data: &Dataset, task: Task) -> Result<(MetricsReport, Option<MetricsReport>)> {
    let mut units: Vec<(&str, usize, Vec<usize>)> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, e) in data.examples.iter().enumerate() {
        let slot = *index.entry(e.unit.as_str()).or_insert_with(|| {
            units.push((e.unit.as_str(), e.label, Vec::new()));
            units.len() - 1
        });
        units[slot].2.push(i);
    }
    let vote = |collapse: bool| -> Result<(Vec<usize>, Vec<usize>)> {
        let mut preds = Vec::with_capacity(units.len());
        let mut labels = Vec::with_capacity(units.len());
        for (_, label, idx) in &units {
            let full: Vec<Vec<f64>> = idx.iter().map(|&i| probs.row(i).to_vec()).collect();
            let mut seg: Vec<usize> = full.iter().map(|p| crate::cotuning::argmax(p)).collect();
            let rows = if collapse {
                seg.iter_mut().for_each(|s| *s = usize::from(*s > 0));
                full.iter().map(|p| vec![p[0], 1.0 - p[0]]).collect()
            } else {
                full
            };
            preds.push(majority_vote(&seg, &rows)?);
            labels.push(if collapse { usize::from(*label > 0) } else { *label });
        }
        Ok((preds, labels))
    };
    let (p, y) = vote(false)?;
    let report = compute_metrics(&p, &y, task)?;
    let binary = match task.binary_counterpart() {
        Some(b) => {
            let (p, y) = vote(true)?;
            Some(compute_metrics(&p, &y, b)?)
        }
        None => None,
    };
    Ok((report, binary))
}

/// What [`run_experiment`] should do for cells without a result row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Train cells that have no checkpoint yet.
    pub train: bool,
    /// Score checkpoints on their test units.
    pub evaluate: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { train: true, evaluate: true }
    }
}

/// Output locations of an experiment.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn checkpoint(&self, hash: &str, fold: usize, run: usize) -> PathBuf {
        self.root.join("checkpoints").join(hash).join(format!("fold{fold}_run{run}.safetensors"))
    }

    pub fn history(&self, hash: &str, fold: usize, run: usize) -> PathBuf {
        self.root.join("history").join(hash).join(format!("fold{fold}_run{run}.csv"))
    }

    pub fn relationship(&self, hash: &str, fold: usize, run: usize) -> PathBuf {
        self.root.join("relationships").join(hash).join(format!("fold{fold}_run{run}.json"))
    }

    pub fn calibration(&self, fold: usize) -> PathBuf {
        self.root.join("calibration").join(format!("fold{fold}.json"))
    }

    pub fn config(&self, hash: &str) -> PathBuf {
        self.root.join("configs").join(format!("{hash}.toml"))
    }
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(d) = p.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    Ok(())
}

/// Estimate the category relationship from frozen source predictions on
/// the validation set (the training set if validation misses a class).
pub fn estimate_relationship(net: &mut Network, cell: &ExperimentConfig, prepared: &PreparedFold) -> Result<CategoryRelationship> {
    let t = net.source_temperature.unwrap_or(cell.cotuning.temperature);
    let n = cell.task.n_classes();
    let run = |data: &Dataset, net: &mut Network| -> Result<CategoryRelationship> {
        let probs = source_probabilities(net, data, t)?;
        let labels = data.labels();
        match cell.cotuning.relationship {
            RelationshipMethod::Direct => relationship_direct(&probs.view(), &labels, n),
            RelationshipMethod::Reverse => {
                relationship_reverse(&probs.view(), &labels, n, cell.cotuning.source_prior.as_deref(), cell.cotuning.reverse)
            }
        }
    };
    let mut rel = match run(&prepared.validation, net) {
        Err(Error::MissingClassSamples(c)) => {
            log::warn!("validation split has no class {c}; estimating the relationship on training data");
            run(&prepared.train, net)?
        }
        other => other?,
    };
    rel.calibration_temperature = t;
    rel.config_hash = cell.hash();
    Ok(rel)
}

/// Temperature of the target head on validation data, if it can be fit.
pub fn target_temperature(net: &mut Network, val: &Dataset) -> Option<f64> {
    let probs = predict(net, val, 32).ok()?;
    let log_probs = probs.mapv(|p| p.max(1e-300).ln());
    match calibrate(&log_probs.view(), &val.labels()) {
        Ok(t) => Some(t),
        Err(e) => {
            log::warn!("no target temperature: {e}");
            None
        }
    }
}

/// Everything produced by training one run.
pub struct TrainedRun {
    pub network: Network,
    pub outcome: FitOutcome,
    pub relationship: Option<CategoryRelationship>,
    pub checkpoint: Checkpoint,
}

/// Build, fine-tune and package one run of one cell.
pub fn train_run(cell: &ExperimentConfig, prepared: &PreparedFold, split: &SplitPlan, run: usize) -> Result<TrainedRun> {
    let seed = run_seed(cell.seed, run);
    let spec = crate::backbone::BackboneSpec { seed, ..cell.backbone.clone() };
    let mode = cell.train.mode;
    let mut net = attach_heads(build(&spec)?, None, cell.task.n_classes(), mode, seed)?;
    let relationship = if mode.uses_cotuning() { Some(estimate_relationship(&mut net, cell, prepared)?) } else { None };
    let train_cfg = crate::cotuning::TrainConfig { seed, ..cell.train.clone() };
    let outcome = fit(&mut net, &prepared.train, &prepared.validation, &train_cfg, relationship.as_ref())?;
    let mut meta = CheckpointMeta::describe(&net, cell.task.as_str());
    meta.temperature = target_temperature(&mut net, &prepared.validation);
    meta.norm_stats = Some(prepared.norm_stats);
    meta.config_hash = cell.hash();
    meta.split_fingerprint = split.fingerprint();
    meta.fold = Some(prepared.fold);
    meta.run = Some(run);
    meta.epoch = outcome.best_epoch;
    let checkpoint = net.checkpoint(meta);
    Ok(TrainedRun { network: net, outcome, relationship, checkpoint })
}

fn row_for(cell: &ExperimentConfig, fold: usize, run: usize, best_epoch: usize, ck: &Path, report: &MetricsReport, binary: Option<&MetricsReport>) -> ResultRow {
    let m = &report.metrics;
    ResultRow {
        schema: RESULTS_SCHEMA,
        config_hash: cell.hash(),
        name: cell.name.clone(),
        task: cell.task,
        mode: cell.train.mode,
        depth: cell.backbone.depth,
        fold,
        run,
        run_seed: run_seed(cell.seed, run),
        n_units: report.n_units,
        se: m.se,
        sp: m.sp,
        score: m.score,
        hs: m.hs,
        accuracy: m.accuracy,
        precision: report.positive.map(|p| p.precision),
        recall: report.positive.map(|p| p.recall),
        f1: report.positive.map(|p| p.f1),
        binary_se: binary.map(|b| b.metrics.se),
        binary_sp: binary.map(|b| b.metrics.sp),
        binary_score: binary.map(|b| b.metrics.score),
        binary_hs: binary.map(|b| b.metrics.hs),
        best_epoch,
        checkpoint: ck.display().to_string(),
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Every row in the results file, including earlier ones.
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    /// Rows added by this call.
    pub new_rows: usize,
}

/// Run every fold × run of every grid cell. Finished rows are skipped, and
/// existing checkpoints are evaluated instead of retrained, so an
/// interrupted experiment resumes where it stopped.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ExperimentOutcome> {
    let layout = Layout { root: cfg.output_dir.clone() };
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    let (corpus, official) = load_corpus(cfg)?;
    let units = task_units(&corpus, cfg.task)?;
    let plan = split_plan(cfg, &corpus, official.as_ref())?;
    let mut done: BTreeSet<(String, usize, usize)> = read_results(&layout.results())?.iter().map(ResultRow::key).collect();
    let folds: Vec<usize> = if cfg.grid.folds.is_empty() { (0..plan.folds.len()).collect() } else { cfg.grid.folds.clone() };
    let cells: Vec<ExperimentConfig> =
        cfg.modes().into_iter().flat_map(|m| cfg.depths().into_iter().map(move |d| (m, d))).map(|(m, d)| cfg.cell(m, d)).collect();
    for cell in &cells {
        let p = layout.config(&cell.hash());
        ensure_parent(&p)?;
        fs::write(&p, cell.to_toml()).map_err(|e| Error::io(&p, e))?;
    }
    let mut new_rows = 0;
    for &f in &folds {
        let fold = plan
            .folds
            .get(f)
            .ok_or_else(|| Error::Config(format!("fold {f} does not exist; the split has {}", plan.folds.len())))?;
        let mut prepared: Option<PreparedFold> = None;
        for cell in &cells {
            let hash = cell.hash();
            for run in 0..cfg.n_runs {
                if done.contains(&(hash.clone(), f, run)) {
                    continue;
                }
                let ctx = |e: Error| Error::InRun { fold: f, run, source: Box::new(e) };
                if prepared.is_none() {
                    let p = prepare_fold(cfg, &corpus, &units, fold).map_err(ctx)?;
                    let cp = layout.calibration(f);
                    ensure_parent(&cp)?;
                    p.calibration.save(&cp)?;
                    prepared = Some(p);
                }
                let prep = prepared.as_ref().expect("prepared above");
                let ck_path = layout.checkpoint(&hash, f, run);
                let (mut net, best_epoch) = if ck_path.exists() {
                    let ck = Checkpoint::load(&ck_path)?;
                    if ck.meta.config_hash != hash {
                        return Err(ctx(Error::CheckpointMismatch(format!("{} was written by config {}", ck_path.display(), ck.meta.config_hash))));
                    }
                    (Network::from_checkpoint(&ck)?, ck.meta.epoch)
                } else if opts.train {
                    log::info!("training {} {} fold {f} run {run}", cell.train.mode, cell.backbone.depth);
                    let trained = train_run(cell, prep, &plan, run).map_err(ctx)?;
                    ensure_parent(&ck_path)?;
                    trained.checkpoint.save(&ck_path)?;
                    let hp = layout.history(&hash, f, run);
                    ensure_parent(&hp)?;
                    trained.outcome.history.write_csv(&hp)?;
                    if let Some(rel) = &trained.relationship {
                        let rp = layout.relationship(&hash, f, run);
                        ensure_parent(&rp)?;
                        rel.save(&rp)?;
                    }
                    (trained.network, trained.outcome.best_epoch)
                } else {
                    return Err(ctx(Error::CheckpointMismatch(format!("no checkpoint at {}", ck_path.display()))));
                };
                if !opts.evaluate {
                    continue;
                }
                let probs = predict(&mut net, &prep.test, cell.train.batch_size).map_err(ctx)?;
                let (report, binary) = evaluate_units(&probs, &prep.test, cell.task).map_err(ctx)?;
                let row = row_for(cell, f, run, best_epoch, &ck_path, &report, binary.as_ref());
                log::info!("{} {} fold {f} run {run}: AS {:.4}", row.mode, row.depth, row.score);
                append_result(&layout.results(), &row)?;
                done.insert(row.key());
                new_rows += 1;
            }
        }
    }
    let rows = read_results(&layout.results())?;
    let summary = summarize(&rows);
    if !summary.is_empty() {
        write_summary(&layout.summary(), &summary)?;
    }
    Ok(ExperimentOutcome { rows, summary, new_rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(hash: &str, run: usize, score: f64) -> ResultRow {
        ResultRow {
            schema: RESULTS_SCHEMA,
            config_hash: hash.into(),
            name: "t".into(),
            task: Task::Crackle2,
            mode: Mode::Stochnorm,
            depth: Depth::R34,
            fold: 0,
            run,
            run_seed: 1,
            n_units: 10,
            se: score,
            sp: score,
            score,
            hs: score,
            accuracy: score,
            precision: Some(0.5),
            recall: None,
            f1: None,
            binary_se: None,
            binary_sp: None,
            binary_score: None,
            binary_hs: None,
            best_epoch: 3,
            checkpoint: "c".into(),
        }
    }

    #[test]
    fn results_append_and_summarize() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        for (h, r, s) in [("a", 0, 0.5), ("a", 1, 0.7), ("b", 0, 0.9)] {
            append_result(&p, &row(h, r, s)).unwrap();
        }
        let rows = read_results(&p).unwrap();
        assert_eq!(rows, vec![row("a", 0, 0.5), row("a", 1, 0.7), row("b", 0, 0.9)]);
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert!((s[0].score_mean - 0.6).abs() < 1e-12);
        assert!((s[0].score_std - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!((s[1].n, s[1].score_std), (1, 0.0));
        let sp = dir.path().join("s.csv");
        write_summary(&sp, &s).unwrap();
        assert_eq!(read_summary(&sp).unwrap(), s);
    }

    #[test]
    fn voting_and_binary_collapse() {
        use crate::cotuning::Example;
        use crate::features::{InputLayout, LogMelFeature, Provenance};
        let ex = |unit: &str, label| Example {
            id: String::new(),
            unit: unit.into(),
            feature: LogMelFeature { values: Array2::zeros((1, 1)), normalized: true, provenance: Provenance::default() },
            label,
        };
        let data = Dataset {
            examples: vec![ex("u1", 1), ex("u1", 1), ex("u1", 1), ex("u2", 0), ex("u2", 0)],
            layout: InputLayout::Replicate3,
            n_classes: 4,
        };
        // u1 segments say wheeze, wheeze, crackle: wrong class, but abnormal
        let probs = ndarray::arr2(&[
            [0.1, 0.2, 0.7, 0.0],
            [0.1, 0.2, 0.7, 0.0],
            [0.1, 0.8, 0.1, 0.0],
            [0.9, 0.1, 0.0, 0.0],
            [0.2, 0.0, 0.0, 0.8],
        ]);
        let (r, b) = evaluate_units(&probs, &data, Task::Alsc4).unwrap();
        assert_eq!(r.n_units, 2);
        assert_eq!((r.metrics.se, r.metrics.sp), (0.0, 1.0));
        let b = b.unwrap();
        assert_eq!(b.task, Task::Alsc2);
        assert_eq!((b.metrics.se, b.metrics.sp), (1.0, 1.0));
    }
}
