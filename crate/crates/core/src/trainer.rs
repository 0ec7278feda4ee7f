//! Adam, the epoch loop with early stopping, and the cross-validation driver.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataio::WindowSet;
use crate::error::{Error, Result};
use crate::layers::checkpoint::save_checkpoint;
use crate::layers::{argmax_rows, build_model, logits, model_backward, model_forward, stack_windows, Gradients, InputShape, ModelSpec, ModelState};
use crate::numerics::{softmax_cross_entropy_labels, Tensor};
use crate::report::{classification_metrics, confusion_matrix, FoldSummary, RunReport};
use crate::seeding;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(cfg: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            cfg,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn for_model(cfg: AdamConfig, model: &ModelState) -> Self {
        Self::new(cfg, model.params().into_iter().map(|(_, t)| t))
    }
}

/// One bias-corrected Adam update. The step counter is incremented before
/// the correction terms are computed.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step tensor count",
            left: vec![params.len()],
            right: vec![grads.len(), state.m.len()],
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.cfg;
    let bc1 = 1.0 - beta1.powf(state.t as f64);
    let bc2 = 1.0 - beta2.powf(state.t as f64);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn adam_step_model(model: &mut ModelState, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    adam_step(&mut model.params_mut(), &grads.tensors, state)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub n_folds: usize,
    pub train_fraction: f64,
    pub learning_rate: f64,
    pub seed: u64,
    /// Worker threads for fold-level parallelism.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 300,
            patience: 50,
            batch_size: 64,
            n_folds: 10,
            train_fraction: 0.7,
            learning_rate: 0.001,
            seed: 7,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if self.patience >= self.max_epochs {
            return fail(format!("patience ({}) must be below max_epochs ({})", self.patience, self.max_epochs));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.n_folds < 2 {
            return fail(format!("n_folds must be at least 2, got {}", self.n_folds));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return fail(format!("train_fraction must be in (0, 1], got {}", self.train_fraction));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.jobs == 0 {
            return fail("jobs must be at least 1".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch, dropout active.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Fraction of training windows classified correctly during the epoch,
    /// dropout active.
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Stops once the monitored value has not decreased for `patience`
/// consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one epoch's value; returns true when training should stop.
    pub fn update(&mut self, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

/// Windows and integer labels for one side of a split.
#[derive(Clone, Debug, Default)]
pub struct Examples<'a> {
    pub windows: Vec<&'a Tensor>,
    pub labels: Vec<usize>,
}

impl<'a> Examples<'a> {
    pub fn from_indices(ws: &'a WindowSet, idx: &[usize]) -> Self {
        Self {
            windows: idx.iter().map(|&i| &ws.windows[i]).collect(),
            labels: idx.iter().map(|&i| ws.labels[i].code()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    fn input_shape(&self) -> Result<InputShape> {
        match self.windows.first().map(|w| w.shape()) {
            Some(&[steps, channels]) => Ok(InputShape { steps, channels }),
            Some(other) => Err(Error::ShapeMismatch {
                op: "window shape",
                left: other.to_vec(),
                right: vec![],
            }),
            None => Err(Error::Empty("example set")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights from the epoch with the highest validation accuracy.
    pub model: ModelState,
    pub history: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Mean loss and accuracy in inference mode.
pub fn evaluate(model: &ModelState, data: &Examples<'_>, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    for (w, y) in data.windows.chunks(batch_size).zip(data.labels.chunks(batch_size)) {
        let out = logits(model, &stack_windows(w.iter().copied())?)?;
        let (l, _) = softmax_cross_entropy_labels(&out, y)?;
        loss += l * y.len() as f64;
        correct += argmax_rows(&out).iter().zip(y).filter(|(p, t)| p == t).count();
    }
    let n = data.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub fn predict_examples(model: &ModelState, windows: &[&Tensor], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(windows.len());
    for w in windows.chunks(batch_size) {
        out.extend(argmax_rows(&logits(model, &stack_windows(w.iter().copied())?)?));
    }
    Ok(out)
}

/// Trains one model from scratch. `stream_seed` drives initialization,
/// shuffling and dropout.
pub fn train_one_model(
    spec: &ModelSpec,
    train: &Examples<'_>,
    val: &Examples<'_>,
    cfg: &TrainConfig,
    stream_seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut model = build_model(spec, train.input_shape()?, stream_seed)?;
    let mut adam = AdamState::for_model(cfg.adam(), &model);
    let mut rng = seeding::stream(stream_seed, &[seeding::TAG_TRAIN]);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = stack_windows(chunk.iter().map(|&i| train.windows[i]))?;
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (out, cache) = model_forward(&model, &x, true, &mut rng)?;
            let (loss, grad) = softmax_cross_entropy_labels(&out, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let grads = model_backward(&model, &cache, &grad)?;
            adam_step_model(&mut model, &grads, &mut adam)?;
            loss_sum += loss * y.len() as f64;
            correct += argmax_rows(&out).iter().zip(&y).filter(|(p, t)| p == t).count();
        }
        let (val_loss, val_acc) = evaluate(&model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
        });
        if val_acc > best.2 {
            best = (model.clone(), epoch, val_acc);
        }
        if stopper.update(val_loss) {
            break;
        }
    }
    let stopped_epoch = history.len();
    Ok(TrainOutcome {
        model: best.0,
        history,
        stopped_epoch,
        best_epoch: best.1,
        best_val_acc: best.2,
    })
}

/// Per-epoch mean across folds. Shorter histories are padded by repeating
/// their last record.
pub fn average_histories(histories: &[Vec<EpochRecord>]) -> Vec<EpochRecord> {
    let len = histories.iter().map(Vec::len).max().unwrap_or(0);
    let live: Vec<&Vec<EpochRecord>> = histories.iter().filter(|h| !h.is_empty()).collect();
    let n = live.len() as f64;
    (0..len)
        .map(|e| {
            let mut acc = EpochRecord {
                epoch: e + 1,
                train_loss: 0.0,
                val_loss: 0.0,
                train_acc: 0.0,
                val_acc: 0.0,
            };
            for h in &live {
                let r = h.get(e).unwrap_or_else(|| h.last().expect("nonempty"));
                acc.train_loss += r.train_loss;
                acc.val_loss += r.val_loss;
                acc.train_acc += r.train_acc;
                acc.val_acc += r.val_acc;
            }
            acc.train_loss /= n;
            acc.val_loss /= n;
            acc.train_acc /= n;
            acc.val_acc /= n;
            acc
        })
        .collect()
}

/// Everything produced by training one spec on one fold.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub fold: usize,
    pub outcome: TrainOutcome,
}

/// All folds of one spec plus its test-set report.
#[derive(Clone, Debug)]
pub struct SpecRun {
    pub spec: ModelSpec,
    pub folds: Vec<FoldRun>,
    pub report: RunReport,
}

impl SpecRun {
    pub fn best_model(&self) -> &ModelState {
        &self.folds[self.report.best_fold].outcome.model
    }
}

/// Seed of the independent stream for one (spec, fold) job.
pub fn fold_seed(seed: u64, spec: &ModelSpec, fold: usize) -> u64 {
    seeding::derive(seed, &[spec.kind.code() as u64, fold as u64])
}

/// Cross-validates every spec on the shared folding, picks each spec's fold
/// model with the best validation accuracy and scores it on the test windows.
pub fn run_cv_experiment(specs: &[ModelSpec], ws: &WindowSet, cfg: &TrainConfig) -> Result<Vec<SpecRun>> {
    cfg.validate()?;
    if specs.is_empty() {
        return Err(Error::Empty("model list"));
    }
    if ws.n_folds < 2 {
        return Err(Error::Config(format!("window set has {} folds", ws.n_folds)));
    }
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..ws.n_folds).map(move |k| (s, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<TrainOutcome>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, k)| {
                let (tr, va) = ws.cv_split(k);
                let train = Examples::from_indices(ws, &tr);
                let val = Examples::from_indices(ws, &va);
                let out = train_one_model(&specs[s], &train, &val, cfg, fold_seed(cfg.seed, &specs[s], k));
                if let Ok(o) = &out {
                    log::info!(
                        "{} fold {}: stopped at epoch {}, best val acc {:.4} at epoch {}",
                        specs[s].kind,
                        k,
                        o.stopped_epoch,
                        o.best_val_acc,
                        o.best_epoch
                    );
                }
                out
            })
            .collect()
    });

    let test_idx = ws.test_indices();
    if test_idx.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let test = Examples::from_indices(ws, &test_idx);
    let mut results = results.into_iter();
    let mut runs = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut folds = Vec::with_capacity(ws.n_folds);
        for fold in 0..ws.n_folds {
            folds.push(FoldRun {
                fold,
                outcome: results.next().expect("one result per job")?,
            });
        }
        let best_fold = folds
            .iter()
            .fold(0, |best, f| if f.outcome.best_val_acc > folds[best].outcome.best_val_acc { f.fold } else { best });
        let preds = predict_examples(&folds[best_fold].outcome.model, &test.windows, cfg.batch_size)?;
        let confusion = confusion_matrix(&preds, &test.labels, spec.n_classes)?;
        let metrics = classification_metrics(&confusion)?;
        let histories: Vec<Vec<EpochRecord>> = folds.iter().map(|f| f.outcome.history.clone()).collect();
        let report = RunReport {
            kind: spec.kind,
            metrics,
            confusion,
            history: average_histories(&histories),
            folds: folds
                .iter()
                .map(|f| FoldSummary {
                    fold: f.fold,
                    stopped_epoch: f.outcome.stopped_epoch,
                    best_epoch: f.outcome.best_epoch,
                    best_val_acc: f.outcome.best_val_acc,
                })
                .collect(),
            best_fold,
            test_windows: test.len(),
        };
        runs.push(SpecRun {
            spec: spec.clone(),
            folds,
            report,
        });
    }
    Ok(runs)
}

pub const HISTORY_HEADER: &str = "spec,fold,epoch,train_loss,val_loss,train_acc,val_acc";

/// Writes `history.csv` with one row per (spec, fold, epoch).
pub fn write_history(path: &Path, runs: &[SpecRun]) -> Result<()> {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for run in runs {
        for f in &run.folds {
            for r in &f.outcome.history {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    run.spec.kind, f.fold, r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc
                ));
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-(spec, fold) histories read back from `history.csv`, in file order.
pub fn read_history(path: &Path) -> Result<Vec<(String, usize, Vec<EpochRecord>)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != HISTORY_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            message: format!("expected header `{HISTORY_HEADER}`"),
        });
    }
    let mut out: Vec<(String, usize, Vec<EpochRecord>)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let field = |c: usize| -> Result<&str> {
            rec.get(c).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                column: c + 1,
                message: "missing field".into(),
            })
        };
        let num = |c: usize| -> Result<f64> {
            field(c)?.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                column: c + 1,
                message: format!("not a number: `{}`", rec.get(c).unwrap_or("")),
            })
        };
        let spec = field(0)?.to_string();
        let fold = num(1)? as usize;
        let r = EpochRecord {
            epoch: num(2)? as usize,
            train_loss: num(3)?,
            val_loss: num(4)?,
            train_acc: num(5)?,
            val_acc: num(6)?,
        };
        match out.last_mut() {
            Some((s, f, h)) if *s == spec && *f == fold => h.push(r),
            _ => out.push((spec, fold, vec![r])),
        }
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: 0,
        message: e.to_string(),
    }
}

pub const FOLDS_HEADER: &str = "spec,fold,stopped_epoch,best_epoch,best_val_acc,selected";

pub fn write_folds(path: &Path, runs: &[SpecRun]) -> Result<()> {
    let mut out = String::from(FOLDS_HEADER);
    out.push('\n');
    for run in runs {
        for f in &run.report.folds {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                run.spec.kind,
                f.fold,
                f.stopped_epoch,
                f.best_epoch,
                f.best_val_acc,
                f.fold == run.report.best_fold
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `history.csv`, `folds.csv` and one checkpoint per (spec, fold)
/// under `checkpoints/`. Returns the written paths.
pub fn write_training_outputs(out_dir: &Path, runs: &[SpecRun]) -> Result<Vec<PathBuf>> {
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let mut paths = vec![out_dir.join("history.csv"), out_dir.join("folds.csv")];
    write_history(&paths[0], runs)?;
    write_folds(&paths[1], runs)?;
    for run in runs {
        for f in &run.folds {
            let p = ckpt_dir.join(format!("{}_fold{:02}.ckpt", run.spec.kind, f.fold));
            save_checkpoint(&f.outcome.model, &p)?;
            paths.push(p);
        }
        let p = ckpt_dir.join(format!("{}_best.ckpt", run.spec.kind));
        save_checkpoint(run.best_model(), &p)?;
        paths.push(p);
    }
    let mut log = fs::File::create(out_dir.join("summary.txt")).map_err(|e| Error::io(out_dir, e))?;
    for run in runs {
        let m = &run.report.metrics;
        writeln!(
            log,
            "{}: best fold {} | test accuracy {:.2}% sensitivity {:.2}% specificity {:.2}% over {} windows",
            run.spec.kind, run.report.best_fold, m.accuracy, m.sensitivity, m.specificity, run.report.test_windows
        )
        .map_err(|e| Error::io(out_dir, e))?;
    }
    paths.push(out_dir.join("summary.txt"));
    Ok(paths)
}
