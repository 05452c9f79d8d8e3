//! Multi-view Chamfer loss, per-view isolated training steps and the
//! seeded training loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalReport};
use crate::geometry::Backend;
use crate::image::Image;
use crate::model::ProprioModel;
use crate::numcore::{mix_seed, Adam, AdamConfig, Graph, ParamId, Real, Tensor, Var};
use crate::prototype::{GridConfig, PrototypeGrid};
use crate::synthdata::{Dataset, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// cosine-anneal the learning rate from `lr` to this value over the run
    pub final_lr: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// decoding grid used for the loss and for periodic evaluation
    pub grid: GridConfig,
    /// evaluate the test split every this many epochs (0: never); the last
    /// epoch is always evaluated when a test split exists and this is > 0
    pub eval_every: usize,
    /// stop after this many evaluations without improvement
    pub patience: Option<usize>,
    pub backend: Backend,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            final_lr: None,
            batch_size: 16,
            epochs: 500,
            seed: 0,
            grid: GridConfig::square(100, 3),
            eval_every: 10,
            patience: None,
            backend: Backend::Indexed,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(f) = self.final_lr {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::invalid(format!("final learning rate must be positive, got {f}")));
            }
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.final_lr {
            Some(f) if self.epochs > 1 => {
                let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
                f + 0.5 * (self.lr - f) * (1.0 + (std::f64::consts::PI * t).cos())
            }
            _ => self.lr,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..Default::default()
        }
    }
}

/// Samples of one mini-batch: stacked images, each sample's view and its
/// target cloud (normalized frame).
pub struct ViewBatch<'a, T> {
    pub images: Tensor<T>,
    pub views: Vec<usize>,
    pub targets: Vec<&'a [[T; 3]]>,
}

impl<'a, T: Real> ViewBatch<'a, T> {
    pub fn new(images: Tensor<T>, views: Vec<usize>, targets: Vec<&'a [[T; 3]]>) -> Result<Self> {
        if images.shape().first() != Some(&views.len()) || views.len() != targets.len() || views.is_empty() {
            return Err(Error::invalid("a batch needs one image, view and target per sample"));
        }
        Ok(ViewBatch { images, views, targets })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// `C_i`: samples per view, for `views` decoders.
    pub fn counts(&self, views: usize) -> Result<Vec<usize>> {
        let mut c = vec![0; views];
        for &v in &self.views {
            *c.get_mut(v).ok_or(Error::UnknownView { view: v, views })? += 1;
        }
        Ok(c)
    }
}

/// Loss node and per-sample Chamfer values of a batch.
pub struct LossGraph<T> {
    pub loss: Var,
    /// Chamfer distance of every sample, in batch order
    pub per_sample: Vec<T>,
    /// views that appear in the batch
    pub touched: Vec<usize>,
}

/// Records `sum_i (1/C_i) sum_j chamfer(pred_j, target_j)` over the views
/// present in the batch, in ascending view order.
pub fn multiview_loss_graph<T: Real>(
    model: &ProprioModel<T>,
    g: &mut Graph<T>,
    batch: &ViewBatch<T>,
    grid: &PrototypeGrid,
    backend: Backend,
) -> Result<LossGraph<T>> {
    let counts = batch.counts(model.views())?;
    let images = g.input(batch.images.clone())?;
    let codes = model.encode_graph(g, images)?;
    let gv = g.input(grid.to_tensor())?;
    let mut per_sample = vec![T::zero(); batch.len()];
    let mut total: Option<Var> = None;
    let mut touched = Vec::new();
    for (view, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        touched.push(view);
        let rows: Vec<usize> = (0..batch.len()).filter(|&i| batch.views[i] == view).collect();
        let vc = g.select_rows(codes, &rows)?;
        let pred = model.decode_graph(g, view, gv, vc)?;
        let targets: Vec<&[[T; 3]]> = rows.iter().map(|&i| batch.targets[i]).collect();
        let (l, values) = g.chamfer(pred, &targets, T::one() / T::of(c as f64), backend)?;
        for (&i, v) in rows.iter().zip(values) {
            per_sample[i] = v;
        }
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    Ok(LossGraph {
        loss: total.expect("non-empty batch touches a view"),
        per_sample,
        touched,
    })
}

/// Loss value without recording a backward graph.
pub fn multiview_loss<T: Real>(model: &ProprioModel<T>, batch: &ViewBatch<T>, grid: &PrototypeGrid, backend: Backend) -> Result<T> {
    let mut g = Graph::inference();
    let lg = multiview_loss_graph(model, &mut g, batch, grid, backend)?;
    Ok(g.value(lg.loss).item())
}

/// Parameters one step on `touched` views may update: the encoder and
/// the decoders of those views.
pub fn step_params<T: Real>(model: &ProprioModel<T>, touched: &[usize]) -> Result<Vec<ParamId>> {
    let mut ids = model.encoder_params();
    for &v in touched {
        ids.extend(model.decoder_params(v)?);
    }
    Ok(ids)
}

/// One optimization step. Decoders of views absent from the batch are
/// neither differentiated nor stepped.
pub fn train_step<T: Real>(
    model: &mut ProprioModel<T>,
    optimizer: &mut Adam<T>,
    batch: &ViewBatch<T>,
    grid: &PrototypeGrid,
    backend: Backend,
) -> Result<T> {
    let mut g = Graph::new().checked(true);
    let lg = multiview_loss_graph(model, &mut g, batch, grid, backend).map_err(|e| match e {
        Error::NonFinite(what) => Error::NonFinite(format!("forward pass: {what}")),
        other => other,
    })?;
    let loss = g.value(lg.loss).item();
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {} (per-sample chamfer {:?})",
            loss.as_f64(),
            lg.per_sample.iter().map(|v| v.as_f64()).collect::<Vec<_>>()
        )));
    }
    let grads = g.backward(lg.loss)?;
    let ids = step_params(model, &lg.touched)?;
    let store = model.store_mut();
    store.zero_grad();
    grads.accumulate_into(store)?;
    optimizer.step(store, &ids)?;
    Ok(loss)
}

/// One row of the loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_mean: Option<f64>,
    pub test_median: Option<f64>,
    pub test_max: Option<f64>,
}

pub const LOSS_CSV_HEADER: &str = "epoch,train_loss,test_mean_dH,test_median_dH,test_max_dH";

/// Loss history as CSV; blank cells for epochs without evaluation.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = format!("{LOSS_CSV_HEADER}\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            opt(r.test_mean),
            opt(r.test_median),
            opt(r.test_max)
        ));
    }
    s
}

/// Where `fit` writes its artifacts.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub dir: PathBuf,
}

impl FitOutput {
    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("final.ckpt")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn loss_csv(&self) -> PathBuf {
        self.dir.join("loss.csv")
    }
}

/// State carried between runs so that a resumed run continues exactly.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainProgress {
    pub epochs_done: usize,
    pub history: Vec<EpochRecord>,
    pub best: Option<f64>,
    pub evals_since_best: usize,
    pub train_config: Option<TrainConfig>,
}

pub struct FitResult {
    pub history: Vec<EpochRecord>,
    pub last_eval: Option<EvalReport>,
}

/// Trains for `config.epochs` epochs (counting epochs already in
/// `progress`) on the dataset's training split.
///
/// Epoch `e` visits the training samples in an order drawn from
/// `(seed, e)` alone, so a run resumed from a checkpoint reproduces the
/// uninterrupted run.
pub fn fit<T: Real>(
    model: &mut ProprioModel<T>,
    optimizer: &mut Adam<T>,
    data: &Dataset,
    config: &TrainConfig,
    progress: &mut TrainProgress,
    out: Option<&FitOutput>,
) -> Result<FitResult> {
    config.validate()?;
    let train = data.indices(Split::Train);
    let test = data.indices(Split::Test);
    if train.is_empty() {
        return Err(Error::invalid("dataset has no training samples"));
    }
    if data.views() != model.views() {
        return Err(Error::invalid(format!(
            "dataset has {} views, model has {}",
            data.views(),
            model.views()
        )));
    }
    let counts = data.view_counts(&train);
    if let Some(v) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("view {v} has no training samples")));
    }
    let grid = config.grid.build()?;
    let targets: Vec<Vec<[T; 3]>> = (0..data.len())
        .map(|i| {
            data.normalized_cloud(i)
                .map(|c| c.points().iter().map(|p| p.map(T::of)).collect())
        })
        .collect::<Result<_>>()?;
    if let Some(o) = out {
        std::fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
    }
    progress.train_config = Some(config.clone());
    let mut last_eval = None;
    for epoch in progress.epochs_done..config.epochs {
        let mut order = train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64)));
        optimizer.config.lr = config.lr_at(epoch);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let imgs: Vec<&Image> = chunk.iter().map(|&i| &data.samples[i].image).collect();
            let batch = ViewBatch::new(
                model.image_batch(&imgs)?,
                chunk.iter().map(|&i| data.samples[i].view).collect(),
                chunk.iter().map(|&i| targets[i].as_slice()).collect(),
            )?;
            loss_sum += train_step(model, optimizer, &batch, &grid, config.backend)?.as_f64();
            batches += 1;
        }
        let mut rec = EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / batches as f64,
            test_mean: None,
            test_median: None,
            test_max: None,
        };
        let last = epoch + 1 == config.epochs;
        let mut improved = false;
        if config.eval_every > 0 && !test.is_empty() && ((epoch + 1) % config.eval_every == 0 || last) {
            let (report, _) = evaluate_model(model, data, &test, &grid, config.backend, config.threads)?;
            rec.test_mean = Some(report.mean);
            rec.test_median = Some(report.median);
            rec.test_max = Some(report.max);
            if progress.best.is_none_or(|b| report.mean < b) {
                progress.best = Some(report.mean);
                progress.evals_since_best = 0;
                improved = true;
            } else {
                progress.evals_since_best += 1;
            }
            last_eval = Some(report);
        }
        progress.history.push(rec);
        progress.epochs_done = epoch + 1;
        if let Some(o) = out {
            if improved {
                save(model, optimizer, progress, &o.best_checkpoint())?;
            }
            write_history(&o.loss_csv(), &progress.history)?;
        }
        if config.patience.is_some_and(|p| progress.evals_since_best >= p) {
            break;
        }
    }
    if let Some(o) = out {
        save(model, optimizer, progress, &o.final_checkpoint())?;
        if progress.best.is_none() {
            save(model, optimizer, progress, &o.best_checkpoint())?;
        }
    }
    Ok(FitResult {
        history: progress.history.clone(),
        last_eval,
    })
}

fn save<T: Real>(model: &ProprioModel<T>, opt: &Adam<T>, progress: &TrainProgress, path: &Path) -> Result<()> {
    let extra = serde_json::to_value(progress).map_err(|e| Error::Checkpoint(e.to_string()))?;
    model.save(path, Some(opt), extra)
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(history_csv(history).as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Restores a model, its optimizer and the training progress from a
/// checkpoint written by [`fit`].
pub fn resume<T: Real>(path: &Path) -> Result<(ProprioModel<T>, Adam<T>, TrainProgress)> {
    let loaded = ProprioModel::<T>::load(path)?;
    let progress: TrainProgress =
        serde_json::from_value(loaded.extra).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let opt = loaded
        .optimizer
        .ok_or_else(|| Error::Checkpoint(format!("{}: no optimizer state", path.display())))?;
    Ok((loaded.model, opt, progress))
}
