//! Command implementations, usable without going through argument parsing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use softprop::baseline::{build_baseline, Baseline};
use softprop::eval::{error_colored, evaluate_model, evaluate_predictions, EvalReport};
use softprop::geometry::{write_ply, Backend, PointCloud};
use softprop::image::Image;
use softprop::model::ProprioModel;
use softprop::numcore::Adam;
use softprop::prototype::{square_grid, GridConfig, PrototypeGrid};
use softprop::synthdata::{dataset_checksum, generate, Body, Dataset, GenConfig, SceneConfig, Split};
use softprop::training::{fit, resume, FitOutput, TrainProgress};

use crate::config::{Overrides, RunConfig};
use crate::error::{usage, CliError};

pub type CliResult<T> = Result<T, CliError>;

/// Default throughput resolutions (number of predicted points).
pub const BENCH_RESOLUTIONS: [usize; 6] = [10_000, 14_400, 19_600, 25_600, 32_400, 40_000];
pub const SWEEP_IMAGE_RES: [usize; 5] = [16, 32, 64, 128, 224];
pub const SWEEP_LATENT_DIM: [usize; 5] = [32, 64, 128, 256, 512];

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    softprop::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone)]
pub struct GenArgs {
    pub n: usize,
    pub views: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub body: Body,
    pub res: usize,
    pub points: usize,
    pub dots: usize,
}

impl GenArgs {
    pub fn config(&self) -> GenConfig {
        GenConfig::new(
            self.n,
            SceneConfig {
                body: self.body,
                views: self.views,
                image_height: self.res,
                image_width: self.res,
                points_per_view: self.points,
                dots: self.dots,
                ..Default::default()
            },
            self.seed,
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GenSummary {
    pub manifest: PathBuf,
    pub checksum: String,
    pub samples: usize,
    pub train: usize,
    pub test: usize,
}

pub fn gen(args: &GenArgs) -> CliResult<GenSummary> {
    if args.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let cfg = args.config();
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let data = generate(&cfg)?;
    create_dir(&args.out)?;
    let manifest = data.write(&args.out)?;
    Ok(GenSummary {
        manifest,
        checksum: dataset_checksum(&args.out)?,
        samples: data.len(),
        train: data.indices(Split::Train).len(),
        test: data.indices(Split::Test).len(),
    })
}

// ---------------------------------------------------------------- shared

/// Loads a dataset, resampling its images to `res` when given.
pub fn load_dataset(dir: &Path, res: Option<usize>) -> CliResult<Dataset> {
    let mut data = Dataset::read(dir)?;
    if let Some(r) = res {
        resample_images(&mut data, r)?;
    }
    Ok(data)
}

pub fn resample_images(data: &mut Dataset, res: usize) -> CliResult<()> {
    for s in &mut data.samples {
        s.image = s.image.resize_area(res, res)?;
    }
    Ok(())
}

/// Resolves the run config for a dataset: file (or defaults) plus
/// overrides, checked against the data.
pub fn resolve_config(data: &Dataset, file: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = match file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::for_dataset(data),
    };
    overrides.apply(&mut cfg);
    cfg.check_against(data)?;
    Ok(cfg)
}

fn threads_or_env(threads: Option<usize>) -> usize {
    threads.unwrap_or_else(crate::threads_from_env)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Overrides,
    pub resume: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub config: RunConfig,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub last_eval: Option<EvalReport>,
}

pub fn train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let data = load_dataset(&args.data, args.overrides.image_res)?;
    let mut cfg = resolve_config(&data, args.config.as_deref(), &args.overrides)?;
    cfg.train.threads = threads_or_env(args.threads);
    let (mut model, mut opt, mut progress) = match &args.resume {
        Some(ck) => {
            let (model, opt, progress) = resume::<f32>(ck)?;
            if model.config().encoder != cfg.model.encoder
                || model.config().decoder != cfg.model.decoder
                || model.views() != cfg.model.views
            {
                return Err(usage(format!(
                    "{} was trained with a different architecture than the resolved config",
                    ck.display()
                )));
            }
            (model, opt, progress)
        }
        None => {
            let model = ProprioModel::<f32>::new(cfg.model.clone())?;
            let opt = Adam::new(cfg.train.adam(), model.store());
            (model, opt, TrainProgress::default())
        }
    };
    create_dir(&args.out)?;
    write_file(&args.out.join("run.toml"), &cfg.to_toml())?;
    let out = FitOutput { dir: args.out.clone() };
    let before = progress.epochs_done;
    let result = fit(&mut model, &mut opt, &data, &cfg.train, &mut progress, Some(&out))?;
    Ok(TrainSummary {
        config: cfg,
        final_checkpoint: out.final_checkpoint(),
        best_checkpoint: out.best_checkpoint(),
        loss_csv: out.loss_csv(),
        epochs_run: progress.epochs_done - before,
        final_loss: result.history.last().map_or(f64::NAN, |r| r.train_loss),
        last_eval: result.last_eval,
    })
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    Train,
    Test,
    All,
}

impl std::str::FromStr for SplitSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(SplitSel::Train),
            "test" => Ok(SplitSel::Test),
            "all" => Ok(SplitSel::All),
            _ => Err(format!("unknown split {s:?} (train, test, all)")),
        }
    }
}

pub fn split_indices(data: &Dataset, sel: SplitSel) -> Vec<usize> {
    match sel {
        SplitSel::Train => data.indices(Split::Train),
        SplitSel::Test => data.indices(Split::Test),
        SplitSel::All => (0..data.len()).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: SplitSel,
    pub grid_side: Option<usize>,
    pub out: Option<PathBuf>,
    pub baseline: bool,
    /// number of samples to export as error-colored PLY files
    pub export: usize,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub grid_points: usize,
    pub model: EvalReport,
    pub baseline: Option<EvalReport>,
    pub baseline_stored_floats: Option<usize>,
}

/// The training grid recorded in a checkpoint at resolution `side` (side
/// or count), or a square grid.
fn checkpoint_grid(extra: &serde_json::Value, dim: usize, side: Option<usize>) -> CliResult<PrototypeGrid> {
    let recorded = serde_json::from_value::<TrainProgress>(extra.clone())
        .ok()
        .and_then(|p| p.train_config)
        .map(|t| t.grid);
    let cfg = match (recorded, side) {
        (Some(g), Some(s)) => g.with_resolution(s),
        (Some(g), None) => g,
        (None, s) => GridConfig::square(s.unwrap_or(100), dim),
    };
    Ok(cfg.build()?)
}

pub fn eval(args: &EvalArgs) -> CliResult<EvalSummary> {
    let loaded = ProprioModel::<f32>::load(&args.checkpoint)?;
    let model = loaded.model;
    let enc = &model.config().encoder;
    let data = load_dataset(&args.data, Some(enc.height).filter(|&h| h == enc.width))?;
    let mut run = RunConfig::for_dataset(&data);
    run.model = model.config().clone();
    run.train.grid.dim = model.grid_dim();
    run.check_against(&data)?;
    let indices = split_indices(&data, args.split);
    if indices.is_empty() {
        return Err(usage("the selected split is empty"));
    }
    let grid = checkpoint_grid(&loaded.extra, model.grid_dim(), args.grid_side)?;
    let threads = threads_or_env(args.threads);
    let (report, preds) = evaluate_model(&model, &data, &indices, &grid, Backend::Indexed, threads)?;
    let mut summary = EvalSummary {
        grid_points: grid.len(),
        model: report,
        baseline: None,
        baseline_stored_floats: None,
    };
    let mut base: Option<Baseline> = None;
    if args.baseline {
        let b = build_baseline(&data, model.latent_dim())?;
        let kp: Vec<PointCloud> = indices
            .iter()
            .map(|&i| {
                let s = &data.samples[i];
                b.knn_predict(&s.image, Some(s.view), &data).cloned()
            })
            .collect::<Result<_, _>>()?;
        summary.baseline = Some(evaluate_predictions(&data, &indices, &kp, Backend::Indexed, threads)?);
        summary.baseline_stored_floats = Some(b.stored_floats());
        base = Some(b);
    }
    if let Some(out) = &args.out {
        create_dir(out)?;
        let json = serde_json::to_string_pretty(&summary).expect("report serializes");
        write_file(&out.join("report.json"), &json)?;
        write_file(&out.join("per_sample.csv"), &summary.model.to_csv())?;
        if let Some(b) = &base {
            b.save(&out.join("baseline.json"))?;
        }
        let ply = out.join("ply");
        create_dir(&ply)?;
        for (k, &i) in indices.iter().enumerate().take(args.export) {
            let s = &data.samples[i];
            write_ply(
                &ply.join(format!("{:06}_pred.ply", s.id)),
                &error_colored(&preds[k], &s.cloud, Backend::Indexed)?,
            )?;
            write_ply(&ply.join(format!("{:06}_gt.ply", s.id)), &s.cloud)?;
        }
    }
    Ok(summary)
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub checkpoint: PathBuf,
    pub resolutions: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub points: usize,
    pub median_seconds: f64,
    pub hz: f64,
}

/// Square grid of `ceil(sqrt(m))^2` points truncated to the first `m`.
pub fn grid_with_points(m: usize, dim: usize) -> CliResult<PrototypeGrid> {
    if m < 4 {
        return Err(usage(format!("resolution must be at least 4 points, got {m}")));
    }
    let side = (m as f64).sqrt().ceil() as usize;
    let g = square_grid(side, dim)?;
    Ok(if g.len() == m { g } else { g.truncated(m)? })
}

pub fn bench(args: &BenchArgs) -> CliResult<Vec<BenchRow>> {
    if args.resolutions.is_empty() {
        return Err(usage("no resolutions to benchmark"));
    }
    if args.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    if let Some(&m) = args.resolutions.iter().find(|&&m| m < 4) {
        return Err(usage(format!("resolution must be at least 4 points, got {m}")));
    }
    let model = ProprioModel::<f32>::load(&args.checkpoint)?.model;
    let e = &model.config().encoder;
    let image = match &args.data {
        Some(d) => Dataset::read(d)?.samples[0].image.resize_area(e.height, e.width)?,
        None => Image::zeros(e.height, e.width, e.channels),
    };
    let mut rows = Vec::new();
    for &m in &args.resolutions {
        let grid = grid_with_points(m, model.grid_dim())?;
        for _ in 0..args.warmup {
            model.predict(&image, &grid, &[0])?;
        }
        let mut times: Vec<f64> = (0..args.runs)
            .map(|_| {
                let t = Instant::now();
                model.predict(&image, &grid, &[0]).map(|_| t.elapsed().as_secs_f64())
            })
            .collect::<Result<_, _>>()?;
        times.sort_by(f64::total_cmp);
        let n = times.len();
        let median = if n % 2 == 1 { times[n / 2] } else { 0.5 * (times[n / 2 - 1] + times[n / 2]) };
        rows.push(BenchRow {
            points: m,
            median_seconds: median,
            hz: 1.0 / median,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    ImageRes,
    LatentDim,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "image-res" => Ok(SweepAxis::ImageRes),
            "latent-dim" => Ok(SweepAxis::LatentDim),
            _ => Err(format!("unknown sweep axis {s:?} (image-res, latent-dim)")),
        }
    }
}

impl SweepAxis {
    pub fn default_values(self) -> Vec<usize> {
        match self {
            SweepAxis::ImageRes => SWEEP_IMAGE_RES.to_vec(),
            SweepAxis::LatentDim => SWEEP_LATENT_DIM.to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub out: PathBuf,
    pub overrides: Overrides,
    /// evaluation grid resolution (side or count; defaults to the training
    /// grid)
    pub eval_side: Option<usize>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: usize,
    pub params: usize,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

/// Trains one model per value (same seed) and evaluates each on the test
/// split.
pub fn sweep_dataset(
    base: &Dataset,
    file: Option<&Path>,
    axis: SweepAxis,
    values: &[usize],
    overrides: &Overrides,
    eval_side: Option<usize>,
    threads: usize,
    out: Option<&Path>,
) -> CliResult<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(usage("sweep needs at least one value"));
    }
    let test = base.indices(Split::Test);
    if test.is_empty() {
        return Err(usage("sweep needs a non-empty test split"));
    }
    let mut rows = Vec::new();
    for &v in values {
        let mut ov = overrides.clone();
        let mut data = base.clone();
        match axis {
            SweepAxis::ImageRes => {
                ov.image_res = Some(v);
                resample_images(&mut data, v)?;
            }
            SweepAxis::LatentDim => ov.latent_dim = Some(v),
        }
        let mut cfg = resolve_config(&data, file, &ov)?;
        cfg.train.threads = threads;
        let mut model = ProprioModel::<f32>::new(cfg.model.clone())?;
        let mut opt = Adam::new(cfg.train.adam(), model.store());
        let fo = out.map(|o| FitOutput {
            dir: o.join(format!("value_{v}")),
        });
        fit(&mut model, &mut opt, &data, &cfg.train, &mut TrainProgress::default(), fo.as_ref())?;
        let grid = match eval_side {
            Some(s) => cfg.train.grid.with_resolution(s).build()?,
            None => cfg.train.grid.build()?,
        };
        let (r, _) = evaluate_model(&model, &data, &test, &grid, Backend::Indexed, threads)?;
        rows.push(SweepRow {
            value: v,
            params: model.param_count(),
            mean: r.mean,
            median: r.median,
            max: r.max,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let name = match axis {
        SweepAxis::ImageRes => "image_res",
        SweepAxis::LatentDim => "latent_dim",
    };
    let mut s = format!("{name},params,mean_dH_mm,median_dH_mm,max_dH_mm\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.value, r.params, r.mean, r.median, r.max));
    }
    s
}

pub fn sweep(args: &SweepArgs) -> CliResult<Vec<SweepRow>> {
    let data = load_dataset(&args.data, None)?;
    create_dir(&args.out)?;
    let rows = sweep_dataset(
        &data,
        args.config.as_deref(),
        args.axis,
        &args.values,
        &args.overrides,
        args.eval_side,
        threads_or_env(args.threads),
        Some(&args.out),
    )?;
    write_file(&args.out.join("sweep.csv"), &sweep_csv(args.axis, &rows))?;
    Ok(rows)
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    /// one PPM per camera
    pub images: Vec<PathBuf>,
    pub views: Vec<usize>,
    pub grid_side: Option<usize>,
    /// dataset whose normalization maps predictions to world meters
    pub data: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn predict(args: &PredictArgs) -> CliResult<Vec<PathBuf>> {
    let loaded = ProprioModel::<f32>::load(&args.checkpoint)?;
    let model = loaded.model;
    if args.images.is_empty() {
        return Err(usage("at least one --image is required"));
    }
    let cams = args.images.iter().map(|p| Image::read_ppm(p)).collect::<Result<Vec<_>, _>>()?;
    let e = &model.config().encoder;
    let image = Image::stack(&cams)?.resize_area(e.height, e.width)?;
    let views = if args.views.is_empty() { (0..model.views()).collect() } else { args.views.clone() };
    let grid = checkpoint_grid(&loaded.extra, model.grid_dim(), args.grid_side)?;
    let clouds = model.predict(&image, &grid, &views)?;
    let transform = args.data.as_deref().map(Dataset::read).transpose()?.map(|d| d.transform);
    create_dir(&args.out)?;
    let mut paths = Vec::new();
    for (v, c) in views.iter().zip(clouds) {
        let c = match &transform {
            Some(t) => t.denormalize(&c)?,
            None => c,
        };
        let p = args.out.join(format!("view{v}.ply"));
        write_ply(&p, &c)?;
        paths.push(p);
    }
    Ok(paths)
}
