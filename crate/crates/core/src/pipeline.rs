//! End-to-end runs: dataset loading, training with checkpoints and a loss
//! log, sampling to drawings, corpus evaluation, file conversion and the
//! verification suite.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader};
use crate::config::{DatasetSource, RunConfig};
use crate::diffusion::{sample_chain, train_epoch, Denoiser, DiffusionConfig, EpochStats, Example};
use crate::drawing::{
    self, architectural_view, augment, compose_structural, extract_canvas, quantize_line_drawing,
    synth::synth_dataset, training_pair, Canvas, Class, SemanticDrawing, SnapMode,
    AUGMENT_SUFFIXES,
};
use crate::error::{Error, Result};
use crate::metrics::{fit_feature_cloud, frechet_distance, score_iou, FeatureExtractor, IoUReport};
use crate::net::DenoiserModel;
use crate::schedule::NoiseSchedule;
use crate::tensor::{AdamState, ParamStore};

/// Stream separation for the training RNG, so it never coincides with the
/// weight-initialization stream of the same seed.
const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0001;

pub const LOSS_LOG: &str = "loss.csv";
pub const RUN_MANIFEST: &str = "run.json";
pub const FINAL_CHECKPOINT: &str = "final.wdck";

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch{epoch:03}.wdck")
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Missing(dir.to_path_buf()));
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Structural drawing to training example at the given resolution.
pub fn example_from_structural(
    d: &SemanticDrawing,
    width: usize,
    height: usize,
) -> Result<Example> {
    let cond = d.condition.ok_or_else(|| {
        Error::Data(format!(
            "{}: no group tag (7degree-H1, 7degree-H2 or 8degree) in the name",
            d.origin_id
        ))
    })?;
    let d = d.resample(width, height)?;
    let (x0, y) = training_pair(&d);
    Ok(Example {
        x0: x0.to_tensor(),
        y: y.to_tensor(),
        d: cond,
    })
}

/// Structural drawings named by the configured dataset source.
pub fn load_structural(cfg: &RunConfig) -> Result<Vec<SemanticDrawing>> {
    match &cfg.dataset {
        DatasetSource::Synthetic(n) => synth_dataset(*n, cfg.width, cfg.height, cfg.seed),
        DatasetSource::Directory(root) => {
            let dir = root.join(&cfg.split);
            let files = list_pngs(&dir)?;
            if files.is_empty() {
                return Err(Error::Missing(dir));
            }
            files
                .iter()
                .map(|f| drawing::read_drawing(f, cfg.snap))
                .collect()
        }
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<Example>> {
    load_structural(cfg)?
        .iter()
        .map(|d| example_from_structural(d, cfg.width, cfg.height))
        .collect()
}

/// Model, schedule and optimizer of a run in progress.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: DenoiserModel,
    pub sched: NoiseSchedule,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let model = DenoiserModel::new(cfg.unet())?;
        let adam = AdamState::new(cfg.adam, model.params());
        Ok(Self {
            model,
            sched: NoiseSchedule::from_spec(cfg.schedule())?,
            adam,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM),
            epoch: 0,
        })
    }

    pub fn run_epoch(&mut self, cfg: &RunConfig, data: &[Example]) -> Result<EpochStats> {
        let stats = train_epoch(
            &mut self.model,
            data,
            &self.sched,
            cfg.parameterization,
            &mut self.adam,
            &mut self.rng,
        )?;
        self.epoch += 1;
        Ok(stats)
    }

    pub fn checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        let header = CheckpointHeader {
            config_hash: cfg.hash(),
            config: cfg.to_map(),
            unet: cfg.unet(),
            schedule: cfg.schedule(),
            diffusion: cfg.diffusion(),
            epoch: self.epoch,
            params: vec![],
            adam: None,
        };
        Checkpoint::new(header, self.model.params().clone(), Some(self.adam.clone()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: std::collections::BTreeMap<String, String>,
    pub examples: usize,
    pub parameters: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochStats>,
    pub loss_log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub state: TrainState,
}

pub fn loss_log_row(epoch: usize, s: &EpochStats) -> String {
    format!("{epoch},{},{},{},{}\n", s.mean, s.min, s.max, s.steps)
}

pub const LOSS_LOG_HEADER: &str = "epoch,mean_loss,min_loss,max_loss,steps\n";

/// Trains for `cfg.epochs` epochs, writing one checkpoint per epoch, the
/// final checkpoint, the loss log and a run manifest into `out_dir`.
/// `on_epoch` sees each epoch as it finishes.
pub fn train_run(
    cfg: &RunConfig,
    out_dir: &Path,
    mut on_epoch: impl FnMut(usize, &EpochStats),
) -> Result<TrainOutcome> {
    let data = load_dataset(cfg)?;
    let mut state = TrainState::new(cfg)?;
    fs::create_dir_all(out_dir)?;
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        config: cfg.to_map(),
        examples: data.len(),
        parameters: state.model.params().numel(),
    };
    fs::write(
        out_dir.join(RUN_MANIFEST),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    let loss_log = out_dir.join(LOSS_LOG);
    let mut log = fs::File::create(&loss_log)?;
    log.write_all(LOSS_LOG_HEADER.as_bytes())?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    for _ in 0..cfg.epochs {
        let stats = state.run_epoch(cfg, &data)?;
        log.write_all(loss_log_row(state.epoch, &stats).as_bytes())?;
        log.flush()?;
        let path = out_dir.join(epoch_checkpoint_name(state.epoch));
        state.checkpoint(cfg).save(&path)?;
        checkpoints.push(path);
        on_epoch(state.epoch, &stats);
        epochs.push(stats);
    }
    let last = out_dir.join(FINAL_CHECKPOINT);
    state.checkpoint(cfg).save(&last)?;
    checkpoints.push(last);
    Ok(TrainOutcome {
        epochs,
        loss_log,
        checkpoints,
        state,
    })
}

/// A model restored from a checkpoint, ready to sample.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: DenoiserModel,
    pub sched: NoiseSchedule,
    pub diffusion: DiffusionConfig,
    pub header: CheckpointHeader,
}

impl LoadedModel {
    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        Ok(Self {
            model: DenoiserModel::from_params(c.header.unet, c.params)?,
            sched: NoiseSchedule::from_spec(c.header.schedule)?,
            diffusion: c.header.diffusion,
            header: c.header,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn params(&self) -> &ParamStore {
        self.model.params()
    }
}

/// Seed of the `i`-th output of a sampling request.
pub fn derive_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Reads a sampling input: a canvas PNG (gray) or an architectural drawing
/// (RGB). Returns the architectural drawing used for recomposition, resized
/// to `width × height`.
pub fn read_sampling_input(
    path: &Path,
    snap: SnapMode,
    width: usize,
    height: usize,
) -> Result<SemanticDrawing> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let arch = if drawing::is_canvas_png(&bytes)? {
        let c = drawing::decode_canvas_png(&bytes)?;
        if c.count(drawing::CANVAS_SHEAR) > 0 {
            return Err(Error::Usage(format!(
                "{}: canvas already contains shear walls",
                path.display()
            )));
        }
        canvas_as_drawing(&c)
    } else {
        let d = drawing::load_drawing(&bytes, &stem(path), snap)?;
        extract_canvas(&d)?;
        d
    };
    arch.resample(width, height)
}

fn canvas_as_drawing(c: &Canvas) -> SemanticDrawing {
    let classes = c
        .values()
        .iter()
        .map(|&v| {
            if v == drawing::CANVAS_INFILL {
                Class::InfillWall
            } else if v == drawing::CANVAS_SHEAR {
                Class::ShearWall
            } else {
                Class::Background
            }
        })
        .collect();
    SemanticDrawing::new(c.width(), c.height(), classes).expect("canvas extent")
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub seed: u64,
    pub line: Canvas,
    pub structural: SemanticDrawing,
}

/// Stage 1 then stage 2 for one seed.
pub fn sample_one(m: &LoadedModel, arch: &SemanticDrawing, d: f64, seed: u64) -> Result<Sample> {
    generate(&m.model, &m.sched, &m.diffusion, arch, d, seed)
}

pub fn generate<M: Denoiser + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    cfg: &DiffusionConfig,
    arch: &SemanticDrawing,
    d: f64,
    seed: u64,
) -> Result<Sample> {
    let canvas = extract_canvas(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = sample_chain(model, &canvas.to_tensor(), d, sched, cfg, &mut rng)?;
    let line = quantize_line_drawing(&raw, &canvas)?;
    let structural = compose_structural(&line, arch)?;
    Ok(Sample {
        seed,
        line,
        structural,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleFiles {
    pub seed: u64,
    pub line: PathBuf,
    pub structural: PathBuf,
}

/// Runs `n` chains with derived seeds and writes both the line drawing and
/// the structural drawing of each.
pub fn sample_to_dir(
    m: &LoadedModel,
    input: &Path,
    d: f64,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<SampleFiles>> {
    let u = &m.header.unet;
    let snap = match m.header.config.get("snap").map(String::as_str) {
        Some("lenient") => SnapMode::Lenient,
        _ => SnapMode::Strict,
    };
    let arch = read_sampling_input(input, snap, u.width, u.height)?;
    let name = stem(input);
    fs::create_dir_all(out_dir)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = sample_one(m, &arch, d, derive_seed(seed, i))?;
        let line = out_dir.join(format!("{name}__s{}__line.png", s.seed));
        let structural = out_dir.join(format!("{name}__s{}__structural.png", s.seed));
        drawing::write_canvas(&line, &s.line)?;
        drawing::write_drawing(&structural, &s.structural)?;
        out.push(SampleFiles {
            seed: s.seed,
            line,
            structural,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    #[serde(flatten)]
    pub report: IoUReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub extractor: String,
    pub pairs: usize,
    pub rows: Vec<EvalRow>,
    pub unmatched: Vec<String>,
    pub mean_siou: f64,
    pub mean_wiou: f64,
    pub mean_eta_sw: f64,
    pub mean_score: f64,
    /// Absent when either side has fewer than two drawings.
    pub frechet: Option<f64>,
}

impl EvalReport {
    pub fn from_pairs(
        pairs: &[(String, SemanticDrawing, SemanticDrawing)],
        unmatched: Vec<String>,
        extractor: FeatureExtractor,
    ) -> Result<Self> {
        let mut rows = Vec::with_capacity(pairs.len());
        for (name, pred, label) in pairs {
            rows.push(EvalRow {
                name: name.clone(),
                report: score_iou(pred, label)?,
            });
        }
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&IoUReport) -> f64| rows.iter().map(|r| f(&r.report)).sum::<f64>() / n;
        let frechet = if pairs.len() >= 2 {
            let fp: Vec<Vec<f64>> = pairs.iter().map(|p| extractor.extract(&p.1)).collect();
            let fl: Vec<Vec<f64>> = pairs.iter().map(|p| extractor.extract(&p.2)).collect();
            Some(frechet_distance(
                &fit_feature_cloud(&fl)?,
                &fit_feature_cloud(&fp)?,
            )?)
        } else {
            None
        };
        Ok(Self {
            extractor: extractor.name().into(),
            pairs: rows.len(),
            mean_siou: mean(|r| r.siou),
            mean_wiou: mean(|r| r.wiou),
            mean_eta_sw: mean(|r| r.eta_sw),
            mean_score: mean(|r| r.score),
            rows,
            unmatched,
            frechet,
        })
    }
}

/// Pairs predictions with labels by file name and scores every pair.
pub fn evaluate_dirs(
    pred_dir: &Path,
    label_dir: &Path,
    extractor: FeatureExtractor,
    snap: SnapMode,
) -> Result<EvalReport> {
    let preds = list_pngs(pred_dir)?;
    let labels = list_pngs(label_dir)?;
    let name = |p: &PathBuf| {
        p.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let label_names: Vec<String> = labels.iter().map(name).collect();
    let pred_names: Vec<String> = preds.iter().map(name).collect();
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (p, pn) in preds.iter().zip(&pred_names) {
        match label_names.iter().position(|l| l == pn) {
            Some(i) => pairs.push((
                pn.clone(),
                drawing::read_drawing(p, snap)?,
                drawing::read_drawing(&labels[i], snap)?,
            )),
            None => unmatched.push(format!("pred/{pn}")),
        }
    }
    unmatched.extend(
        label_names
            .iter()
            .filter(|l| !pred_names.contains(l))
            .map(|l| format!("label/{l}")),
    );
    EvalReport::from_pairs(&pairs, unmatched, extractor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvertOp {
    /// Segment CSV to drawing.
    Rasterize,
    /// One drawing to four.
    Augment,
    /// Drawing to stage-1 canvas.
    Canvas,
}

impl std::str::FromStr for ConvertOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rasterize" => Ok(Self::Rasterize),
            "augment" => Ok(Self::Augment),
            "canvas" => Ok(Self::Canvas),
            other => Err(Error::Config(format!(
                "unknown conversion {other:?} (rasterize, augment, canvas)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvertOptions {
    pub snap: SnapMode,
    /// Raster extent for `rasterize`.
    pub extent: Option<(usize, usize)>,
}

enum Item {
    Drawing(SemanticDrawing),
    Canvas(Canvas),
}

/// Applies `ops` in order to every input and writes the results as
/// `<stem>__<suffix>….png`. Inputs must all be segment CSVs (first op
/// `rasterize`) or all drawings.
pub fn convert(
    inputs: &[PathBuf],
    out_dir: &Path,
    ops: &[ConvertOp],
    opts: ConvertOptions,
) -> Result<Vec<PathBuf>> {
    if ops.is_empty() {
        return Err(Error::Config("no conversion requested".into()));
    }
    let is_csv = |p: &PathBuf| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let csv = inputs.iter().filter(|p| is_csv(p)).count();
    if csv != 0 && csv != inputs.len() {
        return Err(Error::Config(
            "inputs mix segment tables and drawings".into(),
        ));
    }
    let tables = csv > 0;
    if tables != (ops[0] == ConvertOp::Rasterize) || ops[1..].contains(&ConvertOp::Rasterize) {
        return Err(Error::Config(
            "rasterize must come first and applies only to segment tables".into(),
        ));
    }
    for p in inputs {
        if !p.exists() {
            return Err(Error::Missing(p.clone()));
        }
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for input in inputs {
        let name = stem(input);
        let mut items: Vec<(String, Item)> = Vec::new();
        let mut rest = ops;
        if tables {
            let (w, h) = opts
                .extent
                .ok_or_else(|| Error::Config("rasterize needs a width and height".into()))?;
            let t = drawing::read_segments(input)?;
            let d = drawing::rasterize_segments(&t, w, h)?
                .with_condition(drawing::condition_from_name(&name)?)
                .with_origin(name.clone());
            items.push((format!("{name}__rasterize"), Item::Drawing(d)));
            rest = &ops[1..];
        } else {
            items.push((
                name.clone(),
                Item::Drawing(drawing::read_drawing(input, opts.snap)?),
            ));
        }
        for op in rest {
            let mut next = Vec::new();
            for (n, it) in items {
                let Item::Drawing(d) = it else {
                    return Err(Error::Config(format!("{op:?} cannot follow canvas")));
                };
                match op {
                    ConvertOp::Augment => {
                        for (v, suffix) in augment(&d).into_iter().zip(AUGMENT_SUFFIXES) {
                            next.push((format!("{n}__{suffix}"), Item::Drawing(v)));
                        }
                    }
                    ConvertOp::Canvas => {
                        next.push((format!("{n}__canvas"), Item::Canvas(extract_canvas(&d)?)))
                    }
                    ConvertOp::Rasterize => unreachable!("checked above"),
                }
            }
            items = next;
        }
        for (n, it) in items {
            let path = out_dir.join(format!("{n}.png"));
            match it {
                Item::Drawing(d) => drawing::write_drawing(&path, &d)?,
                Item::Canvas(c) => drawing::write_canvas(&path, &c)?,
            }
            written.push(path);
        }
    }
    Ok(written)
}

/// Structural drawing to its architectural drawing; convenience for
/// building sampling inputs from labels.
pub fn architectural_input(structural: &SemanticDrawing) -> SemanticDrawing {
    architectural_view(structural)
}
