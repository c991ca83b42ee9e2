//! Two-branch training loop: both frames of a pair go through the same
//! network, and the pair objective couples the two predictions.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sfmdepth_core::camera::RelativeTransform;
use sfmdepth_core::loss::LossWeights;
use sfmdepth_core::pair::{pair_loss, FrameSupervision, PairInputs, PairSettings};
use sfmdepth_core::sampling::sample_pairs;
use sfmdepth_core::schedule::CyclicalLr;
use sfmdepth_core::sparse::{rasterize_flow, SparseFlowMap};
use sfmdepth_core::FrameId;

use crate::array::Array;
use crate::augment::{augment, AugmentConfig};
use crate::checkpoint::{tensor_infos, Checkpoint, Header, RngState};
use crate::error::{Error, Result};
use crate::gendata::Dataset;
use crate::nn::model::output_grid;
use crate::nn::ops::Tensor;
use crate::nn::{DepthNet, ModelConfig, Normalizer, Sgd};

/// Prepared batches waiting in the loader queue.
const QUEUE_DEPTH: usize = 2;
/// Mixed into the seed for the fixed validation pairs.
const VALIDATION_SALT: u64 = 0x7661_6c69_6461_7465;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Dataset directory or manifest written by `gen-data`.
    pub dataset: PathBuf,
    /// Held-out dataset for model selection.
    pub val_dataset: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    pub seed: u64,
    pub epochs: u32,
    pub batch_size: usize,
    pub gap_min: usize,
    pub gap_max: usize,
    pub momentum: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    /// Length of one full learning-rate cycle.
    pub lr_cycle_epochs: u32,
    pub lambda1: f64,
    pub lambda2_initial: f64,
    pub lambda2: f64,
    pub phase1_epochs: u32,
    pub epsilon: f64,
    pub levels: usize,
    pub base_channels: usize,
    pub growth: usize,
    /// Initialization seed; defaults to `seed`.
    pub model_seed: Option<u64>,
    pub augment_brightness: bool,
    pub augment_contrast: bool,
    pub augment_gamma: bool,
    pub augment_hsv: bool,
    pub augment_gaussian_blur: bool,
    pub augment_motion_blur: bool,
    pub augment_jpeg: bool,
    pub augment_noise: bool,
    pub augment_probability: f64,
    /// Validation pairs; 0 means one per validation frame.
    pub val_pairs: usize,
    pub checkpoint_every: u32,
    /// Prepare batches on the training thread instead of a loader thread.
    pub serial: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        let a = AugmentConfig::default();
        let m = ModelConfig::default();
        Self {
            dataset: PathBuf::new(),
            val_dataset: None,
            resume: None,
            seed: 0,
            epochs: 80,
            batch_size: 8,
            gap_min: 5,
            gap_max: 30,
            momentum: 0.9,
            lr_min: 1e-4,
            lr_max: 1e-3,
            lr_cycle_epochs: 2,
            lambda1: w.lambda1,
            lambda2_initial: w.lambda2_initial,
            lambda2: w.lambda2,
            phase1_epochs: w.phase1_epochs,
            epsilon: sfmdepth_core::layers::DEFAULT_EPSILON,
            levels: m.levels,
            base_channels: m.base_channels,
            growth: m.growth,
            model_seed: None,
            augment_brightness: a.brightness,
            augment_contrast: a.contrast,
            augment_gamma: a.gamma,
            augment_hsv: a.hsv,
            augment_gaussian_blur: a.gaussian_blur,
            augment_motion_blur: a.motion_blur,
            augment_jpeg: a.jpeg,
            augment_noise: a.noise,
            augment_probability: a.probability,
            val_pairs: 0,
            checkpoint_every: 1,
            serial: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(1 <= self.gap_min && self.gap_min <= self.gap_max) {
            return bad("need 1 <= gap_min <= gap_max");
        }
        if !(self.lr_min > 0.0 && self.lr_min < self.lr_max) {
            return bad("need 0 < lr_min < lr_max");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return bad("augment_probability must lie in [0, 1]");
        }
        if self.lr_cycle_epochs < 1 || self.checkpoint_every < 1 {
            return bad("lr_cycle_epochs and checkpoint_every must be at least 1");
        }
        self.weights().validate()?;
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2_initial: self.lambda2_initial,
            lambda2: self.lambda2,
            phase1_epochs: self.phase1_epochs,
        }
    }

    pub fn augmentation(&self) -> AugmentConfig {
        AugmentConfig {
            brightness: self.augment_brightness,
            contrast: self.augment_contrast,
            gamma: self.augment_gamma,
            hsv: self.augment_hsv,
            gaussian_blur: self.augment_gaussian_blur,
            motion_blur: self.augment_motion_blur,
            jpeg: self.augment_jpeg,
            noise: self.augment_noise,
            probability: self.augment_probability,
        }
    }

    pub fn model(&self, height: usize, width: usize) -> ModelConfig {
        ModelConfig {
            height,
            width,
            levels: self.levels,
            base_channels: self.base_channels,
            growth: self.growth,
            seed: self.model_seed.unwrap_or(self.seed),
        }
    }
}

/// One line of the step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: u32,
    pub step: u64,
    pub sfl: f64,
    pub dcl: f64,
    pub total: f64,
    pub lr: f64,
}

/// Mean losses over the pairs that contributed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossSummary {
    pub sfl: f64,
    pub dcl: f64,
    pub total: f64,
    pub pairs: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train: LossSummary,
    pub validation: Option<LossSummary>,
    pub best: bool,
}

/// Everything the loss needs for one pair, apart from the predictions.
pub struct PreparedPair {
    pub j: usize,
    pub k: usize,
    pub input_j: Tensor,
    pub input_k: Tensor,
    pub flow_jk: SparseFlowMap,
    pub flow_kj: SparseFlowMap,
    pub rel_jk: RelativeTransform,
    pub rel_kj: RelativeTransform,
}

#[derive(Debug, Clone, Copy)]
struct PairJob {
    j: FrameId,
    k: FrameId,
    seed_j: u64,
    seed_k: u64,
}

fn prepare(
    data: &Dataset,
    norm: &Normalizer,
    job: &PairJob,
    aug: Option<&AugmentConfig>,
) -> Result<PreparedPair> {
    let recon = &data.recon;
    let j = recon.frame_index(job.j)?;
    let k = recon.frame_index(job.k)?;
    let image = |i: usize, seed: u64| match aug {
        Some(a) => augment(&data.images[i], a, seed),
        None => data.images[i].clone(),
    };
    Ok(PreparedPair {
        j,
        k,
        input_j: norm.apply(&image(j, job.seed_j))?,
        input_k: norm.apply(&image(k, job.seed_k))?,
        flow_jk: rasterize_flow(recon, job.j, job.k)?,
        flow_kj: rasterize_flow(recon, job.k, job.j)?,
        rel_jk: recon.relative_transform(job.j, job.k)?,
        rel_kj: recon.relative_transform(job.k, job.j)?,
    })
}

fn settings(config: &TrainConfig, lambda2: f64) -> PairSettings {
    PairSettings {
        lambda1: config.lambda1,
        lambda2,
        epsilon: config.epsilon,
    }
}

/// Outcome of one pair through the network.
enum PairOutcome {
    Loss {
        sfl: f64,
        dcl: f64,
        total: f64,
    },
    Skipped,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub data: Arc<Dataset>,
    pub val: Option<Arc<Dataset>>,
    pub net: DepthNet,
    pub optimizer: Sgd,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: u32,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_loss: Option<f64>,
    /// Where a failing batch is written before aborting.
    pub dump_dir: Option<PathBuf>,
    val_jobs: Vec<PairJob>,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: Dataset, val: Option<Dataset>) -> Result<Self> {
        config.validate()?;
        let m = &data.manifest;
        let (net, optimizer, rng, epoch, step, best_loss) = match &config.resume {
            Some(path) => {
                let ck = Checkpoint::load(path)?;
                if (ck.header.model.height, ck.header.model.width) != (m.height, m.width) {
                    return Err(Error::Config("checkpoint image size differs from the dataset".into()));
                }
                let rng = ck
                    .header
                    .rng
                    .restore()
                    .ok_or_else(|| Error::format(path, "invalid RNG state"))?;
                (ck.net, ck.optimizer, rng, ck.header.epoch, ck.header.step, ck.header.best_loss)
            }
            None => {
                let net = DepthNet::new(config.model(m.height, m.width))?.with_normalization(m.image_mean, m.image_std);
                let opt = Sgd::new(&net.params, config.momentum as f32);
                (net, opt, ChaCha8Rng::seed_from_u64(config.seed), 0, 0, None)
            }
        };
        let val_jobs = match &val {
            Some(v) => {
                let n = if config.val_pairs > 0 { config.val_pairs } else { v.len() };
                let mut vrng = ChaCha8Rng::seed_from_u64(config.seed ^ VALIDATION_SALT);
                sample_pairs(&v.frame_ids(), config.gap_min, config.gap_max, n, &mut vrng)?
                    .into_iter()
                    .map(|(j, k)| PairJob {
                        j,
                        k,
                        seed_j: 0,
                        seed_k: 0,
                    })
                    .collect()
            }
            None => Vec::new(),
        };
        Ok(Self {
            config,
            data: Arc::new(data),
            val: val.map(Arc::new),
            net,
            optimizer,
            rng,
            epoch,
            step,
            best_loss,
            dump_dir: None,
            val_jobs,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.config.batch_size)
    }

    pub fn schedule(&self) -> CyclicalLr {
        let half = (self.steps_per_epoch() * self.config.lr_cycle_epochs as usize).div_ceil(2);
        CyclicalLr {
            lr_min: self.config.lr_min,
            lr_max: self.config.lr_max,
            half_cycle: half,
        }
    }

    /// Runs one pair forward and, when `grads` is given, backward.
    fn run_pair(
        &self,
        data: &Dataset,
        p: &PreparedPair,
        settings: &PairSettings,
        grads: Option<&mut [Vec<f32>]>,
    ) -> Result<(PairOutcome, [sfmdepth_core::grid::Grid<f64>; 2])> {
        let (out_j, trace_j) = self.net.forward(&p.input_j);
        let (out_k, trace_k) = self.net.forward(&p.input_k);
        let pred_j = output_grid(&out_j);
        let pred_k = output_grid(&out_k);
        let inputs = PairInputs {
            intrinsics: &data.recon.intrinsics,
            rel_jk: &p.rel_jk,
            rel_kj: &p.rel_kj,
            prediction_j: &pred_j,
            prediction_k: &pred_k,
            region: data.region.as_ref(),
            frame_j: FrameSupervision {
                depth: &data.depth[p.j],
                mask: &data.mask[p.j],
                flow: &p.flow_jk,
            },
            frame_k: FrameSupervision {
                depth: &data.depth[p.k],
                mask: &data.mask[p.k],
                flow: &p.flow_kj,
            },
        };
        let loss = match pair_loss(&inputs, settings) {
            Ok(l) => l,
            Err(e) if e.is_pair_skip() => return Ok((PairOutcome::Skipped, [pred_j, pred_k])),
            Err(e) => return Err(e.into()),
        };
        if let Some(grads) = grads {
            let gj: Vec<f32> = loss.grad_j.as_slice().iter().map(|&g| g as f32).collect();
            let gk: Vec<f32> = loss.grad_k.as_slice().iter().map(|&g| g as f32).collect();
            self.net.backward(&trace_j, &gj, grads);
            self.net.backward(&trace_k, &gk, grads);
        }
        Ok((
            PairOutcome::Loss {
                sfl: loss.sfl,
                dcl: loss.dcl,
                total: loss.total,
            },
            [pred_j, pred_k],
        ))
    }

    /// One optimizer step on a prepared batch. Returns `None` when every
    /// pair was skipped.
    fn train_batch(&mut self, batch: &[PreparedPair], summary: &mut LossSummary) -> Result<Option<StepRecord>> {
        let epoch = self.epoch + 1;
        let st = settings(&self.config, self.config.weights().lambda2_at(epoch));
        let data = Arc::clone(&self.data);
        let mut grads = self.net.zero_grads();
        let (mut sfl, mut dcl, mut total, mut n) = (0.0, 0.0, 0.0, 0usize);
        for (i, p) in batch.iter().enumerate() {
            let result = self.run_pair(&data, p, &st, Some(&mut grads));
            match result {
                Ok((PairOutcome::Loss { sfl: a, dcl: b, total: t }, _)) => {
                    sfl += a;
                    dcl += b;
                    total += t;
                    n += 1;
                }
                Ok((PairOutcome::Skipped, _)) => summary.skipped += 1,
                Err(Error::Core(sfmdepth_core::Error::NonFiniteLoss)) => {
                    return Err(self.dump_batch(batch, i, "loss is not finite"));
                }
                Err(e) => return Err(e),
            }
        }
        let lr = self.schedule().at(self.step as usize);
        self.step += 1;
        if n == 0 {
            return Ok(None);
        }
        let inv = 1.0 / n as f32;
        for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *g *= inv;
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(self.dump_batch(batch, batch.len(), "gradient is not finite"));
        }
        self.optimizer.step(&mut self.net.params, &grads, lr as f32);
        let nf = n as f64;
        summary.sfl += sfl;
        summary.dcl += dcl;
        summary.total += total;
        summary.pairs += n;
        Ok(Some(StepRecord {
            epoch,
            step: self.step,
            sfl: sfl / nf,
            dcl: dcl / nf,
            total: total / nf,
            lr,
        }))
    }

    /// Writes the offending batch for inspection and returns the error to
    /// abort with.
    fn dump_batch(&self, batch: &[PreparedPair], failing: usize, what: &str) -> Error {
        let msg = format!("{what} at epoch {}, step {}", self.epoch + 1, self.step + 1);
        let Some(dir) = &self.dump_dir else {
            return Error::Numerical(msg);
        };
        let ids = self.data.frame_ids();
        let write = || -> Result<()> {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let pairs: Vec<(FrameId, FrameId)> = batch.iter().map(|p| (ids[p.j], ids[p.k])).collect();
            let info = serde_json::json!({
                "error": what,
                "epoch": self.epoch + 1,
                "step": self.step + 1,
                "pairs": pairs,
                "failing_pair": failing,
            });
            let path = dir.join("batch.json");
            fs::write(&path, serde_json::to_string_pretty(&info).unwrap()).map_err(|e| Error::io(&path, e))?;
            for p in batch {
                for (idx, input) in [(p.j, &p.input_j), (p.k, &p.input_k)] {
                    let (out, _) = self.net.forward(input);
                    let id = ids[idx];
                    Array::new(input.h, input.w, 1, out.data).write(dir.join(format!("prediction_{id}.arr")))?;
                    let mut hwc = vec![0.0f32; input.data.len()];
                    let hw = input.hw();
                    for c in 0..3 {
                        for i in 0..hw {
                            hwc[i * 3 + c] = input.data[c * hw + i];
                        }
                    }
                    Array::new(input.h, input.w, 3, hwc).write(dir.join(format!("input_{id}.arr")))?;
                }
            }
            Ok(())
        };
        match write() {
            Ok(()) => Error::Numerical(format!("{msg}; batch written to {}", dir.display())),
            Err(e) => Error::Numerical(format!("{msg}; writing the batch also failed: {e}")),
        }
    }

    fn epoch_jobs(&mut self) -> Result<Vec<Vec<PairJob>>> {
        let ids = self.data.frame_ids();
        let pairs = sample_pairs(&ids, self.config.gap_min, self.config.gap_max, ids.len(), &mut self.rng)?;
        let jobs: Vec<PairJob> = pairs
            .into_iter()
            .map(|(j, k)| PairJob {
                j,
                k,
                seed_j: self.rng.random(),
                seed_k: self.rng.random(),
            })
            .collect();
        Ok(jobs.chunks(self.config.batch_size).map(<[PairJob]>::to_vec).collect())
    }

    /// Trains for one epoch, reporting each optimizer step to `log`.
    pub fn train_epoch(&mut self, log: &mut dyn FnMut(&StepRecord) -> Result<()>) -> Result<LossSummary> {
        let batches = self.epoch_jobs()?;
        let aug = self.config.augmentation();
        let norm = self.net.normalizer();
        let mut summary = LossSummary::default();
        let mut last = Vec::new();
        if self.config.serial {
            for jobs in &batches {
                let batch = jobs
                    .iter()
                    .map(|j| prepare(&self.data, &norm, j, Some(&aug)))
                    .collect::<Result<Vec<_>>>()?;
                if let Some(rec) = self.train_batch(&batch, &mut summary)? {
                    log(&rec)?;
                }
                last = batch;
            }
        } else {
            let data = Arc::clone(&self.data);
            std::thread::scope(|s| -> Result<()> {
                let (tx, rx) = sync_channel::<Result<Vec<PreparedPair>>>(QUEUE_DEPTH);
                s.spawn(move || {
                    for jobs in &batches {
                        let batch = jobs.iter().map(|j| prepare(&data, &norm, j, Some(&aug))).collect();
                        if tx.send(batch).is_err() {
                            break;
                        }
                    }
                });
                for batch in rx {
                    let batch = batch?;
                    if let Some(rec) = self.train_batch(&batch, &mut summary)? {
                        log(&rec)?;
                    }
                    last = batch;
                }
                Ok(())
            })?;
        }
        // A diverged network can leave every prediction unusable without
        // ever producing a non-finite loss.
        if summary.pairs == 0 && summary.skipped > 0 {
            return Err(self.dump_batch(&last, 0, "every pair of the epoch was skipped"));
        }
        self.epoch += 1;
        Ok(finish(summary))
    }

    /// Mean loss over the fixed validation pairs, with the final-phase
    /// consistency weight and no augmentation.
    pub fn validate(&self) -> Result<Option<LossSummary>> {
        let Some(val) = &self.val else {
            return Ok(None);
        };
        let st = settings(&self.config, self.config.lambda2);
        let norm = self.net.normalizer();
        let mut s = LossSummary::default();
        for job in &self.val_jobs {
            let p = prepare(val, &norm, job, None)?;
            match self.run_pair(val, &p, &st, None)?.0 {
                PairOutcome::Loss { sfl, dcl, total } => {
                    s.sfl += sfl;
                    s.dcl += dcl;
                    s.total += total;
                    s.pairs += 1;
                }
                PairOutcome::Skipped => s.skipped += 1,
            }
        }
        Ok((s.pairs > 0).then(|| finish(s)))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: Header {
                model: self.net.config.clone(),
                image_mean: self.net.image_mean,
                image_std: self.net.image_std,
                tensors: tensor_infos(&self.net),
                momentum: self.optimizer.momentum,
                epoch: self.epoch,
                step: self.step,
                best_loss: self.best_loss,
                rng: RngState::capture(&self.rng),
                config: serde_json::to_value(&self.config).expect("config serializes"),
            },
            net: self.net.clone(),
            optimizer: self.optimizer.clone(),
        }
    }
}

fn finish(mut s: LossSummary) -> LossSummary {
    if s.pairs > 0 {
        let n = s.pairs as f64;
        s.sfl /= n;
        s.dcl /= n;
        s.total /= n;
    }
    s
}

pub const METRICS_LOG: &str = "metrics.jsonl";
pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

pub fn epoch_checkpoint_path(out: &Path, epoch: u32) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"))
}

fn append_line<T: Serialize>(file: &mut File, path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_string(value).expect("record serializes");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Full training run writing logs and checkpoints under `out`.
pub fn train(config: &TrainConfig, out: &Path) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let data = Dataset::load(&config.dataset)?;
    let val = config.val_dataset.as_deref().map(Dataset::load).transpose()?;
    let mut trainer = Trainer::new(config.clone(), data, val)?;
    trainer.dump_dir = Some(out.join("nan_dump"));
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, crate::config::to_toml(config)).map_err(|e| Error::io(&cfg_path, e))?;

    let metrics_path = out.join(METRICS_LOG);
    let epochs_path = out.join(EPOCH_LOG);
    let mut metrics = open_append(&metrics_path)?;
    let mut epochs = open_append(&epochs_path)?;
    let mut history = Vec::new();
    while trainer.epoch < config.epochs {
        let train = trainer.train_epoch(&mut |rec| append_line(&mut metrics, &metrics_path, rec))?;
        let validation = trainer.validate()?;
        let score = validation.map(|v| v.total).unwrap_or(train.total);
        let best = train.pairs > 0 && trainer.best_loss.is_none_or(|b| score < b);
        if best {
            trainer.best_loss = Some(score);
        }
        let record = EpochRecord {
            epoch: trainer.epoch,
            train,
            validation,
            best,
        };
        append_line(&mut epochs, &epochs_path, &record)?;
        let ck = trainer.checkpoint();
        if best {
            ck.save(&out.join(BEST_CHECKPOINT))?;
        }
        if trainer.epoch % config.checkpoint_every == 0 || trainer.epoch == config.epochs {
            ck.save(&epoch_checkpoint_path(out, trainer.epoch))?;
        }
        ck.save(&out.join(LAST_CHECKPOINT))?;
        history.push(record);
    }
    Ok(history)
}
