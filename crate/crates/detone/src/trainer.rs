//! Training orchestration: the two-stage schedule (pretraining of the
//! initial-reconstruction subnet, then joint end-to-end training with the
//! combined loss), checkpointing with resume, evaluation over a test set,
//! and the structure-aware vs. plain-DCNN ablation.
//!
//! Determinism and resumability hang on one rule: the mini-batch for
//! step `t` of a phase is sampled with a seed derived from
//! `(master seed, phase tag, t)` and from nothing else. A run restored
//! from a checkpoint at step `k` therefore sees exactly the batches an
//! uninterrupted run would have seen. (With nonzero momentum the
//! checkpoint cannot carry the velocity buffers — the format stores
//! weights only — so bit-exact resume holds for the default momentum 0.)

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use detone_core::halftone::GrayImage;
use detone_core::metrics::{self, QualityScore};
use detone_core::network::{
    build_baseline_dcnn, Checkpoint, CheckpointError, NetworkError, NetworkSpec, Stage,
    StructureAwareNet, Subnet,
};
use detone_core::rng::mix_seed;
use detone_core::tensor::{mse_loss, Tensor, TensorError};
use log::info;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{make_batch, sample_patches, Batch, DatasetError, ImageTriple};

const TAG_PRETRAIN: u64 = 0x5052_4554;
const TAG_E2E: u64 = 0x454e_4432;
const TAG_BASELINE: u64 = 0x4241_5345;
const TAG_HOLDOUT: u64 = 0x484f_4c44;

fn step_seed(master: u64, phase: u64, step: u64) -> u64 {
    mix_seed(mix_seed(master, phase), step)
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{phase} loss became non-finite at step {step}; aborted with the last good checkpoint (step {})", last_good.step)]
    NonFiniteLoss {
        phase: &'static str,
        step: u64,
        last_good: Box<Checkpoint>,
    },
    #[error("corpus has no trainable images")]
    EmptyCorpus,
    #[error("checkpoint architecture does not match the configured spec: {0}")]
    SpecMismatch(#[from] Box<CheckpointError>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// All training hyperparameters. `desk` is the fast CPU profile used by
/// the test suite; `paper` is the full-scale schedule (200 epochs of
/// 1,000 iterations at batch 64 and learning rate 1e-5 on the 16/6/16
/// depth, width-64 model).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch: usize,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub momentum: f32,
    /// Weight of the structure-map loss in the combined objective.
    pub lambda_ismp: f32,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 disables periodic
    /// saves; the final checkpoint is always produced).
    pub checkpoint_every: usize,
    /// Optimizer steps of the pretraining phase.
    pub pretrain_iters: usize,
    /// Fraction of corpus images reserved for per-epoch PSNR logging.
    pub holdout: f32,
    pub spec: NetworkSpec,
    /// Depth of the sequential baseline used by the ablation.
    pub baseline_depth: usize,
    /// Keep the initial-reconstruction weights fixed during end-to-end
    /// training (experimentation hook; off by default, and off in the
    /// reference schedule).
    pub freeze_irs: bool,
}

impl TrainConfig {
    /// Tiny CPU-scale profile: 3/3/3 depths at width 16, batch 8,
    /// 40 epochs x 500 iterations, learning rate 1e-3 (the full-scale
    /// 1e-5 is tuned for the large model and barely moves this one).
    /// The depth-5 baseline approximately matches its parameter count.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 8,
            epochs: 40,
            iters_per_epoch: 500,
            momentum: 0.0,
            lambda_ismp: 1.0,
            seed: 1,
            checkpoint_every: 5,
            pretrain_iters: 2_000,
            holdout: 0.05,
            spec: NetworkSpec::new(3, 3, 3, 16, 5).expect("desk spec is valid"),
            baseline_depth: 5,
            freeze_irs: false,
        }
    }

    /// Full-scale profile; expect GPU-class runtimes on the 500-image
    /// corpus.
    pub fn paper() -> Self {
        TrainConfig {
            lr: 1e-5,
            batch: 64,
            epochs: 200,
            iters_per_epoch: 1_000,
            momentum: 0.0,
            lambda_ismp: 1.0,
            seed: 1,
            checkpoint_every: 1,
            pretrain_iters: 20_000,
            holdout: 0.05,
            spec: NetworkSpec::default(),
            baseline_depth: 17,
            freeze_irs: false,
        }
    }

    pub fn total_end_to_end_steps(&self) -> u64 {
        (self.epochs * self.iters_per_epoch) as u64
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.lr.is_finite() || self.lr <= 0.0 || self.batch == 0 || self.lambda_ismp < 0.0 {
            // Mirrors the invariants lr > 0, batch >= 1, lambda >= 0.
            return Err(TrainError::Network(NetworkError::InconsistentSpec {
                what: "train config (lr > 0, batch >= 1, lambda >= 0)",
            }));
        }
        self.spec.validate()?;
        Ok(())
    }
}

/// One loss record per optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub rs_loss: f64,
    pub ismp_loss: f64,
    pub total: f64,
    pub wallclock_ms: u64,
}

/// Per-epoch holdout quality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochEval {
    pub epoch: usize,
    pub holdout_psnr_db: f64,
}

/// Loss curve and holdout trace of one training phase.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
    pub holdout: Vec<EpochEval>,
}

impl TrainLog {
    pub fn last_total(&self) -> Option<f64> {
        self.records.last().map(|r| r.total)
    }

    /// Append records as CSV (`step,rs_loss,ismp_loss,total,wallclock_ms`),
    /// writing the header only when the file starts empty.
    pub fn append_csv(&self, path: &Path) -> Result<(), TrainError> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| TrainError::Io {
                path: path.display().to_string(),
                source,
            })?;
        let mut buf = String::new();
        if fresh {
            buf.push_str("step,rs_loss,ismp_loss,total,wallclock_ms\n");
        }
        for r in &self.records {
            buf.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.rs_loss, r.ismp_loss, r.total, r.wallclock_ms
            ));
        }
        file.write_all(buf.as_bytes()).map_err(|source| TrainError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Owns the corpus split and configuration for one training run.
pub struct Trainer {
    config: TrainConfig,
    train_set: Vec<ImageTriple>,
    holdout_set: Vec<ImageTriple>,
    checkpoint_path: Option<PathBuf>,
    log_path: Option<PathBuf>,
}

impl Trainer {
    /// Split the corpus deterministically (`holdout` fraction, at least
    /// one image always kept for training) and set up a run.
    pub fn new(config: TrainConfig, corpus: Vec<ImageTriple>) -> Result<Self, TrainError> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let mut indices: Vec<usize> = (0..corpus.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, TAG_HOLDOUT));
        indices.shuffle(&mut rng);
        let holdout_count = ((corpus.len() as f32 * config.holdout).floor() as usize)
            .min(corpus.len() - 1);
        let holdout_idx: std::collections::HashSet<usize> =
            indices[..holdout_count].iter().copied().collect();
        let mut train_set = Vec::with_capacity(corpus.len() - holdout_count);
        let mut holdout_set = Vec::with_capacity(holdout_count);
        for (i, t) in corpus.into_iter().enumerate() {
            if holdout_idx.contains(&i) {
                holdout_set.push(t);
            } else {
                train_set.push(t);
            }
        }
        Ok(Trainer {
            config,
            train_set,
            holdout_set,
            checkpoint_path: None,
            log_path: None,
        })
    }

    /// Where periodic and final checkpoints are written.
    pub fn with_checkpoint_path(mut self, path: PathBuf) -> Self {
        self.checkpoint_path = Some(path);
        self
    }

    /// Where the loss CSV is appended.
    pub fn with_log_path(mut self, path: PathBuf) -> Self {
        self.log_path = Some(path);
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn train_set(&self) -> &[ImageTriple] {
        &self.train_set
    }

    pub fn holdout_set(&self) -> &[ImageTriple] {
        &self.holdout_set
    }

    fn save_checkpoint(&self, ck: &Checkpoint) -> Result<(), TrainError> {
        if let Some(path) = &self.checkpoint_path {
            fs::write(path, ck.to_bytes()).map_err(|source| TrainError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }

    fn append_log(&self, log: &TrainLog) -> Result<(), TrainError> {
        if let Some(path) = &self.log_path {
            log.append_csv(path)?;
        }
        Ok(())
    }

    /// Stage one: train the initial-reconstruction subnet alone against
    /// the grayscale target; the other two subnets keep their fresh
    /// initialization.
    pub fn pretrain_irs(&self) -> Result<(Checkpoint, TrainLog), TrainError> {
        let net = StructureAwareNet::build(&self.config.spec, self.config.seed)?;
        let start = Checkpoint::new(net, Stage::IrsPretrained, 0, self.config.seed);
        self.pretrain_from(start)
    }

    /// Continue pretraining from a saved state (no-op when the phase is
    /// already complete).
    pub fn pretrain_from(&self, from: Checkpoint) -> Result<(Checkpoint, TrainLog), TrainError> {
        let cfg = &self.config;
        let seed = from.seed;
        let mut net = from.net;
        let mut log = TrainLog::default();
        let mut last_good = Checkpoint::new(net.clone(), Stage::IrsPretrained, from.step, seed);
        let clock = Instant::now();
        let ckpt_interval = (cfg.checkpoint_every * cfg.iters_per_epoch) as u64;
        for step in from.step..cfg.pretrain_iters as u64 {
            let patches = sample_patches(
                &self.train_set,
                cfg.batch,
                step_seed(seed, TAG_PRETRAIN, step),
            );
            let batch = make_batch(&patches, cfg.batch)?;
            let (out, cache) = net.irs().forward(&batch.halftone)?;
            let (loss, grad) = mse_loss(&out, &batch.gray)?;
            if !loss.is_finite() {
                self.save_checkpoint(&last_good)?;
                self.append_log(&log)?;
                return Err(TrainError::NonFiniteLoss {
                    phase: "pretraining",
                    step,
                    last_good: Box::new(last_good),
                });
            }
            net.irs_mut().backward(&cache, &grad)?;
            net.irs_mut().sgd_step(cfg.lr, cfg.momentum);
            log.records.push(LossRecord {
                step,
                rs_loss: loss as f64,
                ismp_loss: 0.0,
                total: loss as f64,
                wallclock_ms: clock.elapsed().as_millis() as u64,
            });
            let done = step + 1;
            if ckpt_interval > 0 && done % ckpt_interval == 0 {
                last_good = Checkpoint::new(net.clone(), Stage::IrsPretrained, done, seed);
                self.save_checkpoint(&last_good)?;
                info!(
                    "pretraining step {done}/{}: loss {loss:.6}",
                    cfg.pretrain_iters
                );
            }
        }
        let ck = Checkpoint::new(net, Stage::IrsPretrained, cfg.pretrain_iters as u64, seed);
        self.save_checkpoint(&ck)?;
        self.append_log(&log)?;
        Ok((ck, log))
    }

    /// Stage two: joint training of all three subnets with
    /// `mse(reconstruction, gray) + lambda * mse(structure_map, gradient)`.
    pub fn train_end_to_end(&self, from: Checkpoint) -> Result<(Checkpoint, TrainLog), TrainError> {
        let cfg = &self.config;
        let seed = from.seed;
        let start_step = match from.stage {
            Stage::EndToEnd => from.step,
            Stage::IrsPretrained => 0,
        };
        let mut net = from.net;
        let mut log = TrainLog::default();
        let mut last_good = Checkpoint::new(net.clone(), Stage::EndToEnd, start_step, seed);
        let clock = Instant::now();
        let total = cfg.total_end_to_end_steps();
        for step in start_step..total {
            let patches =
                sample_patches(&self.train_set, cfg.batch, step_seed(seed, TAG_E2E, step));
            let batch = make_batch(&patches, cfg.batch)?;
            let out = net.forward_full(&batch.halftone)?;
            let (rs_loss, grad_recon) = mse_loss(&out.reconstruction, &batch.gray)?;
            let (ismp_loss, grad_smap_raw) = mse_loss(&out.structure_map, &batch.gradient)?;
            let total_loss = rs_loss + cfg.lambda_ismp * ismp_loss;
            if !total_loss.is_finite() {
                self.save_checkpoint(&last_good)?;
                self.append_log(&log)?;
                return Err(TrainError::NonFiniteLoss {
                    phase: "end-to-end training",
                    step,
                    last_good: Box::new(last_good),
                });
            }
            let grad_smap = grad_smap_raw.scaled(cfg.lambda_ismp);
            net.backward_full(&grad_recon, &grad_smap)?;
            if cfg.freeze_irs {
                net.irs_mut().zero_grads();
            }
            net.sgd_step(cfg.lr, cfg.momentum);
            log.records.push(LossRecord {
                step,
                rs_loss: rs_loss as f64,
                ismp_loss: ismp_loss as f64,
                total: total_loss as f64,
                wallclock_ms: clock.elapsed().as_millis() as u64,
            });
            let done = step + 1;
            if done % cfg.iters_per_epoch as u64 == 0 {
                let epoch = (done / cfg.iters_per_epoch as u64) as usize;
                if !self.holdout_set.is_empty() {
                    let psnr = holdout_psnr(&net, &self.holdout_set)?;
                    log.holdout.push(EpochEval {
                        epoch,
                        holdout_psnr_db: psnr,
                    });
                    info!(
                        "epoch {epoch}/{}: loss {total_loss:.6}, holdout PSNR {psnr:.2} dB",
                        cfg.epochs
                    );
                } else {
                    info!("epoch {epoch}/{}: loss {total_loss:.6}", cfg.epochs);
                }
                if cfg.checkpoint_every > 0 && epoch.is_multiple_of(cfg.checkpoint_every) {
                    last_good = Checkpoint::new(net.clone(), Stage::EndToEnd, done, seed);
                    self.save_checkpoint(&last_good)?;
                }
            }
        }
        let ck = Checkpoint::new(net, Stage::EndToEnd, total, seed);
        self.save_checkpoint(&ck)?;
        self.append_log(&log)?;
        Ok((ck, log))
    }

    /// Run the full schedule: pretraining followed by end-to-end training.
    pub fn run(&self) -> Result<(Checkpoint, TrainLog), TrainError> {
        let (pre, mut log) = self.pretrain_irs()?;
        let (ck, e2e_log) = self.train_end_to_end(pre)?;
        log.records.extend(e2e_log.records);
        log.holdout = e2e_log.holdout;
        Ok((ck, log))
    }

    /// Continue an interrupted run from a checkpoint, finishing whichever
    /// phase it was in and any later phase.
    pub fn resume(&self, from: Checkpoint) -> Result<(Checkpoint, TrainLog), TrainError> {
        detone_core::network::ensure_spec_matches(&from, &self.config.spec)?;
        match from.stage {
            Stage::IrsPretrained => {
                let (pre, mut log) = if from.step < self.config.pretrain_iters as u64 {
                    self.pretrain_from(from)?
                } else {
                    (from, TrainLog::default())
                };
                let (ck, e2e_log) = self.train_end_to_end(pre)?;
                log.records.extend(e2e_log.records);
                log.holdout = e2e_log.holdout;
                Ok((ck, log))
            }
            Stage::EndToEnd => self.train_end_to_end(from),
        }
    }

    /// Train the sequential baseline for the same total number of
    /// optimizer steps as the two-stage schedule, on its own batch stream.
    pub fn train_baseline(&self) -> Result<(Subnet<f32>, TrainLog), TrainError> {
        let cfg = &self.config;
        let mut net = build_baseline_dcnn::<f32>(cfg.baseline_depth, cfg.spec.hidden(), cfg.seed)?;
        let mut log = TrainLog::default();
        let clock = Instant::now();
        let total = cfg.pretrain_iters as u64 + cfg.total_end_to_end_steps();
        for step in 0..total {
            let patches =
                sample_patches(&self.train_set, cfg.batch, step_seed(cfg.seed, TAG_BASELINE, step));
            let batch = make_batch(&patches, cfg.batch)?;
            let (out, cache) = net.forward(&batch.halftone)?;
            let (loss, grad) = mse_loss(&out, &batch.gray)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    phase: "baseline training",
                    step,
                    last_good: Box::new(Checkpoint::new(
                        StructureAwareNet::build(&cfg.spec, cfg.seed)?,
                        Stage::IrsPretrained,
                        0,
                        cfg.seed,
                    )),
                });
            }
            net.backward(&cache, &grad)?;
            net.sgd_step(cfg.lr, cfg.momentum);
            log.records.push(LossRecord {
                step,
                rs_loss: loss as f64,
                ismp_loss: 0.0,
                total: loss as f64,
                wallclock_ms: clock.elapsed().as_millis() as u64,
            });
            let done = step + 1;
            if done % cfg.iters_per_epoch as u64 == 0 {
                info!("baseline step {done}/{total}: loss {loss:.6}");
            }
        }
        Ok((net, log))
    }
}

/// Clamp a reconstruction tensor channel into a writable image.
pub fn reconstruction_to_image(t: &Tensor<f32>) -> GrayImage {
    GrayImage::from_tensor_channel(t, 0, 0)
}

fn holdout_psnr(net: &StructureAwareNet<f32>, holdout: &[ImageTriple]) -> Result<f64, TrainError> {
    let scores: Vec<f64> = holdout
        .par_iter()
        .map(|t| {
            let out = net.infer(&t.halftone.to_tensor())?;
            let recon = reconstruction_to_image(&out.reconstruction);
            Ok(metrics::psnr(&recon, &t.gray, 1.0).expect("same dims"))
        })
        .collect::<Result<_, NetworkError>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Per-image evaluation row.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub name: String,
    pub score: QualityScore,
}

/// Evaluation table: one row per test image plus the average.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub avg: QualityScore,
}

fn average(scores: impl Iterator<Item = QualityScore> + Clone) -> QualityScore {
    let n = scores.clone().count().max(1) as f64;
    QualityScore {
        psnr_db: scores.clone().map(|s| s.psnr_db).sum::<f64>() / n,
        ssim: scores.map(|s| s.ssim).sum::<f64>() / n,
    }
}

/// Reconstruct every test image (halftoned through the same pipeline)
/// with the full model and score PSNR/SSIM against the grayscale
/// original. Whole images go through the network at once; the all-conv
/// stacks handle any size at or above the patch size.
pub fn evaluate_net(
    net: &StructureAwareNet<f32>,
    test: &[ImageTriple],
) -> Result<EvalReport, TrainError> {
    let rows: Vec<EvalRow> = test
        .par_iter()
        .map(|t| {
            let out = net.infer(&t.halftone.to_tensor())?;
            let recon = reconstruction_to_image(&out.reconstruction);
            let score = metrics::quality(&recon, &t.gray).expect("test images exceed 11x11");
            Ok(EvalRow {
                name: t.source_id.clone(),
                score,
            })
        })
        .collect::<Result<_, NetworkError>>()?;
    let avg = average(rows.iter().map(|r| r.score));
    Ok(EvalReport { rows, avg })
}

/// Same as [`evaluate_net`] for a sequential (baseline) stack.
pub fn evaluate_subnet(net: &Subnet<f32>, test: &[ImageTriple]) -> Result<EvalReport, TrainError> {
    let rows: Vec<EvalRow> = test
        .par_iter()
        .map(|t| {
            let out = net.infer(&t.halftone.to_tensor())?;
            let recon = reconstruction_to_image(&out);
            let score = metrics::quality(&recon, &t.gray).expect("test images exceed 11x11");
            Ok(EvalRow {
                name: t.source_id.clone(),
                score,
            })
        })
        .collect::<Result<_, NetworkError>>()?;
    let avg = average(rows.iter().map(|r| r.score));
    Ok(EvalReport { rows, avg })
}

/// Score the raw halftones themselves (the no-reconstruction floor).
pub fn evaluate_identity(test: &[ImageTriple]) -> EvalReport {
    let rows: Vec<EvalRow> = test
        .iter()
        .map(|t| EvalRow {
            name: t.source_id.clone(),
            score: metrics::quality(&t.halftone.as_gray(), &t.gray)
                .expect("test images exceed 11x11"),
        })
        .collect();
    let avg = average(rows.iter().map(|r| r.score));
    EvalReport { rows, avg }
}

/// Side-by-side comparison of the structure-aware model and the
/// sequential baseline on one test set.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub proposed: QualityScore,
    pub baseline: QualityScore,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub avg_proposed: QualityScore,
    pub avg_baseline: QualityScore,
}

/// Train both models under the same seed and step budget, then evaluate
/// them on the same test triples.
pub fn run_ablation(
    config: TrainConfig,
    corpus: Vec<ImageTriple>,
    test: &[ImageTriple],
) -> Result<AblationReport, TrainError> {
    let trainer = Trainer::new(config, corpus)?;
    info!("ablation: training the structure-aware model");
    let (ck, _) = trainer.run()?;
    info!("ablation: training the sequential baseline");
    let (baseline, _) = trainer.train_baseline()?;
    let proposed_report = evaluate_net(&ck.net, test)?;
    let baseline_report = evaluate_subnet(&baseline, test)?;
    let rows = proposed_report
        .rows
        .iter()
        .zip(&baseline_report.rows)
        .map(|(p, b)| AblationRow {
            name: p.name.clone(),
            proposed: p.score,
            baseline: b.score,
        })
        .collect();
    Ok(AblationReport {
        rows,
        avg_proposed: proposed_report.avg,
        avg_baseline: baseline_report.avg,
    })
}

/// Outcome of an overfit run on one fixed batch.
#[derive(Clone, Copy, Debug)]
pub struct OverfitOutcome {
    /// Steps actually taken (stops early once below the target).
    pub steps: usize,
    /// Final combined loss.
    pub final_loss: f32,
    /// Final reconstruction term alone; `-10*log10` of it is the
    /// training-patch PSNR.
    pub final_rs_loss: f32,
}

/// Drive the full model into a single repeated batch until the combined
/// loss drops below `stop_below` (or `max_steps` run out). The smoke test
/// that the whole gradient graph is wired correctly.
#[allow(clippy::too_many_arguments)]
pub fn overfit_fixed_batch(
    spec: &NetworkSpec,
    batch: &Batch,
    lr: f32,
    momentum: f32,
    lambda: f32,
    max_steps: usize,
    stop_below: f32,
    seed: u64,
) -> Result<OverfitOutcome, TrainError> {
    let mut net = StructureAwareNet::build(spec, seed)?;
    let mut last = f32::INFINITY;
    let mut last_rs = f32::INFINITY;
    for step in 0..max_steps {
        let out = net.forward_full(&batch.halftone)?;
        let (rs_loss, grad_recon) = mse_loss(&out.reconstruction, &batch.gray)?;
        let (ismp_loss, grad_smap_raw) = mse_loss(&out.structure_map, &batch.gradient)?;
        last = rs_loss + lambda * ismp_loss;
        last_rs = rs_loss;
        if !last.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                phase: "overfit",
                step: step as u64,
                last_good: Box::new(Checkpoint::new(net, Stage::EndToEnd, step as u64, seed)),
            });
        }
        if last < stop_below {
            return Ok(OverfitOutcome {
                steps: step,
                final_loss: last,
                final_rs_loss: last_rs,
            });
        }
        let grad_smap = grad_smap_raw.scaled(lambda);
        net.backward_full(&grad_recon, &grad_smap)?;
        net.sgd_step(lr, momentum);
    }
    Ok(OverfitOutcome {
        steps: max_steps,
        final_loss: last,
        final_rs_loss: last_rs,
    })
}

/// IRS-only variant of [`overfit_fixed_batch`] for the pretraining path.
pub fn overfit_irs_fixed_batch(
    spec: &NetworkSpec,
    batch: &Batch,
    lr: f32,
    momentum: f32,
    max_steps: usize,
    stop_below: f32,
    seed: u64,
) -> Result<OverfitOutcome, TrainError> {
    let mut net = StructureAwareNet::build(spec, seed)?;
    let mut last = f32::INFINITY;
    for step in 0..max_steps {
        let (out, cache) = net.irs().forward(&batch.halftone)?;
        let (loss, grad) = mse_loss(&out, &batch.gray)?;
        last = loss;
        if !last.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                phase: "overfit",
                step: step as u64,
                last_good: Box::new(Checkpoint::new(net, Stage::IrsPretrained, step as u64, seed)),
            });
        }
        if last < stop_below {
            return Ok(OverfitOutcome {
                steps: step,
                final_loss: last,
                final_rs_loss: last,
            });
        }
        net.irs_mut().backward(&cache, &grad)?;
        net.irs_mut().sgd_step(lr, momentum);
    }
    Ok(OverfitOutcome {
        steps: max_steps,
        final_loss: last,
        final_rs_loss: last,
    })
}
