use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RngState};
use super::config::{Config, DataConfig, IMAGE_MEAN, IMAGE_STD};
use super::optim::Sgd;
use crate::data_synth::generate_split;
use crate::detector::{
    assign_targets, decode_and_nms, detection_loss, evaluate_ap, AnchorSet, ApReport, DetectionBox, GtBox, AP_IOU,
};
use crate::error::{Error, Result};
use crate::model::IpgNet;
use crate::nn::Ctx;
use crate::params::ParamStore;
use crate::pyramid::{build_pyramid, normalize_image};
use crate::seed;
use crate::tensor::{Mode, Tensor};

pub const METRICS_HEADER: &str = "epoch,iter,lr,loss_cls,loss_box,val_ap,val_ap_small,val_ap_medium,val_ap_large";

/// One row of the metrics log, written after every epoch. Loss columns are
/// epoch means; `lr` is the rate used by the epoch's last iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub iter: usize,
    pub lr: f64,
    pub loss_cls: f64,
    pub loss_box: f64,
    pub val_ap: Option<f64>,
    pub val_ap_small: Option<f64>,
    pub val_ap_medium: Option<f64>,
    pub val_ap_large: Option<f64>,
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let mut bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    if rows.is_empty() {
        bytes = format!("{METRICS_HEADER}\n").into_bytes();
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

/// A normalised `(1, 3, H, W)` image with its ground truth.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub boxes: Vec<GtBox>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn synth(cfg: &DataConfig) -> Result<Self> {
        let load = |name: &str, size: usize, seed: u64| -> Result<Vec<Sample>> {
            generate_split(name, size, seed)?
                .iter()
                .map(|s| {
                    Ok(Sample {
                        image: normalize_image(&s.image, &IMAGE_MEAN, &IMAGE_STD)?,
                        boxes: s.boxes,
                    })
                })
                .collect()
        };
        Ok(Dataset {
            train: load("train", cfg.train_size, cfg.train_seed)?,
            val: load("val", cfg.val_size, cfg.val_seed)?,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where `metrics.csv` and per-epoch checkpoints go. Nothing is written
    /// when unset.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many completed epochs (for interrupted-run tests).
    pub stop_after_epoch: Option<usize>,
    /// Write a checkpoint after every epoch (needs `out_dir`).
    pub checkpoints: bool,
    pub verbose: bool,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub metrics: Vec<MetricRow>,
    pub final_report: Option<ApReport>,
}

#[derive(Clone, Copy, Debug)]
pub struct StepLoss {
    pub total: f64,
    pub cls: f64,
    pub bbox: f64,
}

/// Mutable state of one training run.
pub struct Trainer {
    pub config: Config,
    pub store: ParamStore,
    pub net: IpgNet,
    pub sgd: Sgd,
    shuffle: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed iterations.
    pub iter: usize,
    pub metrics: Vec<MetricRow>,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch:03}.ipgn")
}

impl Trainer {
    pub fn new(config: &Config) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed::derive_seed(config.seed, "params"));
        let net = IpgNet::new(&config.model, &mut store)?;
        Ok(Trainer {
            config: config.clone(),
            store,
            net,
            sgd: Sgd::new(config.schedule.momentum, config.schedule.weight_decay).with_clip(config.schedule.grad_clip_norm),
            shuffle: seed::stream(config.seed, "shuffle"),
            epoch: 0,
            iter: 0,
            metrics: Vec::new(),
        })
    }

    pub fn from_checkpoint(config: &Config, ckpt: &Checkpoint) -> Result<Self> {
        ckpt.check_digest(&config.model_digest())?;
        let mut t = Self::new(config)?;
        if ckpt.params.len() != t.store.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, the network has {}",
                ckpt.params.len(),
                t.store.len()
            )));
        }
        for (name, value) in &ckpt.params {
            let id = t
                .store
                .id(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}` in checkpoint")))?;
            let p = t.store.get_mut(id);
            if p.tensor.shape() != value.shape() {
                return Err(Error::Format(format!("parameter `{name}` has the wrong shape")));
            }
            p.tensor = value.clone();
        }
        t.sgd.load_state(&t.store, &ckpt.optimizer)?;
        t.shuffle = ckpt.rng.restore();
        t.epoch = ckpt.epoch as usize;
        t.iter = ckpt.iter as usize;
        Ok(t)
    }

    /// Loads `path` and, when `out_dir` holds a metrics log, keeps its rows
    /// up to the checkpoint's epoch so the resumed log continues it.
    pub fn resume(config: &Config, path: &Path, out_dir: Option<&Path>) -> Result<Self> {
        let mut t = Self::from_checkpoint(config, &Checkpoint::load(path)?)?;
        if let Some(csv) = out_dir.map(|d| d.join("metrics.csv")).filter(|p| p.exists()) {
            t.metrics = read_metrics(&csv)?;
            t.metrics.retain(|r| r.epoch <= t.epoch);
        }
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_digest: self.config.model_digest(),
            epoch: self.epoch as u64,
            iter: self.iter as u64,
            rng: RngState::capture(&self.shuffle),
            params: self.store.iter().map(|(_, p)| (p.name.clone(), p.tensor.clone())).collect(),
            optimizer: self.sgd.state(&self.store),
        }
    }

    pub fn anchors(&self, image: &Tensor) -> Result<AnchorSet> {
        let s = image.shape();
        self.net.anchors(s.h(), s.w())
    }

    /// One SGD step on `batch` at learning rate `lr`.
    pub fn train_step(&mut self, batch: &[&Sample], lr: f64) -> Result<StepLoss> {
        let images = Tensor::stack(&batch.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        let anchors = self.anchors(&images)?;
        let gts: Vec<Vec<GtBox>> = batch.iter().map(|s| s.boxes.clone()).collect();
        let labels: Vec<_> = gts.iter().map(|g| assign_targets(&anchors, g)).collect();
        let pyramid = build_pyramid(&images, self.config.model.pyramid_levels)?;
        self.store.zero_grad();
        let loss = {
            let mut ctx = Ctx::new(&mut self.store, Mode::Train);
            let out = self.net.forward(&mut ctx, &pyramid)?;
            let parts = detection_loss(&mut ctx.tape, &out.head, &anchors, &labels, &gts)?;
            let total = ctx.value(parts.total).item()?;
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    epoch: self.epoch + 1,
                    iter: self.iter,
                    value: total,
                });
            }
            let loss = StepLoss {
                total,
                cls: ctx.value(parts.cls).item()?,
                bbox: ctx.value(parts.bbox).item()?,
            };
            ctx.backward(parts.total)?;
            loss
        };
        self.sgd.step(&mut self.store, lr);
        self.iter += 1;
        Ok(loss)
    }

    /// Repeats one fixed batch for `iters` steps under the configured
    /// schedule; returns the total loss of every step.
    pub fn overfit(&mut self, batch: &[Sample], iters: usize) -> Result<Vec<f64>> {
        let refs: Vec<&Sample> = batch.iter().collect();
        (0..iters)
            .map(|_| {
                let lr = self.config.schedule.lr_at(1, self.iter);
                Ok(self.train_step(&refs, lr)?.total)
            })
            .collect()
    }

    /// One shuffled pass over `train`; returns (mean cls loss, mean box
    /// loss, last lr).
    pub fn train_epoch(&mut self, train: &[Sample]) -> Result<(f64, f64, f64)> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle);
        let epoch = self.epoch + 1;
        let (mut cls, mut bbox, mut lr, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(self.config.schedule.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            lr = self.config.schedule.lr_at(epoch, self.iter);
            let l = self.train_step(&batch, lr)?;
            cls += l.cls;
            bbox += l.bbox;
            steps += 1;
        }
        self.epoch = epoch;
        Ok((cls / steps as f64, bbox / steps as f64, lr))
    }

    /// Inference on a `(N, 3, H, W)` normalised batch.
    pub fn detect(&mut self, images: &Tensor) -> Result<Vec<Vec<DetectionBox>>> {
        let anchors = self.anchors(images)?;
        let pyramid = build_pyramid(images, self.config.model.pyramid_levels)?;
        let mut ctx = Ctx::new(&mut self.store, Mode::Eval);
        let out = self.net.forward(&mut ctx, &pyramid)?;
        let cls: Vec<Tensor> = out.head.iter().map(|&(c, _)| ctx.value(c).clone()).collect();
        let deltas: Vec<Tensor> = out.head.iter().map(|&(_, d)| ctx.value(d).clone()).collect();
        decode_and_nms(&cls, &deltas, &anchors, &self.config.eval)
    }

    pub fn evaluate(&mut self, samples: &[Sample]) -> Result<ApReport> {
        let mut dets = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.schedule.batch_size.max(8)) {
            let images = Tensor::stack(&chunk.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
            dets.extend(self.detect(&images)?);
        }
        let gts: Vec<Vec<GtBox>> = samples.iter().map(|s| s.boxes.clone()).collect();
        Ok(evaluate_ap(&dets, &gts, self.config.model.n_classes, AP_IOU))
    }

    /// Trains from the current epoch to the end of the schedule, evaluating
    /// and checkpointing after every epoch.
    pub fn run(&mut self, data: &Dataset, opts: &RunOptions) -> Result<RunResult> {
        if let Some(dir) = &opts.out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let last = opts
            .stop_after_epoch
            .map_or(self.config.schedule.total_epochs, |s| s.min(self.config.schedule.total_epochs));
        let mut report = None;
        while self.epoch < last {
            let (loss_cls, loss_box, lr) = self.train_epoch(&data.train)?;
            let r = self.evaluate(&data.val)?;
            let row = MetricRow {
                epoch: self.epoch,
                iter: self.iter,
                lr,
                loss_cls,
                loss_box,
                val_ap: r.ap,
                val_ap_small: r.ap_small,
                val_ap_medium: r.ap_medium,
                val_ap_large: r.ap_large,
            };
            if opts.verbose {
                eprintln!(
                    "epoch {:>3}  iter {:>6}  lr {:.2e}  cls {:.4}  box {:.4}  AP {}  AP_s {}",
                    row.epoch,
                    row.iter,
                    row.lr,
                    row.loss_cls,
                    row.loss_box,
                    fmt_opt(row.val_ap),
                    fmt_opt(row.val_ap_small)
                );
            }
            self.metrics.push(row);
            if let Some(dir) = &opts.out_dir {
                write_metrics(&dir.join("metrics.csv"), &self.metrics)?;
                if opts.checkpoints {
                    self.checkpoint().save(&dir.join(checkpoint_name(self.epoch)))?;
                }
                std::fs::write(dir.join("config.json"), self.config.to_json()).map_err(|e| Error::io(dir, e))?;
            }
            report = Some(r);
        }
        Ok(RunResult {
            metrics: self.metrics.clone(),
            final_report: report,
        })
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![MetricRow {
            epoch: 1,
            iter: 128,
            lr: 0.005,
            loss_cls: 0.25,
            loss_box: 0.125,
            val_ap: Some(0.5),
            val_ap_small: None,
            val_ap_medium: Some(0.75),
            val_ap_large: None,
        }];
        write_metrics(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(read_metrics(&path).unwrap(), rows);
        write_metrics(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), METRICS_HEADER);
    }
}
