use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SGD hyper-parameters and the step learning-rate schedule with linear
/// warm-up. Epochs are 1-indexed; iterations are global and 0-indexed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub warmup_iters: usize,
    pub warmup_ratio: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Global L2 norm the gradient is rescaled to before each step; `None`
    /// disables clipping.
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            base_lr: 0.0025,
            warmup_iters: 50,
            grad_clip_norm: Some(10.0),
            ..Self::full_scale()
        }
    }
}

impl TrainSchedule {
    /// The full-scale detection schedule: lr 0.01, decay by 0.1 at epochs 7
    /// and 11 of 12, 500 warm-up iterations at ratio 1/3.
    pub fn full_scale() -> Self {
        TrainSchedule {
            base_lr: 0.01,
            total_epochs: 12,
            decay_epochs: vec![7, 11],
            decay_factor: 0.1,
            warmup_iters: 500,
            warmup_ratio: 1.0 / 3.0,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 4,
            grad_clip_norm: Some(35.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.total_epochs == 0 || self.batch_size == 0 {
            return bad("total_epochs and batch_size must be >= 1".into());
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("decay_epochs must be strictly increasing, got {:?}", self.decay_epochs));
        }
        if let Some(&last) = self.decay_epochs.last() {
            if last >= self.total_epochs {
                return bad(format!("decay epoch {last} is not before total_epochs {}", self.total_epochs));
            }
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0) {
            return bad(format!("decay_factor must be positive, got {}", self.decay_factor));
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio <= 1.0) {
            return bad(format!("warmup_ratio must lie in (0, 1], got {}", self.warmup_ratio));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight_decay must be >= 0".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize, iter: usize) -> f64 {
        lr_at(self, epoch, iter)
    }
}

/// Learning rate for 1-indexed `epoch` at global iteration `iter`.
pub fn lr_at(s: &TrainSchedule, epoch: usize, iter: usize) -> f64 {
    let lr = s
        .decay_epochs
        .iter()
        .filter(|&&d| d <= epoch)
        .fold(s.base_lr, |lr, _| lr * s.decay_factor);
    if iter >= s.warmup_iters {
        return lr;
    }
    let t = iter as f64 / s.warmup_iters as f64;
    lr * (s.warmup_ratio + (1.0 - s.warmup_ratio) * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainSchedule::default().validate().unwrap();
        TrainSchedule::full_scale().validate().unwrap();
    }

    #[test]
    fn rejects_bad_decay_epochs() {
        let mut s = TrainSchedule::full_scale();
        s.decay_epochs = vec![11, 7];
        assert!(s.validate().is_err());
        s.decay_epochs = vec![7, 12];
        assert!(s.validate().is_err());
        s.decay_epochs = vec![7, 11];
        s.warmup_ratio = 0.0;
        assert!(s.validate().is_err());
    }
}
