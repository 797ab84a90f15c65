use crate::error::{BasenError, Result};

/// Linear warmup followed by cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub max_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
}

impl ScheduleConfig {
    pub fn new(max_lr: f64, warmup_ratio: f64, total_steps: usize) -> Result<Self> {
        let cfg = Self {
            max_lr,
            warmup_ratio,
            total_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return Err(BasenError::invalid(format!("max_lr must be positive, got {}", self.max_lr)));
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return Err(BasenError::invalid(format!(
                "warmup_ratio must be in (0, 1), got {}",
                self.warmup_ratio
            )));
        }
        if self.total_steps == 0 {
            return Err(BasenError::invalid("total_steps must be positive"));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_ratio * self.total_steps as f64).round() as usize).clamp(1, self.total_steps)
    }
}

/// Learning rate at `step` in `0..=total_steps`.
pub fn lr_at(step: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(BasenError::invalid(format!(
            "step {step} is past the schedule end {}",
            cfg.total_steps
        )));
    }
    let warm = cfg.warmup_steps();
    if step <= warm {
        return Ok(cfg.max_lr * step as f64 / warm as f64);
    }
    let decay = (cfg.total_steps - warm) as f64;
    let progress = (step - warm) as f64 / decay;
    Ok(cfg.max_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
