use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One-cycle schedule knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OneCycle {
    pub warmup_frac: f64,
    pub start_div: f64,
    pub final_div: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            warmup_frac: 0.3,
            start_div: 25.0,
            final_div: 1e4,
        }
    }
}

impl OneCycle {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_frac) || !(self.start_div >= 1.0) || !(self.final_div >= 1.0) {
            return Err(Error::validation(
                "one-cycle needs 0 <= warmup_frac < 1 and divisors >= 1",
            ));
        }
        Ok(())
    }

    /// Linear warmup from `peak/start_div` to `peak` over the first
    /// `warmup_frac` of the steps, then cosine decay to `peak/final_div` at
    /// the last step.
    pub fn lr_at(&self, step: usize, total_steps: usize, peak_lr: f64) -> Result<f64> {
        if step >= total_steps {
            return Err(Error::validation(format!(
                "step {step} outside schedule of {total_steps} steps"
            )));
        }
        let warmup = (self.warmup_frac * total_steps as f64).floor() as usize;
        let start = peak_lr / self.start_div;
        let floor = peak_lr / self.final_div;
        if step < warmup {
            return Ok(start + (peak_lr - start) * step as f64 / warmup as f64);
        }
        let span = total_steps - 1 - warmup;
        if span == 0 {
            return Ok(peak_lr);
        }
        let t = (step - warmup) as f64 / span as f64;
        Ok(floor + (peak_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

/// [`OneCycle::lr_at`] with the default knobs.
pub fn lr_at(step: usize, total_steps: usize, peak_lr: f64) -> Result<f64> {
    OneCycle::default().lr_at(step, total_steps, peak_lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_points() {
        let total = 1000;
        assert!((lr_at(0, total, 1e-4).unwrap() - 4e-6).abs() < 1e-18);
        assert_eq!(lr_at(300, total, 1e-4).unwrap(), 1e-4);
        assert!((lr_at(999, total, 1e-4).unwrap() - 1e-8).abs() < 1e-20);
        assert!(lr_at(1000, total, 1e-4).is_err());
    }

    #[test]
    fn shape_is_unimodal() {
        let total = 137;
        let lrs: Vec<f64> = (0..total).map(|s| lr_at(s, total, 3e-3).unwrap()).collect();
        let peak = lrs.iter().cloned().fold(0.0, f64::max);
        let at = lrs.iter().position(|&v| v == peak).unwrap();
        assert_eq!(at, 41);
        assert!(lrs[..at].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[at..].windows(2).all(|w| w[0] > w[1]));
        assert_eq!(lr_at(0, 1, 1.0).unwrap(), 1.0);
    }
}
