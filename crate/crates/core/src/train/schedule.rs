use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    /// First epoch of the linear decay to zero.
    pub decay_start: usize,
    pub seed: u64,
    /// Emit sample grids every this many epochs; 0 disables.
    pub sample_every: usize,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs: 200,
            batch: 128,
            lr0: 2e-4,
            decay_start: 100,
            seed: 0,
            sample_every: 10,
            checkpoint_every: 10,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch must be positive".into()));
        }
        if self.decay_start > self.epochs {
            return Err(Error::Config(format!(
                "decay_start {} exceeds epochs {}",
                self.decay_start, self.epochs
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr0
            )));
        }
        Ok(())
    }
}

/// `lr0` before `decay_start`, then linear to 0 at `epochs`.
pub fn lr_at_epoch(e: usize, plan: &TrainPlan) -> Result<f64> {
    if e > plan.epochs {
        return Err(Error::Config(format!(
            "epoch {e} beyond the {}-epoch plan",
            plan.epochs
        )));
    }
    if e < plan.decay_start {
        return Ok(plan.lr0);
    }
    let span = plan.epochs - plan.decay_start;
    if span == 0 {
        return Ok(0.0);
    }
    Ok(plan.lr0 * (plan.epochs - e) as f64 / span as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_plan_decays_linearly() {
        let plan = TrainPlan {
            epochs: 10,
            decay_start: 6,
            lr0: 1.0,
            ..Default::default()
        };
        let lrs: Vec<f64> = (0..=10).map(|e| lr_at_epoch(e, &plan).unwrap()).collect();
        assert_eq!(
            lrs,
            vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.75, 0.5, 0.25, 0.0]
        );
        assert!(lr_at_epoch(11, &plan).is_err());
    }

    #[test]
    fn decay_start_at_end() {
        let plan = TrainPlan {
            epochs: 4,
            decay_start: 4,
            ..Default::default()
        };
        assert_eq!(lr_at_epoch(3, &plan).unwrap(), 2e-4);
        assert_eq!(lr_at_epoch(4, &plan).unwrap(), 0.0);
        let bad = TrainPlan {
            decay_start: 5,
            ..plan
        };
        assert!(bad.validate().is_err());
    }
}
