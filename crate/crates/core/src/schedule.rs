//! Reduce-on-plateau learning-rate control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    pub patience: usize,
    pub factor: f64,
    /// A new value counts as an improvement only if it beats the best by more than this.
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            lr_init: 1e-4,
            lr_min: 1e-5,
            patience: 5,
            factor: 0.5,
            min_delta: 0.0,
        }
    }
}

/// Multiplies the rate by `factor` once `patience` consecutive epochs fail to improve, then waits
/// another full `patience` window before the next reduction. The rate never drops below `lr_min`.
#[derive(Debug, Clone)]
pub struct ReduceOnPlateau<T> {
    cfg: PlateauConfig,
    lr: T,
    best: Option<T>,
    wait: usize,
}

impl<T: Scalar> ReduceOnPlateau<T> {
    pub fn new(cfg: PlateauConfig) -> Result<Self> {
        if !(cfg.factor > 0.0 && cfg.factor < 1.0) {
            return Err(Error::InvalidParams(format!(
                "plateau factor must be in (0, 1), got {}",
                cfg.factor
            )));
        }
        if !(cfg.lr_min <= cfg.lr_init) || cfg.lr_min < 0.0 {
            return Err(Error::InvalidParams(format!(
                "need 0 <= lr_min <= lr_init, got {} and {}",
                cfg.lr_min, cfg.lr_init
            )));
        }
        if cfg.patience == 0 {
            return Err(Error::InvalidParams("plateau patience must be >= 1".into()));
        }
        Ok(ReduceOnPlateau {
            lr: T::lit(cfg.lr_init),
            cfg,
            best: None,
            wait: 0,
        })
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    /// Feeds one epoch's monitored loss; returns the rate to use for the next epoch.
    pub fn step(&mut self, value: T) -> T {
        let improved = match self.best {
            None => true,
            Some(b) => value < b - T::lit(self.cfg.min_delta),
        };
        if improved {
            self.best = Some(value);
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.cfg.patience {
                let min = T::lit(self.cfg.lr_min);
                self.lr = (self.lr * T::lit(self.cfg.factor)).max(min);
                self.wait = 0;
            }
        }
        self.lr
    }
}
