use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::N_BOUNDARIES;
use crate::error::{Error, Result};
use crate::model::ParamLayout;

/// Normal density location and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub loc: f64,
    pub scale: f64,
}

impl NormalPrior {
    pub const fn new(loc: f64, scale: f64) -> Self {
        Self { loc, scale }
    }

    /// Log-density up to an additive constant, and its derivative.
    #[inline]
    pub fn logp_grad(&self, x: f64) -> (f64, f64) {
        let u = (x - self.loc) / self.scale;
        (-0.5 * u * u, -u / self.scale)
    }
}

/// Prior hyperparameters for every block.
///
/// Every prior is placed on the unconstrained coordinate of its block:
/// threshold and criteria rows use the first cutpoint and the log of each
/// increment, detection uses `log d`, and shift blocks use their free
/// (pre sum-to-zero) values. A normal density on `log d` is the log-normal
/// density on `d` times the transform Jacobian, so no separate Jacobian term
/// is needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub theta: NormalPrior,
    pub gamma: NormalPrior,
    pub b_first: NormalPrior,
    pub b_log_increment: NormalPrior,
    pub log_d: NormalPrior,
    pub delta_d: NormalPrior,
    pub c_first: NormalPrior,
    pub c_log_increment: NormalPrior,
    pub delta_c: NormalPrior,
    pub omega: NormalPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            theta: NormalPrior::new(0.0, 1.0),
            gamma: NormalPrior::new(0.0, 1.0),
            b_first: NormalPrior::new(0.0, 2.0),
            b_log_increment: NormalPrior::new(0.0, 1.0),
            log_d: NormalPrior::new(1.0, 0.5),
            delta_d: NormalPrior::new(0.0, 0.3),
            c_first: NormalPrior::new(0.0, 2.0),
            c_log_increment: NormalPrior::new(0.0, 1.0),
            delta_c: NormalPrior::new(0.0, 0.3),
            omega: NormalPrior::new(0.0, 1.5),
        }
    }
}

impl PriorConfig {
    /// Standard normal on every unconstrained coordinate.
    pub fn unit() -> Self {
        let n = NormalPrior::new(0.0, 1.0);
        Self {
            theta: n,
            gamma: n,
            b_first: n,
            b_log_increment: n,
            log_d: n,
            delta_d: n,
            c_first: n,
            c_log_increment: n,
            delta_c: n,
            omega: n,
        }
    }

    /// Prior of unconstrained coordinate `k` under `layout`.
    pub fn for_coordinate(&self, layout: &ParamLayout, k: usize) -> NormalPrior {
        let row_prior = |start: usize, first: NormalPrior, inc: NormalPrior| {
            if (k - start).is_multiple_of(N_BOUNDARIES) {
                first
            } else {
                inc
            }
        };
        if layout.theta.contains(&k) {
            self.theta
        } else if layout.gamma.contains(&k) {
            self.gamma
        } else if layout.b.contains(&k) {
            row_prior(layout.b.start, self.b_first, self.b_log_increment)
        } else if layout.log_d.contains(&k) {
            self.log_d
        } else if layout.delta_d.contains(&k) {
            self.delta_d
        } else if layout.c.contains(&k) {
            row_prior(layout.c.start, self.c_first, self.c_log_increment)
        } else if layout.delta_c.contains(&k) {
            self.delta_c
        } else {
            self.omega
        }
    }

    fn blocks(&self) -> [(&'static str, NormalPrior); 10] {
        [
            ("theta", self.theta),
            ("gamma", self.gamma),
            ("b_first", self.b_first),
            ("b_log_increment", self.b_log_increment),
            ("log_d", self.log_d),
            ("delta_d", self.delta_d),
            ("c_first", self.c_first),
            ("c_log_increment", self.c_log_increment),
            ("delta_c", self.delta_c),
            ("omega", self.omega),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in self.blocks() {
            if !(p.scale > 0.0 && p.scale.is_finite() && p.loc.is_finite()) {
                return Err(Error::Config(format!(
                    "prior {name}: scale must be positive and finite"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str, path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::parse(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }
}
