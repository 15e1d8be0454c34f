//! Contrastive and tensor-modulus losses.

mod geometry;
mod graph;

pub use geometry::{alignment, tmc_binary, tmc_geometric, tmc_surface, uniformity, SurfacePoint};
pub use graph::{
    icnce, ictm, info_nce, info_nce_value, jtcse_loss, tmc_amended, tmc_rows, LossTerms,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// InfoNCE temperature.
    pub tau: f64,
    /// Lower clamp for the cosine inside the modulus coefficient's log.
    pub sim_clamp_eps: f64,
    /// Gaussian potential scale of the uniformity metric.
    pub uniformity_t: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.05,
            sim_clamp_eps: 1e-4,
            uniformity_t: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!(
                "tau = {} must be positive",
                self.tau
            )));
        }
        if self.sim_clamp_eps.is_nan() || self.sim_clamp_eps <= 0.0 || self.sim_clamp_eps >= 1.0 {
            return Err(Error::Config(format!(
                "sim_clamp_eps = {} must lie in (0, 1)",
                self.sim_clamp_eps
            )));
        }
        if self.uniformity_t.is_nan() || self.uniformity_t <= 0.0 {
            return Err(Error::Config(format!(
                "uniformity_t = {} must be positive",
                self.uniformity_t
            )));
        }
        Ok(())
    }
}

/// Which loss families contribute to the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossMask {
    pub nce: bool,
    pub icnce: bool,
    pub ictm: bool,
}

impl LossMask {
    pub const FULL: LossMask = LossMask {
        nce: true,
        icnce: true,
        ictm: true,
    };
    pub const NCE_ONLY: LossMask = LossMask {
        nce: true,
        icnce: false,
        ictm: false,
    };

    pub fn is_empty(&self) -> bool {
        !(self.nce || self.icnce || self.ictm)
    }
}

impl FromStr for LossMask {
    type Err = Error;

    /// Comma-separated subset of `nce`, `icnce`, `ictm`.
    fn from_str(s: &str) -> Result<Self> {
        let mut mask = LossMask {
            nce: false,
            icnce: false,
            ictm: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "nce" => mask.nce = true,
                "icnce" => mask.icnce = true,
                "ictm" => mask.ictm = true,
                other => return Err(Error::Config(format!("unknown loss term '{other}'"))),
            }
        }
        if mask.is_empty() {
            return Err(Error::Config(format!("loss mask '{s}' selects no terms")));
        }
        Ok(mask)
    }
}

impl fmt::Display for LossMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.nce, "nce"),
            (self.icnce, "icnce"),
            (self.ictm, "ictm"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        f.write_str(&names.join(","))
    }
}

/// Itemized objective. Disabled terms read 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_nce_i: f64,
    pub l_nce_ii: f64,
    pub l_icnce: f64,
    pub l_ictm: f64,
    pub total: f64,
    pub has_grad: bool,
}

impl LossReport {
    /// Name and value of the first non-finite item, if any.
    pub fn non_finite(&self) -> Option<(&'static str, f64)> {
        [
            ("l_nce_I", self.l_nce_i),
            ("l_nce_II", self.l_nce_ii),
            ("l_icnce", self.l_icnce),
            ("l_ictm", self.l_ictm),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
    }
}
