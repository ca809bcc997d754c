use serde::{Deserialize, Serialize};

use crate::blur::{default_r_max, GridThresholds, DEFAULT_BLUR_STEP, DEFAULT_PATCH_SIZE};
use crate::error::{Error, Result};
use crate::refine::{DEFAULT_CANDIDATES, DEFAULT_T_S};
use crate::solver::IrlsOptions;

/// Every tunable of a run. Serialized into each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Patch side in pixels.
    pub m: usize,
    pub stride: usize,
    /// Largest searched blur radius; `None` uses `min(15, m / 4)`.
    pub r_max: Option<f64>,
    pub blur_step: f64,
    /// Minimum blur span (pixels) for a view to be used.
    pub t_p: f64,
    /// Number of views kept around the median per-view scale.
    pub n_v: usize,
    /// Percentage of valid patches kept per view.
    pub t_c: f64,
    /// Half-width of the refinement range, as a fraction of the initial scale.
    pub t_s: f64,
    pub candidates: usize,
    pub irls: IrlsOptions,
    pub grid: GridThresholds,
    /// Worker threads; 0 uses the available parallelism.
    pub threads: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            m: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_PATCH_SIZE,
            r_max: None,
            blur_step: DEFAULT_BLUR_STEP,
            t_p: 2.0,
            n_v: 5,
            t_c: 50.0,
            t_s: DEFAULT_T_S,
            candidates: DEFAULT_CANDIDATES,
            irls: IrlsOptions::default(),
            grid: GridThresholds::default(),
            threads: 0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn r_max(&self) -> f64 {
        self.r_max.unwrap_or_else(|| default_r_max(self.m))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Domain(format!("config: {what}")));
        if self.m < 8 {
            return bad(format!("m must be at least 8, got {}", self.m));
        }
        if self.stride == 0 {
            return bad("stride must be positive".into());
        }
        let r_max = self.r_max();
        if !(r_max >= 0.0 && r_max.is_finite()) {
            return bad(format!("r_max must be non-negative, got {r_max}"));
        }
        if !(self.blur_step > 0.0 && self.blur_step.is_finite()) {
            return bad(format!("blur_step must be positive, got {}", self.blur_step));
        }
        if !(self.t_p >= 0.0) {
            return bad(format!("t_p must be non-negative, got {}", self.t_p));
        }
        if self.n_v == 0 {
            return bad("n_v must be at least 1".into());
        }
        if !(self.t_c > 0.0 && self.t_c <= 100.0) {
            return bad(format!("t_c must be in (0, 100], got {}", self.t_c));
        }
        if !(self.t_s > 0.0 && self.t_s < 1.0) {
            return bad(format!("t_s must be in (0, 1), got {}", self.t_s));
        }
        if self.candidates < 2 {
            return bad(format!("candidates must be at least 2, got {}", self.candidates));
        }
        if self.irls.max_iter == 0 || !(self.irls.eps > 0.0) || !(self.irls.tol > 0.0) {
            return bad("irls needs max_iter >= 1 and positive eps, tol".into());
        }
        let g = &self.grid;
        if !(0.0..=1.0).contains(&g.min_finite_fraction) || !(g.max_inv_depth_spread > 0.0) || !(g.min_texture_ratio >= 0.0) {
            return bad("grid thresholds out of range".into());
        }
        Ok(())
    }
}
