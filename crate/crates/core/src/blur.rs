//! Per-patch defocus estimation from a left/right DP patch pair.
//!
//! For a candidate signed radius `r` the left patch is re-blurred with the
//! right-view PSF and the right patch with the left-view PSF; at the true
//! radius both become the same doubly blurred texture. The estimate is the
//! candidate with the smallest Frobenius residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::psf::{flip_h, psf_side, right_psf, Patch, PreparedPatch, PsfKernel};
use crate::view::DpView;

pub const DEFAULT_PATCH_SIZE: usize = 64;
pub const DEFAULT_BLUR_STEP: f64 = 0.1;

/// Largest searched radius for a patch of side `m`.
pub fn default_r_max(m: usize) -> f64 {
    (m as f64 / 4.0).min(15.0)
}

/// Symmetric grid `-r_max..=r_max` in steps of `step`, ascending.
pub fn blur_candidates(r_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) || !(r_max >= 0.0 && r_max.is_finite()) {
        return Err(Error::Domain(format!(
            "blur grid needs r_max >= 0 and step > 0 (got {r_max}, {step})"
        )));
    }
    let n = (r_max / step + 1e-9).floor() as i64;
    Ok((-n..=n).map(|i| i as f64 * step).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurEstimate {
    pub radius_px: f64,
    /// Frobenius residual at the minimizer.
    pub loss: f64,
    /// Residual at the minimizer over the mean residual of all candidates;
    /// near 0 for a sharp, confident minimum and near 1 for a flat curve.
    pub relative_loss: f64,
    pub patch_id: usize,
    pub view_id: usize,
}

/// Precomputed kernels for a fixed candidate grid and patch size.
pub struct BlurSearch {
    // (r, right kernel, left kernel), in tie-break order: |r| then r.
    kernels: Vec<(f64, PsfKernel, PsfKernel)>,
    window: usize,
}

impl BlurSearch {
    pub fn new(candidates: &[f64], patch_size: usize) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Domain("empty blur candidate list".into()));
        }
        let widest = candidates.iter().map(|r| psf_side(*r)).max().unwrap();
        if widest >= patch_size {
            return Err(Error::Dimension(format!(
                "largest candidate kernel ({widest} px) does not fit a {patch_size} px patch"
            )));
        }
        let mut order: Vec<f64> = candidates.to_vec();
        order.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
        order.dedup();
        let kernels = order
            .into_iter()
            .map(|r| {
                let right = right_psf(r)?;
                let left = flip_h(&right);
                Ok((r, right, left))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BlurSearch {
            kernels,
            window: patch_size - widest + 1,
        })
    }

    /// Side of the centered window every candidate is compared on.
    pub fn window(&self) -> usize {
        self.window
    }

    /// Residual of every candidate, in ascending-`r` order.
    pub fn loss_curve(&self, gl: &Patch, gr: &Patch) -> Result<Vec<(f64, f64)>> {
        let mut curve = self.residuals(gl, gr)?;
        curve.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(curve)
    }

    fn residuals(&self, gl: &Patch, gr: &Patch) -> Result<Vec<(f64, f64)>> {
        check_pair(gl, gr)?;
        let pl = PreparedPatch::new(gl);
        let pr = PreparedPatch::new(gr);
        let w = self.window;
        self.kernels
            .iter()
            .map(|(r, right, left)| {
                let a = pl.convolve_centered(right, w, w)?;
                let b = pr.convolve_centered(left, w, w)?;
                Ok((*r, a.frobenius_distance(&b)?))
            })
            .collect()
    }

    pub fn estimate(&self, gl: &Patch, gr: &Patch) -> Result<BlurEstimate> {
        let residuals = self.residuals(gl, gr)?;
        // Candidates are visited by increasing |r|, so a strict comparison
        // keeps the smallest radius among exact ties.
        let (mut best_r, mut best) = residuals[0];
        for &(r, loss) in &residuals[1..] {
            if loss < best {
                best = loss;
                best_r = r;
            }
        }
        let mean = residuals.iter().map(|(_, l)| l).sum::<f64>() / residuals.len() as f64;
        let relative_loss = if mean > 0.0 { best / mean } else { 1.0 };
        Ok(BlurEstimate {
            radius_px: best_r,
            loss: best,
            relative_loss,
            patch_id: 0,
            view_id: 0,
        })
    }
}

fn check_pair(gl: &Patch, gr: &Patch) -> Result<()> {
    if gl.width() != gr.width() || gl.height() != gr.height() {
        return Err(Error::Dimension(format!(
            "left patch {}x{} and right patch {}x{} differ",
            gl.width(),
            gl.height(),
            gr.width(),
            gr.height()
        )));
    }
    for (side, p) in [("left", gl), ("right", gr)] {
        let (lo, hi) = p
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            return Err(Error::DegeneratePatch(format!("{side} patch is constant")));
        }
    }
    Ok(())
}

/// Grid search for the signed blur radius of one patch pair.
pub fn estimate_patch_blur(gl: &Patch, gr: &Patch, candidates: &[f64]) -> Result<BlurEstimate> {
    let m = gl.width().min(gl.height());
    BlurSearch::new(candidates, m)?.estimate(gl, gr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub id: usize,
    pub x: usize,
    pub y: usize,
    pub texture: f64,
    pub finite_fraction: f64,
    /// Median scale-ambiguous depth over valid pixels.
    pub depth_median: Option<f64>,
    /// Standard deviation of inverse depth relative to its mean.
    pub inv_depth_spread: Option<f64>,
    pub valid: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub records: Vec<PatchRecord>,
}

impl PatchGrid {
    pub fn valid(&self) -> impl Iterator<Item = &PatchRecord> {
        self.records.iter().filter(|r| r.valid)
    }

    pub fn valid_count(&self) -> usize {
        self.valid().count()
    }
}

/// Thresholds applied when tiling a view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridThresholds {
    pub min_finite_fraction: f64,
    pub max_inv_depth_spread: f64,
    /// Minimum texture as a fraction of the median texture of depth-valid patches.
    pub min_texture_ratio: f64,
}

impl Default for GridThresholds {
    fn default() -> Self {
        GridThresholds {
            min_finite_fraction: 0.9,
            max_inv_depth_spread: 0.05,
            min_texture_ratio: 0.25,
        }
    }
}

/// Mean forward-difference gradient magnitude.
pub fn texture_score(p: &Patch) -> f64 {
    let (w, h) = (p.width(), p.height());
    if w < 2 || h < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let v = p.get(x, y);
            let gx = p.get(x + 1, y) - v;
            let gy = p.get(x, y + 1) - v;
            acc += (gx * gx + gy * gy).sqrt();
        }
    }
    acc / ((w - 1) * (h - 1)) as f64
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Tiles a view into `m x m` patches and flags the usable ones.
pub fn build_patch_grid(view: &DpView, m: usize, stride: usize, th: &GridThresholds) -> Result<PatchGrid> {
    let (w, h) = (view.width(), view.height());
    if m == 0 || stride == 0 || m > w.min(h) {
        return Err(Error::Dimension(format!(
            "patch size {m} / stride {stride} invalid for a {w}x{h} view"
        )));
    }
    let plane = view.left.estimation_plane();
    let mut records = Vec::new();
    let mut y = 0;
    while y + m <= h {
        let mut x = 0;
        while x + m <= w {
            let mut depths: Vec<f64> = view.depth.window(x, y, m, m).filter(|z| z.is_finite()).collect();
            let finite_fraction = depths.len() as f64 / (m * m) as f64;
            let inv_depth_spread = if depths.is_empty() {
                None
            } else {
                let n = depths.len() as f64;
                let mean = depths.iter().map(|z| 1.0 / z).sum::<f64>() / n;
                let var = depths.iter().map(|z| (1.0 / z - mean).powi(2)).sum::<f64>() / n;
                Some(var.sqrt() / mean)
            };
            let depth_median = median(&mut depths);
            let texture = texture_score(&plane.crop(x, y, m, m)?);
            records.push(PatchRecord {
                id: records.len(),
                x,
                y,
                texture,
                finite_fraction,
                depth_median,
                inv_depth_spread,
                valid: false,
                reason: None,
            });
            x += stride;
        }
        y += stride;
    }

    for rec in &mut records {
        if rec.finite_fraction < th.min_finite_fraction {
            rec.reason = Some(format!("depth coverage {:.2} below {}", rec.finite_fraction, th.min_finite_fraction));
        } else if rec.inv_depth_spread.unwrap_or(f64::INFINITY) >= th.max_inv_depth_spread {
            rec.reason = Some(format!(
                "inverse-depth spread {:.3} not below {}",
                rec.inv_depth_spread.unwrap_or(f64::NAN),
                th.max_inv_depth_spread
            ));
        }
    }
    let mut textures: Vec<f64> = records.iter().filter(|r| r.reason.is_none()).map(|r| r.texture).collect();
    let floor = median(&mut textures).map_or(0.0, |med| th.min_texture_ratio * med);
    for rec in &mut records {
        if rec.reason.is_some() {
            continue;
        }
        if rec.texture > floor && rec.texture > 1e-9 {
            rec.valid = true;
        } else {
            rec.reason = Some(format!("texture {:.3e} below {:.3e}", rec.texture, floor));
        }
    }
    Ok(PatchGrid {
        patch_size: m,
        stride,
        records,
    })
}

/// Keeps the best `t_c` percent of valid patches ranked by the relative
/// residual of their blur estimate. Returns patch ids.
pub fn select_top_patches(grid: &PatchGrid, estimates: &[BlurEstimate], t_c: f64) -> Result<Vec<usize>> {
    if !(t_c > 0.0 && t_c <= 100.0) {
        return Err(Error::Domain(format!("T_c must be in (0, 100], got {t_c}")));
    }
    let mut ranked: Vec<&BlurEstimate> = estimates
        .iter()
        .filter(|e| grid.records.get(e.patch_id).is_some_and(|r| r.valid))
        .collect();
    if ranked.len() < 2 {
        return Err(Error::InsufficientPatches(format!(
            "{} valid patch estimate(s), need at least 2",
            ranked.len()
        )));
    }
    ranked.sort_by(|a, b| {
        a.relative_loss
            .total_cmp(&b.relative_loss)
            .then(a.loss.total_cmp(&b.loss))
            .then(a.patch_id.cmp(&b.patch_id))
    });
    let n = ranked.len();
    let keep = ((n as f64 * t_c / 100.0) - 1e-9).ceil().max(2.0) as usize;
    let mut ids: Vec<usize> = ranked[..keep.min(n)].iter().map(|e| e.patch_id).collect();
    ids.sort_unstable();
    Ok(ids)
}
