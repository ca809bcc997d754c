//! Discrete search over the global scale with the focus distances (in
//! reconstruction units) held fixed.
//!
//! Each candidate scale fixes every patch's blur radius through the thin-lens
//! model. The left patch is blurred with that right-view PSF, the right patch
//! with its mirror, both are normalized to unit L1 mass, and the element-wise
//! L1 difference is summed over patches and channels.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{blur_to_pixel_radius, BlurSize, CameraMeta};
use crate::psf::{flip_h, normalize_l1, psf_key, psf_side, right_psf, Channel, Patch, PreparedPatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub center: f64,
    pub half_width: f64,
    pub values: Vec<f64>,
}

pub const DEFAULT_T_S: f64 = 0.8;
pub const DEFAULT_CANDIDATES: usize = 100;

/// `count` scales spaced uniformly on `s_star * [1 - t_s, 1 + t_s]`,
/// endpoints included. Non-positive values are dropped.
pub fn candidate_scales(s_star: f64, t_s: f64, count: usize) -> Result<CandidateSet> {
    if !(s_star > 0.0 && s_star.is_finite()) {
        return Err(Error::Candidate(format!("initial scale must be positive, got {s_star}")));
    }
    if !(t_s > 0.0 && t_s.is_finite()) {
        return Err(Error::Candidate(format!("T_s must be positive, got {t_s}")));
    }
    if count < 2 {
        return Err(Error::Candidate(format!("need at least 2 candidates, got {count}")));
    }
    let lo = s_star * (1.0 - t_s);
    let hi = s_star * (1.0 + t_s);
    let steps = (count - 1) as f64;
    let values: Vec<f64> = (0..count)
        .map(|i| if i + 1 == count { hi } else { lo + (hi - lo) * i as f64 / steps })
        .filter(|v| *v > 0.0)
        .collect();
    if values.is_empty() {
        return Err(Error::Candidate("every candidate scale is non-positive".into()));
    }
    Ok(CandidateSet {
        center: s_star,
        half_width: t_s,
        values,
    })
}

/// Signed pixel radius of a patch at depth `z_prime` when the scene scale is
/// `s` and the view is focused at `g_prime` (reconstruction units). `None`
/// when `s * g_prime` does not exceed the focal length.
pub fn blur_radius_at_scale(s: f64, z_prime: f64, g_prime: f64, meta: &CameraMeta) -> Option<f64> {
    let f = meta.focal_length;
    let g = s * g_prime;
    let z = s * z_prime;
    if !(g > f && z > 0.0 && g.is_finite() && z.is_finite()) {
        return None;
    }
    let l = meta.aperture_diameter();
    let b = BlurSize(l * f / (1.0 - f / g) * (1.0 / g - 1.0 / z));
    blur_to_pixel_radius(b, meta.sensor_pitch).ok()
}

/// One selected patch with all of its color channels.
#[derive(Debug, Clone)]
pub struct RefinePatch {
    pub view_id: usize,
    pub patch_id: usize,
    pub z_prime: f64,
    pub left: Vec<Patch>,
    pub right: Vec<Patch>,
}

/// Loss of one (patch, channel) pair at the chosen scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossContribution {
    pub view_id: usize,
    pub patch_id: usize,
    pub channel: Channel,
    pub radius_px: f64,
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub candidates: CandidateSet,
    /// Total loss per candidate; `None` marks an invalid candidate.
    pub losses: Vec<Option<f64>>,
    pub best_index: usize,
    /// The chosen candidate, or `s_star` itself when the curve is flat.
    pub s_optim: f64,
    /// Every valid candidate has the same loss, so the data cannot move the scale.
    pub flat: bool,
    pub contributions: Vec<LossContribution>,
    pub degenerate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PatchLoss {
    Value(f64),
    /// Kernel does not fit or the model is invalid at this scale.
    Invalid,
}

struct Evaluated {
    // Per candidate, per channel.
    losses: Vec<Vec<Option<PatchLoss>>>,
    radii: Vec<Option<f64>>,
}

/// Loss of one patch at every candidate scale. Candidates that map to the
/// same kernel share one evaluation.
fn evaluate_patch(
    patch: &RefinePatch,
    scales: &[f64],
    g_prime: f64,
    meta: &CameraMeta,
) -> Evaluated {
    let prepared: Vec<(PreparedPatch, PreparedPatch)> = patch
        .left
        .iter()
        .zip(&patch.right)
        .map(|(l, r)| (PreparedPatch::new(l), PreparedPatch::new(r)))
        .collect();
    let side_limit = patch.left[0].width().min(patch.left[0].height());
    let mut cache: HashMap<(i8, Vec<i64>), Vec<Option<PatchLoss>>> = HashMap::new();
    let mut losses = Vec::with_capacity(scales.len());
    let mut radii = Vec::with_capacity(scales.len());
    for &s in scales {
        let Some(r) = blur_radius_at_scale(s, patch.z_prime, g_prime, meta) else {
            losses.push(vec![Some(PatchLoss::Invalid); prepared.len()]);
            radii.push(None);
            continue;
        };
        radii.push(Some(r));
        if psf_side(r) >= side_limit {
            losses.push(vec![Some(PatchLoss::Invalid); prepared.len()]);
            continue;
        }
        let per_channel = cache
            .entry(psf_key(r))
            .or_insert_with(|| {
                let h = right_psf(r).expect("finite radius");
                let hf = flip_h(&h);
                prepared
                    .iter()
                    .map(|(pl, pr)| {
                        let a = pl.convolve(&h).ok()?;
                        let b = pr.convolve(&hf).ok()?;
                        let (a, b) = (normalize_l1(&a).ok()?, normalize_l1(&b).ok()?);
                        Some(PatchLoss::Value(a.l1_distance(&b).ok()?))
                    })
                    .collect()
            })
            .clone();
        losses.push(per_channel);
    }
    Evaluated { losses, radii }
}

/// Where each view is focused, in reconstruction units.
pub type FocusMap = HashMap<usize, f64>;

fn lookup<'a>(view: usize, g_prime: &FocusMap, metas: &'a [CameraMeta]) -> Result<(f64, &'a CameraMeta)> {
    let g = *g_prime
        .get(&view)
        .ok_or_else(|| Error::Domain(format!("no focus distance for view {view}")))?;
    let meta = metas
        .get(view)
        .ok_or_else(|| Error::Domain(format!("no camera metadata for view {view}")))?;
    Ok((g, meta))
}

fn evaluate_all(
    scales: &[f64],
    patches: &[RefinePatch],
    g_prime: &FocusMap,
    metas: &[CameraMeta],
) -> Result<Vec<Evaluated>> {
    for p in patches {
        if p.left.is_empty() || p.left.len() != p.right.len() {
            return Err(Error::Dimension(format!(
                "patch {} of view {} has mismatched channels",
                p.patch_id, p.view_id
            )));
        }
        lookup(p.view_id, g_prime, metas)?;
    }
    Ok(patches
        .par_iter()
        .map(|p| {
            let (g, meta) = lookup(p.view_id, g_prime, metas).expect("checked above");
            evaluate_patch(p, scales, g, meta)
        })
        .collect())
}

/// Sums per-patch losses into per-candidate totals, in patch order.
fn totals(evals: &[Evaluated], n: usize) -> (Vec<Option<f64>>, usize) {
    let mut out = Vec::with_capacity(n);
    let mut degenerate_at = vec![0usize; n];
    for (c, deg) in degenerate_at.iter_mut().enumerate() {
        let mut total = 0.0;
        let mut valid = true;
        let mut any = false;
        for e in evals {
            for l in &e.losses[c] {
                match l {
                    Some(PatchLoss::Value(v)) => {
                        total += v;
                        any = true;
                    }
                    Some(PatchLoss::Invalid) => valid = false,
                    None => *deg += 1,
                }
            }
        }
        out.push((valid && any).then_some(total));
    }
    let degenerate = degenerate_at.into_iter().max().unwrap_or(0);
    (out, degenerate)
}

/// Total cross-view loss at one scale.
pub fn cross_view_loss(s: f64, patches: &[RefinePatch], g_prime: &FocusMap, metas: &[CameraMeta]) -> Result<f64> {
    let evals = evaluate_all(&[s], patches, g_prime, metas)?;
    let (t, degenerate) = totals(&evals, 1);
    let channels: usize = patches.iter().map(|p| p.left.len()).sum();
    if degenerate == channels {
        return Err(Error::Loss("every patch is degenerate".into()));
    }
    Ok(t[0].unwrap_or(f64::INFINITY))
}

/// Evaluates the loss at every candidate scale and returns the minimizer;
/// ties go to the candidate nearest `s_star`.
pub fn refine_scale(
    s_star: f64,
    g_prime: &FocusMap,
    patches: &[RefinePatch],
    metas: &[CameraMeta],
    t_s: f64,
    count: usize,
) -> Result<RefinementRecord> {
    let candidates = candidate_scales(s_star, t_s, count)?;
    if patches.is_empty() {
        return Err(Error::Loss("no patches to refine on".into()));
    }
    let evals = evaluate_all(&candidates.values, patches, g_prime, metas)?;
    let (losses, degenerate) = totals(&evals, candidates.values.len());
    let channels: usize = patches.iter().map(|p| p.left.len()).sum();
    if degenerate == channels {
        return Err(Error::Loss("every patch is degenerate".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, l) in losses.iter().enumerate() {
        let Some(l) = *l else { continue };
        let better = match best {
            None => true,
            Some((bi, bl)) => {
                l < bl
                    || (l == bl
                        && (candidates.values[i] - s_star).abs() < (candidates.values[bi] - s_star).abs())
            }
        };
        if better {
            best = Some((i, l));
        }
    }
    let Some((best_index, best_loss)) = best else {
        return Err(Error::Loss("no candidate scale yields a valid loss".into()));
    };
    let flat = losses.iter().flatten().all(|l| *l == best_loss);
    let mut contributions = Vec::new();
    for (p, e) in patches.iter().zip(&evals) {
        for (ch, l) in e.losses[best_index].iter().enumerate() {
            contributions.push(LossContribution {
                view_id: p.view_id,
                patch_id: p.patch_id,
                channel: p.left[ch].channel,
                radius_px: e.radii[best_index].unwrap_or(f64::NAN),
                loss: match l {
                    Some(PatchLoss::Value(v)) => Some(*v),
                    _ => None,
                },
            });
        }
    }
    Ok(RefinementRecord {
        s_optim: if flat { s_star } else { candidates.values[best_index] },
        flat,
        best_index,
        losses,
        candidates,
        contributions,
        degenerate,
    })
}
