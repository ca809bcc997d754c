//! Fixtures shared by the benchmarks.

use dpscale::psf::Patch;
use dpscale::refine::{FocusMap, RefinePatch};
use dpscale::solver::PatchSample;
use dpscale::synthetic::{noise_texture, render_dp_patch, TEXTURE_MARGIN};
use dpscale::{BlurSize, CameraMeta};

pub const PATCH: usize = 64;

pub fn meta() -> CameraMeta {
    CameraMeta::new(0.05, 4.0, 5.36e-6, 512, 512).unwrap()
}

/// Dual-pixel pair of a textured plane at depth `z` with focus `g`.
pub fn dp_pair(z: f64, g: f64, seed: u64) -> (Patch, Patch) {
    let side = PATCH + 2 * TEXTURE_MARGIN;
    let texture = noise_texture(side, side, seed);
    render_dp_patch(&texture, z, g, &meta()).unwrap()
}

/// Exact samples for `views` views with `per_view` patches each.
pub fn samples(views: usize, per_view: usize, scale: f64) -> (Vec<PatchSample>, Vec<CameraMeta>) {
    let m = meta();
    let mut out = Vec::new();
    for v in 0..views {
        let g = 1.0 + 0.3 * v as f64;
        for p in 0..per_view {
            let z = 0.6 + 0.15 * p as f64;
            let b = dpscale::optics::thin_lens_blur(z, g, m.focal_length, m.aperture_diameter()).unwrap();
            out.push(PatchSample {
                view_id: v,
                patch_id: p,
                z_prime: z / scale,
                b: BlurSize(b.meters()),
            });
        }
    }
    (out, vec![m; views])
}

/// Refinement inputs for one view with three planes at scale 1.
pub fn refine_inputs() -> (Vec<RefinePatch>, FocusMap, Vec<CameraMeta>) {
    let g = 1.5;
    let patches = [1.2, 1.4, 1.9]
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let (l, r) = dp_pair(z, g, i as u64);
            RefinePatch {
                view_id: 0,
                patch_id: i,
                z_prime: z,
                left: vec![l],
                right: vec![r],
            }
        })
        .collect();
    (patches, FocusMap::from([(0, g)]), vec![meta()])
}
