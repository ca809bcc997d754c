//! Joint estimation of the global scale and per-view focus distances.
//!
//! Substituting `z = s z'` into the thin-lens blur relation and writing
//! `g_bar = 1/g`, `s_bar = 1/s` gives, for patch `j` of view `i`,
//!
//! ```text
//! b_ij z'_ij / f_i = gamma_ij * g_bar_i - l_i * s_bar,   gamma_ij = z'_ij (b_ij + l_i)
//! ```
//!
//! which is linear in the unknowns `[g_bar_1 .. g_bar_n, s_bar]`. Rows from all
//! views are stacked into a tall block-sparse system and solved under an L1
//! objective with iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{BlurSize, CameraMeta};

/// One patch observation: median scale-ambiguous depth and estimated blur.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub view_id: usize,
    pub patch_id: usize,
    pub z_prime: f64,
    /// Blur diameter in meters.
    pub b: BlurSize,
}

impl PatchSample {
    pub fn gamma(&self, l: f64) -> f64 {
        gamma(self.z_prime, self.b, l)
    }
}

pub fn gamma(z_prime: f64, b: BlurSize, l: f64) -> f64 {
    z_prime * (b.0 + l)
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// `(view_id, patch_id)` of each row.
    pub row_map: Vec<(usize, usize)>,
    /// View id of each of the first `n` columns; the last column is `s_bar`.
    pub views: Vec<usize>,
}

impl LinearSystem {
    pub fn unknowns(&self) -> usize {
        self.views.len() + 1
    }
}

/// Relative singular-value threshold for the rank test, after column scaling.
const RANK_TOL: f64 = 1e-9;

/// Stacks one equation per sample. Unknown order is `[g_bar (by view id), s_bar]`.
pub fn assemble_system(samples: &[PatchSample], metas: &[CameraMeta]) -> Result<LinearSystem> {
    if samples.len() < 2 {
        return Err(Error::InsufficientPatches(format!(
            "{} sample(s), the system needs at least 2",
            samples.len()
        )));
    }
    let mut views: Vec<usize> = samples.iter().map(|s| s.view_id).collect();
    views.sort_unstable();
    views.dedup();
    for &v in &views {
        let meta = metas
            .get(v)
            .ok_or_else(|| Error::Domain(format!("no camera metadata for view {v}")))?;
        meta.validate()?;
    }
    let n = views.len();
    let mut a = DMatrix::zeros(samples.len(), n + 1);
    let mut rhs = DVector::zeros(samples.len());
    let mut row_map = Vec::with_capacity(samples.len());
    for (row, s) in samples.iter().enumerate() {
        if !(s.z_prime > 0.0 && s.z_prime.is_finite() && s.b.0.is_finite()) {
            return Err(Error::Domain(format!(
                "sample (view {}, patch {}) has invalid depth {} or blur {}",
                s.view_id, s.patch_id, s.z_prime, s.b.0
            )));
        }
        let meta = &metas[s.view_id];
        let l = meta.aperture_diameter();
        let col = views.binary_search(&s.view_id).unwrap();
        a[(row, col)] = s.gamma(l);
        a[(row, n)] = -l;
        rhs[row] = s.b.0 * s.z_prime / meta.focal_length;
        row_map.push((s.view_id, s.patch_id));
    }
    let sys = LinearSystem { a, rhs, row_map, views };
    check_rank(&sys)?;
    Ok(sys)
}

fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let mut scaled = a.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let sv = scaled.svd(false, false).singular_values;
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > RANK_TOL * max).count()
}

fn check_rank(sys: &LinearSystem) -> Result<()> {
    let unknowns = sys.unknowns();
    let rank = numerical_rank(&sys.a);
    if rank == unknowns {
        return Ok(());
    }
    // A view whose gamma values do not vary is indistinguishable from the
    // shared s_bar column.
    let mut offending = Vec::new();
    for (col, &v) in sys.views.iter().enumerate() {
        let gammas: Vec<f64> = (0..sys.a.nrows())
            .filter(|&r| sys.row_map[r].0 == v)
            .map(|r| sys.a[(r, col)])
            .collect();
        let hi = gammas.iter().fold(f64::NEG_INFINITY, |m, &g| m.max(g));
        let lo = gammas.iter().fold(f64::INFINITY, |m, &g| m.min(g));
        let scale = hi.abs().max(lo.abs());
        if scale == 0.0 || hi - lo <= RANK_TOL.sqrt() * scale {
            offending.push(v.to_string());
        }
    }
    if offending.is_empty() {
        offending = sys.views.iter().map(|v| v.to_string()).collect();
    }
    Err(Error::RankDeficient {
        rank,
        unknowns,
        views: offending,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    pub max_iter: usize,
    /// Residual floor for the weights, relative to the mean |rhs|.
    pub eps: f64,
    /// Stop when the relative change of the solution falls below this.
    pub tol: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            max_iter: 100,
            eps: 1e-8,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSolution {
    /// Global scale, reconstruction units to meters.
    pub s: f64,
    pub s_bar: f64,
    /// View ids, aligned with `g_bar` and `g_prime`.
    pub views: Vec<usize>,
    /// Inverse focus distances in 1/m.
    pub g_bar: Vec<f64>,
    /// Focus distances in reconstruction units, `g / s`.
    pub g_prime: Vec<f64>,
    pub residuals: Vec<f64>,
    /// L1 objective before each reweighting step and at the end.
    pub l1_history: Vec<f64>,
    pub iterations: usize,
    pub negative_scale: bool,
}

impl ScaleSolution {
    pub fn mean_abs_residual(&self) -> f64 {
        if self.residuals.is_empty() {
            0.0
        } else {
            self.residuals.iter().map(|r| r.abs()).sum::<f64>() / self.residuals.len() as f64
        }
    }

    pub fn g_prime_of(&self, view_id: usize) -> Option<f64> {
        self.views.iter().position(|&v| v == view_id).map(|i| self.g_prime[i])
    }

    fn from_x(sys: &LinearSystem, x: &DVector<f64>, l1_history: Vec<f64>, iterations: usize) -> Self {
        let n = sys.views.len();
        let s_bar = x[n];
        let g_bar: Vec<f64> = (0..n).map(|i| x[i]).collect();
        let residuals = (&sys.a * x - &sys.rhs).iter().copied().collect();
        ScaleSolution {
            s: 1.0 / s_bar,
            s_bar,
            views: sys.views.clone(),
            g_prime: g_bar.iter().map(|g| s_bar / g).collect(),
            g_bar,
            residuals,
            l1_history,
            iterations,
            negative_scale: !(s_bar > 0.0 && s_bar.is_finite()),
        }
    }
}

/// Weighted least squares via QR of the row- and column-scaled matrix.
pub fn weighted_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, w: &[f64]) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Solver(format!("{m} equations for {n} unknowns")));
    }
    let mut aw = a.clone();
    let mut bw = b.clone();
    for i in 0..m {
        let sw = w[i].sqrt();
        aw.row_mut(i).scale_mut(sw);
        bw[i] *= sw;
    }
    let mut scales = Vec::with_capacity(n);
    for mut col in aw.column_iter_mut() {
        let norm = col.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Solver("zero column in weighted system".into()));
        }
        col /= norm;
        scales.push(norm);
    }
    let qr = aw.qr();
    let r = qr.r();
    let diag_max = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..n).any(|i| r[(i, i)].abs() <= 1e-13 * diag_max) {
        return Err(Error::Solver("singular weighted normal equations".into()));
    }
    let qtb = qr.q().transpose() * bw;
    let mut x = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Solver("triangular solve failed".into()))?;
    for (xi, s) in x.iter_mut().zip(&scales) {
        *xi /= s;
    }
    Ok(x)
}

fn l1(sys: &LinearSystem, x: &DVector<f64>) -> f64 {
    (&sys.a * x - &sys.rhs).iter().map(|r| r.abs()).sum()
}

/// Plain least-squares solution of the system.
pub fn solve_least_squares(sys: &LinearSystem) -> Result<ScaleSolution> {
    let w = vec![1.0; sys.a.nrows()];
    let x = weighted_lstsq(&sys.a, &sys.rhs, &w)?;
    let obj = l1(sys, &x);
    Ok(ScaleSolution::from_x(sys, &x, vec![obj], 0))
}

/// Approximate L1 minimizer of `A x - rhs` by iteratively reweighted least squares.
pub fn solve_l1_irls(sys: &LinearSystem, opts: &IrlsOptions) -> Result<ScaleSolution> {
    let m = sys.a.nrows();
    let rhs_scale = sys.rhs.iter().map(|v| v.abs()).sum::<f64>() / m as f64;
    let floor = opts.eps * if rhs_scale > 0.0 { rhs_scale } else { 1.0 };
    let mut w = vec![1.0; m];
    let mut x = weighted_lstsq(&sys.a, &sys.rhs, &w)?;
    let mut history = vec![l1(sys, &x)];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let res = &sys.a * &x - &sys.rhs;
        for (wi, r) in w.iter_mut().zip(res.iter()) {
            *wi = 1.0 / r.abs().max(floor);
        }
        let next = weighted_lstsq(&sys.a, &sys.rhs, &w)?;
        iterations += 1;
        let change = (&next - &x).norm() / x.norm().max(f64::MIN_POSITIVE);
        x = next;
        history.push(l1(sys, &x));
        if change < opts.tol {
            break;
        }
    }
    Ok(ScaleSolution::from_x(sys, &x, history, iterations))
}

/// Two-unknown solve for a single view.
pub fn solve_per_view(view_samples: &[PatchSample], metas: &[CameraMeta], opts: &IrlsOptions) -> Result<ScaleSolution> {
    if view_samples.len() < 2 {
        return Err(Error::InsufficientPatches(format!(
            "{} usable sample(s) in view, need 2",
            view_samples.len()
        )));
    }
    let first = view_samples[0].view_id;
    if view_samples.iter().any(|s| s.view_id != first) {
        return Err(Error::Domain("per-view solve received samples from several views".into()));
    }
    let sys = assemble_system(view_samples, metas)?;
    solve_l1_irls(&sys, opts)
}

/// Outcome of the per-view stage for one view.
#[derive(Debug, Clone)]
pub struct PerViewResult {
    pub view_id: usize,
    /// `max - min` of the estimated signed blur radii, in pixels.
    pub blur_span_px: f64,
    pub outcome: std::result::Result<ScaleSolution, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSelection {
    pub selected: Vec<usize>,
    pub excluded: Vec<(usize, String)>,
    pub median_scale: Option<f64>,
}

/// Drops views with too little blur variation, failed or negative per-view
/// solves, then keeps the `n_v` views whose scale is nearest the median of
/// the survivors.
pub fn select_views(per_view: &[PerViewResult], t_p: f64, n_v: usize) -> Result<ViewSelection> {
    let mut excluded = Vec::new();
    let mut survivors: Vec<(usize, f64, f64)> = Vec::new();
    for pv in per_view {
        if pv.blur_span_px <= t_p {
            excluded.push((pv.view_id, format!("blur span {:.2} px <= T_p {t_p} px", pv.blur_span_px)));
            continue;
        }
        match &pv.outcome {
            Err(reason) => excluded.push((pv.view_id, reason.clone())),
            Ok(sol) if sol.negative_scale => {
                excluded.push((pv.view_id, format!("negative per-view scale {:.4}", sol.s)))
            }
            Ok(sol) => survivors.push((pv.view_id, sol.s, sol.mean_abs_residual())),
        }
    }
    if survivors.is_empty() {
        return Err(Error::NoSurvivingViews(
            excluded.into_iter().map(|(v, r)| (v.to_string(), r)).collect(),
        ));
    }
    let mut scales: Vec<f64> = survivors.iter().map(|s| s.1).collect();
    let med = crate::blur::median(&mut scales).unwrap();
    survivors.sort_by(|a, b| {
        (a.1 - med)
            .abs()
            .total_cmp(&(b.1 - med).abs())
            .then(a.2.total_cmp(&b.2))
            .then(a.0.cmp(&b.0))
    });
    for &(v, s, _) in survivors.iter().skip(n_v) {
        excluded.push((v, format!("scale {s:.4} not among the {n_v} nearest the median {med:.4}")));
    }
    let mut selected: Vec<usize> = survivors.iter().take(n_v).map(|s| s.0).collect();
    selected.sort_unstable();
    excluded.sort_by_key(|e| e.0);
    Ok(ViewSelection {
        selected,
        excluded,
        median_scale: Some(med),
    })
}

/// Joint solve over all samples of the selected views.
pub fn initial_estimate(selected_samples: &[PatchSample], metas: &[CameraMeta], opts: &IrlsOptions) -> Result<ScaleSolution> {
    let sys = assemble_system(selected_samples, metas)?;
    let sol = solve_l1_irls(&sys, opts)?;
    if sol.negative_scale {
        return Err(Error::Solver(format!("joint solve gave non-positive inverse scale {}", sol.s_bar)));
    }
    if let Some((i, _)) = sol.g_bar.iter().enumerate().find(|(_, g)| !(**g > 0.0)) {
        return Err(Error::NegativeFocus(sol.views[i].to_string()));
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::thin_lens_blur;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta(f: f64, n: f64) -> CameraMeta {
        CameraMeta::new(f, n, 5.36e-6, 512, 512).unwrap()
    }

    fn sample(view_id: usize, patch_id: usize, z_true: f64, g: f64, s: f64, m: &CameraMeta) -> PatchSample {
        PatchSample {
            view_id,
            patch_id,
            z_prime: z_true / s,
            b: thin_lens_blur(z_true, g, m.focal_length, m.aperture_diameter()).unwrap(),
        }
    }

    #[test]
    fn gamma_examples() {
        assert!((gamma(0.5, BlurSize(-2.3742e-4), 0.027778) - 0.013770).abs() < 1e-6);
        assert!((gamma(4.0 / 3.0, BlurSize(3.5613e-4), 0.027778) - 0.037512).abs() < 1e-6);
        assert_eq!(gamma(7.3, BlurSize(-0.027778), 0.027778), 0.0);
    }

    #[test]
    fn two_by_two_case_is_exact() {
        // f = 50 mm, l = 27.778 mm, g = 2 m, s = 3, z in {1.5, 4} m.
        let m = CameraMeta {
            focal_length: 0.05,
            f_number: 0.05 / 0.027778,
            sensor_pitch: 5.36e-6,
            image_width: 64,
            image_height: 64,
        };
        let samples = [sample(0, 0, 1.5, 2.0, 3.0, &m), sample(0, 1, 4.0, 2.0, 3.0, &m)];
        let sys = assemble_system(&samples, &[m]).unwrap();
        assert_eq!(sys.a.shape(), (2, 2));
        let sol = solve_l1_irls(&sys, &IrlsOptions::default()).unwrap();
        assert!((sol.g_bar[0] - 0.5).abs() < 1e-12);
        assert!((sol.s_bar - 1.0 / 3.0).abs() < 1e-12);
        assert!((sol.s - 3.0).abs() < 1e-11);
        assert!((sol.g_prime[0] - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn rows_have_block_structure() {
        let metas = [meta(0.035, 4.0), meta(0.05, 2.8)];
        let samples = [
            sample(0, 0, 1.0, 2.0, 1.5, &metas[0]),
            sample(0, 1, 3.0, 2.0, 1.5, &metas[0]),
            sample(1, 0, 1.2, 1.7, 1.5, &metas[1]),
            sample(1, 1, 4.0, 1.7, 1.5, &metas[1]),
        ];
        let sys = assemble_system(&samples, &metas).unwrap();
        for r in 0..4 {
            let nz = sys.a.row(r).iter().filter(|v| **v != 0.0).count();
            assert_eq!(nz, 2);
            let view = sys.row_map[r].0;
            assert_eq!(sys.a[(r, 2)], -metas[view].aperture_diameter());
        }
        // Ground truth satisfies every row.
        let x = DVector::from_vec(vec![1.0 / 2.0, 1.0 / 1.7, 1.0 / 1.5]);
        let res = &sys.a * &x - &sys.rhs;
        assert!(res.amax() < 1e-15);
    }

    #[test]
    fn single_depth_views_are_rank_deficient() {
        let metas = [meta(0.05, 2.0), meta(0.05, 2.0)];
        let samples = [
            sample(0, 0, 2.5, 2.0, 1.0, &metas[0]),
            sample(0, 1, 2.5, 2.0, 1.0, &metas[0]),
            sample(1, 0, 3.0, 2.2, 1.0, &metas[1]),
            sample(1, 1, 3.0, 2.2, 1.0, &metas[1]),
        ];
        match assemble_system(&samples, &metas) {
            Err(Error::RankDeficient { rank, unknowns, views }) => {
                assert_eq!(unknowns, 3);
                assert!(rank < 3);
                assert_eq!(views, vec!["0".to_string(), "1".to_string()]);
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn one_varied_view_restores_rank() {
        let metas = [meta(0.05, 2.0), meta(0.05, 2.0)];
        let samples = [
            sample(0, 0, 2.5, 2.0, 1.0, &metas[0]),
            sample(0, 1, 2.5, 2.0, 1.0, &metas[0]),
            sample(1, 0, 3.0, 2.2, 1.0, &metas[1]),
            sample(1, 1, 1.4, 2.2, 1.0, &metas[1]),
        ];
        let sys = assemble_system(&samples, &metas).unwrap();
        let sol = solve_l1_irls(&sys, &IrlsOptions::default()).unwrap();
        assert!((sol.s - 1.0).abs() < 1e-9);
    }

    fn random_scene(rng: &mut ChaCha8Rng, views: usize, per_view: usize) -> (Vec<PatchSample>, Vec<CameraMeta>, f64, Vec<f64>) {
        let s = rng.gen_range(0.3..3.0);
        let mut metas = Vec::new();
        let mut gs = Vec::new();
        let mut samples = Vec::new();
        for v in 0..views {
            let f = [0.035, 0.05, 0.085][rng.gen_range(0..3)];
            let m = meta(f, rng.gen_range(1.4..8.0));
            let g = rng.gen_range(0.8..4.0);
            for j in 0..per_view {
                let z = rng.gen_range(0.5..8.0);
                samples.push(sample(v, j, z, g, s, &m));
            }
            metas.push(m);
            gs.push(g);
        }
        (samples, metas, s, gs)
    }

    #[test]
    fn noiseless_samples_recover_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let views = rng.gen_range(1..6);
            let per_view = rng.gen_range(2..12);
            let (samples, metas, s, gs) = random_scene(&mut rng, views, per_view);
            let sol = initial_estimate(&samples, &metas, &IrlsOptions::default()).unwrap();
            assert!((sol.s - s).abs() <= 1e-9 * s, "s {} vs {}", sol.s, s);
            for (i, g) in gs.iter().enumerate() {
                assert!((1.0 / sol.g_bar[i] - g).abs() <= 1e-9 * g);
            }
        }
    }

    #[test]
    fn zero_residual_irls_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (samples, metas, _, _) = random_scene(&mut rng, 3, 6);
        let sys = assemble_system(&samples, &metas).unwrap();
        let a = solve_l1_irls(&sys, &IrlsOptions::default()).unwrap();
        let b = solve_least_squares(&sys).unwrap();
        assert!((a.s - b.s).abs() <= 1e-9 * b.s);
    }

    fn contaminate(samples: &mut [PatchSample], rng: &mut ChaCha8Rng) {
        let n = samples.len();
        let k = n / 5;
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
        }
        for &i in &idx[..k] {
            samples[i].b = BlurSize(samples[i].b.0 * 5.0);
        }
    }

    #[test]
    fn irls_shrugs_off_gross_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut samples, metas, s, _) = random_scene(&mut rng, 4, 20);
        contaminate(&mut samples, &mut rng);
        let sys = assemble_system(&samples, &metas).unwrap();
        let robust = solve_l1_irls(&sys, &IrlsOptions::default()).unwrap();
        let plain = solve_least_squares(&sys).unwrap();
        let e_robust = (robust.s / s - 1.0).abs();
        let e_plain = (plain.s / s - 1.0).abs();
        assert!(e_robust < 0.05, "{e_robust}");
        assert!(e_plain > e_robust);
    }

    #[test]
    fn irls_objective_does_not_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (mut samples, metas, _, _) = random_scene(&mut rng, 3, 15);
            for smp in samples.iter_mut() {
                smp.b = BlurSize(smp.b.0 * (1.0 + rng.gen_range(-0.1..0.1)));
            }
            contaminate(&mut samples, &mut rng);
            let sys = assemble_system(&samples, &metas).unwrap();
            let sol = solve_l1_irls(&sys, &IrlsOptions::default()).unwrap();
            let slack = 1e-6 * sol.l1_history[0];
            for w in sol.l1_history.windows(2) {
                assert!(w[1] <= w[0] + slack, "{:?}", sol.l1_history);
            }
        }
    }

    #[test]
    fn per_view_solve() {
        let m = meta(0.05, 2.8);
        let samples: Vec<_> = [1.0, 1.6, 2.9, 5.0].iter().enumerate().map(|(j, &z)| sample(0, j, z, 2.0, 0.7, &m)).collect();
        let sol = solve_per_view(&samples, &[m], &IrlsOptions::default()).unwrap();
        assert!((sol.s - 0.7).abs() <= 1e-9 * 0.7);
        assert!(!sol.negative_scale);

        assert!(matches!(
            solve_per_view(&samples[..1], &[m], &IrlsOptions::default()),
            Err(Error::InsufficientPatches(_))
        ));

        let flat: Vec<_> = (0..4).map(|j| sample(0, j, 3.0, 2.0, 0.7, &m)).collect();
        assert!(matches!(
            solve_per_view(&flat, &[m], &IrlsOptions::default()),
            Err(Error::RankDeficient { .. })
        ));

        let flipped: Vec<_> = samples.iter().map(|s| PatchSample { b: BlurSize(-s.b.0), ..*s }).collect();
        let sol = solve_per_view(&flipped, &[m], &IrlsOptions::default()).unwrap();
        assert!(sol.negative_scale);
    }

    fn pv(view_id: usize, s: f64, span: f64, residual: f64) -> PerViewResult {
        PerViewResult {
            view_id,
            blur_span_px: span,
            outcome: Ok(ScaleSolution {
                s,
                s_bar: 1.0 / s,
                views: vec![view_id],
                g_bar: vec![0.5],
                g_prime: vec![1.0],
                residuals: vec![residual],
                l1_history: vec![],
                iterations: 0,
                negative_scale: s <= 0.0,
            }),
        }
    }

    #[test]
    fn view_selection_examples() {
        let same: Vec<_> = (0..6).map(|v| pv(v, 1.3, 10.0, 0.0)).collect();
        let sel = select_views(&same, 2.0, 5).unwrap();
        assert_eq!(sel.selected.len(), 5);

        let narrow = vec![pv(0, 1.0, 0.5, 0.0), pv(1, 1.0, 6.0, 0.0)];
        let sel = select_views(&narrow, 2.0, 5).unwrap();
        assert_eq!(sel.selected, vec![1]);
        assert!(sel.excluded[0].1.contains("blur span"));

        let scales = [0.9, 0.95, 1.0, 1.0, 1.05, 3.0, -2.0];
        // Lower residual on view 1 (0.95) breaks the 0.95 / 1.05 tie.
        let views: Vec<_> = scales
            .iter()
            .enumerate()
            .map(|(v, &s)| pv(v, s, 10.0, if v == 1 { 0.1 } else { 0.2 }))
            .collect();
        let sel = select_views(&views, 2.0, 3).unwrap();
        assert_eq!(sel.median_scale, Some(1.0));
        assert_eq!(sel.selected, vec![1, 2, 3]);
        assert!(sel.excluded.iter().any(|(v, r)| *v == 6 && r.contains("negative")));
    }

    #[test]
    fn view_selection_fails_without_survivors() {
        let views = vec![pv(0, -1.0, 10.0, 0.0), pv(1, 1.0, 1.0, 0.0)];
        match select_views(&views, 2.0, 5) {
            Err(Error::NoSurvivingViews(reasons)) => assert_eq!(reasons.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn joint_single_view_matches_per_view() {
        let m = meta(0.085, 4.0);
        let samples: Vec<_> = [1.0, 2.0].iter().enumerate().map(|(j, &z)| sample(0, j, z, 1.4, 2.0, &m)).collect();
        let a = initial_estimate(&samples, &[m], &IrlsOptions::default()).unwrap();
        let b = solve_per_view(&samples, &[m], &IrlsOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quantized_blur_stays_close() {
        // Blur rounded to 1 px diameter on the sensor.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pitch = 5.36e-6;
        let mut errs = Vec::new();
        for _ in 0..10 {
            let s = rng.gen_range(0.3..3.0);
            let mut metas = Vec::new();
            let mut samples = Vec::new();
            for v in 0..5 {
                let m = meta(0.05, 2.0);
                let g = rng.gen_range(1.5..2.5);
                for j in 0..12 {
                    let z = rng.gen_range(0.8..6.0);
                    let mut smp = sample(v, j, z, g, s, &m);
                    smp.b = BlurSize((smp.b.0 / pitch).round() * pitch);
                    samples.push(smp);
                }
                metas.push(m);
            }
            let sol = initial_estimate(&samples, &metas, &IrlsOptions::default()).unwrap();
            errs.push((sol.s / s - 1.0).abs());
        }
        assert!(errs.iter().all(|e| *e < 0.05), "{errs:?}");
    }

    proptest! {
        #[test]
        fn scale_is_equivariant_in_depth_units(seed in 0u64..500, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (samples, metas, _, _) = random_scene(&mut rng, 3, 5);
            let scaled: Vec<_> = samples.iter().map(|s| PatchSample { z_prime: s.z_prime * c, ..*s }).collect();
            let a = initial_estimate(&samples, &metas, &IrlsOptions::default()).unwrap();
            let b = initial_estimate(&scaled, &metas, &IrlsOptions::default()).unwrap();
            prop_assert!((b.s * c - a.s).abs() <= 1e-8 * a.s);
            for (ga, gb) in a.g_bar.iter().zip(&b.g_bar) {
                prop_assert!((ga - gb).abs() <= 1e-8 * ga.abs());
            }
        }
    }
}
