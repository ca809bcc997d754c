//! End-to-end scale estimation over a set of dual-pixel views.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blur::{blur_candidates, build_patch_grid, select_top_patches, BlurEstimate, BlurSearch, PatchGrid};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{average_error, scale_ratio};
use crate::optics::{BlurSize, CameraMeta};
use crate::refine::{refine_scale, FocusMap, LossContribution, RefinePatch};
use crate::solver::{assemble_system, initial_estimate, select_views, solve_per_view, PatchSample, PerViewResult};
use crate::view::DpView;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Blur estimates for every valid patch of one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewBlurMap {
    pub view: String,
    pub view_index: usize,
    pub grid: PatchGrid,
    pub estimates: Vec<BlurEstimate>,
    /// Valid patches whose estimation failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

fn blur_search(cfg: &RunConfig) -> Result<BlurSearch> {
    BlurSearch::new(&blur_candidates(cfg.r_max(), cfg.blur_step)?, cfg.m)
}

fn estimate_with(view: &DpView, view_index: usize, cfg: &RunConfig, search: &BlurSearch) -> Result<ViewBlurMap> {
    let grid = build_patch_grid(view, cfg.m, cfg.stride, &cfg.grid)?;
    let left = view.left.estimation_plane();
    let right = view.right.estimation_plane();
    let m = cfg.m;
    let results: Vec<(usize, Result<BlurEstimate>)> = grid
        .valid()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|rec| {
            let est = (|| {
                let gl = left.crop(rec.x, rec.y, m, m)?;
                let gr = right.crop(rec.x, rec.y, m, m)?;
                let mut e = search.estimate(&gl, &gr)?;
                e.patch_id = rec.id;
                e.view_id = view_index;
                Ok(e)
            })();
            (rec.id, est)
        })
        .collect();
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(e) => estimates.push(e),
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    Ok(ViewBlurMap {
        view: view.id.clone(),
        view_index,
        grid,
        estimates,
        failures,
    })
}

/// Per-patch blur estimates for one view.
pub fn blur_map(view: &DpView, view_index: usize, cfg: &RunConfig) -> Result<ViewBlurMap> {
    cfg.validate()?;
    let search = blur_search(cfg).map_err(|e| e.at_stage("blur estimation"))?;
    estimate_with(view, view_index, cfg, &search).map_err(|e| e.at_stage("blur estimation"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewReport {
    pub id: String,
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aperture_group: Option<String>,
    pub valid_patches: usize,
    pub selected_patches: Vec<usize>,
    pub blur_span_px: Option<f64>,
    pub per_view_scale: Option<f64>,
    pub selected: bool,
    pub exclusion: Option<String>,
    /// Inverse focus distance (1/m) from the joint solve.
    pub g_bar: Option<f64>,
    /// Focus distance in meters from the joint solve.
    pub focus_m: Option<f64>,
    /// Focus distance in reconstruction units.
    pub g_prime: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub scale: f64,
    /// `None` for an invalid candidate.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub s_gt: f64,
    pub ratio_initial: f64,
    pub ratio_optim: f64,
    pub error_initial: f64,
    pub error_optim: f64,
}

impl Evaluation {
    pub fn new(s_initial: f64, s_optim: f64, s_gt: f64) -> Result<Self> {
        let ratio_initial = scale_ratio(s_initial, s_gt)?;
        let ratio_optim = scale_ratio(s_optim, s_gt)?;
        Ok(Evaluation {
            s_gt,
            ratio_initial,
            ratio_optim,
            error_initial: average_error(&[ratio_initial])?,
            error_optim: average_error(&[ratio_optim])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub status: String,
    pub s_initial: f64,
    pub s_optim: f64,
    pub views: Vec<ViewReport>,
    pub loss_curve: Vec<CurvePoint>,
    pub best_candidate: usize,
    /// The loss curve was constant and the initial scale was kept.
    pub flat_loss_curve: bool,
    pub degenerate_patches: usize,
    pub contributions: Vec<LossContribution>,
    pub blur_estimates: Vec<BlurEstimate>,
    pub evaluation: Option<Evaluation>,
    pub config: RunConfig,
    /// Wall-clock milliseconds per stage; excluded from reproducibility checks.
    pub timings: BTreeMap<String, f64>,
}

impl Report {
    /// Serialized report with the timing field emptied.
    pub fn reproducible_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.timings.clear();
        Ok(serde_json::to_string_pretty(&r)?)
    }
}

/// Written instead of a [`Report`] when the pipeline fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub schema_version: u32,
    pub status: String,
    pub stage: Option<String>,
    pub error: String,
    pub kind: String,
    pub config: RunConfig,
}

impl FailureReport {
    pub fn new(err: &Error, config: &RunConfig) -> Self {
        let stage = match err {
            Error::Stage { stage, .. } => Some(stage.to_string()),
            _ => None,
        };
        let kind = match err.root() {
            Error::RankDeficient { .. } => "rank_deficient",
            Error::NoSurvivingViews(_) => "no_surviving_views",
            Error::InsufficientPatches(_) => "insufficient_patches",
            Error::NegativeFocus(_) => "negative_focus",
            Error::Solver(_) => "solver",
            Error::Loss(_) => "loss",
            Error::Candidate(_) => "candidate",
            _ => "other",
        };
        FailureReport {
            schema_version: REPORT_SCHEMA_VERSION,
            status: "failed".into(),
            stage,
            error: err.to_string(),
            kind: kind.into(),
            config: config.clone(),
        }
    }
}

struct Timer {
    times: BTreeMap<String, f64>,
    last: Instant,
}

impl Timer {
    fn new() -> Self {
        Timer {
            times: BTreeMap::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.times.insert(name.into(), (now - self.last).as_secs_f64() * 1e3);
        self.last = now;
    }
}

fn samples_for(map: &ViewBlurMap, selected: &[usize], meta: &CameraMeta) -> Vec<PatchSample> {
    map.estimates
        .iter()
        .filter(|e| selected.binary_search(&e.patch_id).is_ok())
        .map(|e| PatchSample {
            view_id: map.view_index,
            patch_id: e.patch_id,
            z_prime: map.grid.records[e.patch_id].depth_median.expect("valid patches have depth"),
            b: BlurSize::from_pixel_radius(e.radius_px, meta.sensor_pitch),
        })
        .collect()
}

/// Runs the whole estimation on a fixed-size worker pool. `threads == 0`
/// uses the available parallelism.
pub fn run_estimate(views: &[DpView], cfg: &RunConfig, s_gt: Option<f64>) -> Result<Report> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if cfg.threads > 0 {
        builder = builder.num_threads(cfg.threads);
    }
    let pool = builder.build().map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(views, cfg, s_gt))
}

fn run_inner(views: &[DpView], cfg: &RunConfig, s_gt: Option<f64>) -> Result<Report> {
    if views.is_empty() {
        return Err(Error::InsufficientPatches("no views given".into()).at_stage("patch grid"));
    }
    let mut timer = Timer::new();
    let metas: Vec<CameraMeta> = views.iter().map(|v| v.meta).collect();

    let search = blur_search(cfg).map_err(|e| e.at_stage("blur estimation"))?;
    let maps: Vec<Result<ViewBlurMap>> = views
        .par_iter()
        .enumerate()
        .map(|(i, v)| estimate_with(v, i, cfg, &search))
        .collect();
    timer.lap("blur_estimation");

    let mut reports: Vec<ViewReport> = views
        .iter()
        .enumerate()
        .map(|(i, v)| ViewReport {
            id: v.id.clone(),
            index: i,
            aperture_group: v.aperture_group.clone(),
            valid_patches: 0,
            selected_patches: Vec::new(),
            blur_span_px: None,
            per_view_scale: None,
            selected: false,
            exclusion: None,
            g_bar: None,
            focus_m: None,
            g_prime: None,
        })
        .collect();

    let mut samples: Vec<Vec<PatchSample>> = vec![Vec::new(); views.len()];
    let mut usable: Vec<&ViewBlurMap> = Vec::new();
    let mut blur_estimates = Vec::new();
    for (i, map) in maps.iter().enumerate() {
        let map = match map {
            Ok(m) => m,
            Err(e) => {
                reports[i].exclusion = Some(e.to_string());
                continue;
            }
        };
        reports[i].valid_patches = map.grid.valid_count();
        match select_top_patches(&map.grid, &map.estimates, cfg.t_c) {
            Ok(ids) => {
                samples[i] = samples_for(map, &ids, &metas[i]);
                blur_estimates.extend(map.estimates.iter().filter(|e| ids.binary_search(&e.patch_id).is_ok()).copied());
                reports[i].selected_patches = ids;
                usable.push(map);
            }
            Err(e) => reports[i].exclusion = Some(e.to_string()),
        }
    }
    timer.lap("patch_selection");

    let per_view: Vec<(usize, f64, Result<crate::solver::ScaleSolution>)> = usable
        .par_iter()
        .map(|map| {
            let i = map.view_index;
            let radii = samples[i].iter().map(|s| s.b.0 / (2.0 * metas[i].sensor_pitch));
            let span = radii.clone().fold(f64::NEG_INFINITY, f64::max) - radii.fold(f64::INFINITY, f64::min);
            (i, span, solve_per_view(&samples[i], &metas, &cfg.irls))
        })
        .collect();
    let all_rank_deficient = !per_view.is_empty()
        && per_view
            .iter()
            .all(|(_, _, r)| matches!(r, Err(Error::RankDeficient { .. })));
    if all_rank_deficient {
        let all: Vec<PatchSample> = samples.iter().flatten().cloned().collect();
        let err = match assemble_system(&all, &metas) {
            Err(e) => e,
            Ok(_) => Error::RankDeficient {
                rank: 0,
                unknowns: 0,
                views: per_view.iter().map(|(i, _, _)| views[*i].id.clone()).collect(),
            },
        };
        return Err(name_views(err, views).at_stage("per-view solve"));
    }
    let per_view: Vec<PerViewResult> = per_view
        .into_iter()
        .map(|(i, span, r)| {
            reports[i].blur_span_px = Some(span);
            if let Ok(sol) = &r {
                reports[i].per_view_scale = Some(sol.s);
            }
            PerViewResult {
                view_id: i,
                blur_span_px: span,
                outcome: r.map_err(|e| e.to_string()),
            }
        })
        .collect();
    timer.lap("per_view_solve");

    let selection = match select_views(&per_view, cfg.t_p, cfg.n_v) {
        Ok(s) => s,
        Err(Error::NoSurvivingViews(mut reasons)) => {
            // Views dropped before the per-view stage carry their own reasons.
            for r in &reports {
                if let Some(why) = &r.exclusion {
                    reasons.push((r.index.to_string(), why.clone()));
                }
            }
            reasons.sort();
            let named = reasons
                .into_iter()
                .map(|(v, why)| (v.parse::<usize>().map_or(v.clone(), |i| views[i].id.clone()), why))
                .collect();
            return Err(Error::NoSurvivingViews(named).at_stage("view selection"));
        }
        Err(e) => return Err(e.at_stage("view selection")),
    };
    for (i, why) in &selection.excluded {
        reports[*i].exclusion = Some(why.clone());
    }
    for &i in &selection.selected {
        reports[i].selected = true;
    }
    timer.lap("view_selection");

    let joint: Vec<PatchSample> = selection.selected.iter().flat_map(|&i| samples[i].iter().cloned()).collect();
    let initial = initial_estimate(&joint, &metas, &cfg.irls).map_err(|e| name_views(e, views).at_stage("initial estimate"))?;
    let mut focus = FocusMap::new();
    for (k, &v) in initial.views.iter().enumerate() {
        focus.insert(v, initial.g_prime[k]);
        reports[v].g_bar = Some(initial.g_bar[k]);
        reports[v].focus_m = Some(1.0 / initial.g_bar[k]);
        reports[v].g_prime = Some(initial.g_prime[k]);
    }
    timer.lap("initial_estimate");

    let m = cfg.m;
    let mut patches = Vec::new();
    for &i in &selection.selected {
        let map = maps[i].as_ref().expect("selected views have blur maps");
        for &pid in &reports[i].selected_patches {
            let rec = &map.grid.records[pid];
            let crop = |img: &crate::view::Image| -> Result<Vec<crate::psf::Patch>> {
                img.planes().iter().map(|p| p.crop(rec.x, rec.y, m, m)).collect()
            };
            patches.push(RefinePatch {
                view_id: i,
                patch_id: pid,
                z_prime: rec.depth_median.expect("valid patches have depth"),
                left: crop(&views[i].left)?,
                right: crop(&views[i].right)?,
            });
        }
    }
    let rec = refine_scale(initial.s, &focus, &patches, &metas, cfg.t_s, cfg.candidates)
        .map_err(|e| e.at_stage("refinement"))?;
    timer.lap("refinement");

    let evaluation = s_gt.map(|gt| Evaluation::new(initial.s, rec.s_optim, gt)).transpose()?;
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        status: "ok".into(),
        s_initial: initial.s,
        s_optim: rec.s_optim,
        views: reports,
        loss_curve: rec
            .candidates
            .values
            .iter()
            .zip(&rec.losses)
            .map(|(s, l)| CurvePoint { scale: *s, loss: *l })
            .collect(),
        best_candidate: rec.best_index,
        flat_loss_curve: rec.flat,
        degenerate_patches: rec.degenerate,
        contributions: rec.contributions,
        blur_estimates,
        evaluation,
        config: cfg.clone(),
        timings: timer.times,
    })
}

/// Replaces numeric view indices in solver errors with view ids.
fn name_views(err: Error, views: &[DpView]) -> Error {
    let name = |s: String| s.parse::<usize>().ok().and_then(|i| views.get(i)).map_or(s, |v| v.id.clone());
    match err {
        Error::RankDeficient { rank, unknowns, views: vs } => Error::RankDeficient {
            rank,
            unknowns,
            views: vs.into_iter().map(name).collect(),
        },
        Error::NegativeFocus(v) => Error::NegativeFocus(name(v)),
        e => e,
    }
}
