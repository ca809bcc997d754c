//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 4 5`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dpscale::blur::{blur_candidates, estimate_patch_blur};
use dpscale::eval::{average_error, round3};
use dpscale::psf::{convolve, flip_h, left_psf, right_psf, Patch, PsfKernel};
use dpscale::refine::{refine_scale, FocusMap, RefinePatch};
use dpscale::solver::{assemble_system, solve_l1_irls, solve_least_squares, IrlsOptions, PatchSample};
use dpscale::synthetic::{
    depth_for_radius, multi_aperture_scene, noise_texture, random_scene, render_dataset, render_dp_patch,
    RandomSceneOptions, SceneSpec, TEXTURE_MARGIN,
};
use dpscale::{run_estimate, BlurSize, CameraMeta, Error, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const PITCH: f64 = 5.36e-6;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn meta(f: f64, n: f64) -> CameraMeta {
    CameraMeta::new(f, n, PITCH, 512, 512).unwrap()
}

/// Thin-lens blur diameter written out independently of the library.
fn blur_oracle(z: f64, g: f64, f: f64, l: f64) -> f64 {
    l * f / (1.0 - f / g) * (1.0 / g - 1.0 / z)
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn closure() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    for seed in 0..10 {
        let spec = random_scene(seed, &RandomSceneOptions::default()).map_err(|e| e.to_string())?;
        check(spec.views.len() == 5, || format!("seed {seed}: {} views", spec.views.len()))?;
        check((0.3..=3.0).contains(&spec.scale), || format!("seed {seed}: scale {}", spec.scale))?;
        for (i, v) in spec.views.iter().enumerate() {
            check(v.planes.len() == 3, || format!("seed {seed}: view {i} has {} planes", v.planes.len()))?;
            check(
                [0.035, 0.05, 0.085].contains(&v.meta.focal_length),
                || format!("seed {seed}: focal length {}", v.meta.focal_length),
            )?;
            check(
                spec.views[..i].iter().all(|w| w.focus != v.focus),
                || format!("seed {seed}: repeated focus distance"),
            )?;
        }
        let start = Instant::now();
        let data = render_dataset(&spec).map_err(|e| e.to_string())?;
        let cfg = RunConfig { threads: 1, ..Default::default() };
        let report = run_estimate(&data.views, &cfg, Some(spec.scale)).map_err(|e| format!("seed {seed}: {e}"))?;
        let elapsed = start.elapsed();
        let err = rel(report.s_optim, spec.scale);
        check(err <= 0.016, || format!("seed {seed}: |r_s - 1| = {err:.4}"))?;
        check(elapsed.as_secs_f64() <= 60.0, || format!("seed {seed}: {elapsed:.1?}"))?;
        worst = worst.max(err);
        slowest = slowest.max(elapsed);
    }
    Ok(format!("10/10 seeds, worst |r_s - 1| = {worst:.4}, slowest run {slowest:.1?}"))
}

fn exact_samples(rng: &mut ChaCha8Rng) -> (Vec<PatchSample>, Vec<CameraMeta>, f64, Vec<f64>) {
    let s = rng.gen_range(0.3..3.0);
    let views = rng.gen_range(1..=5);
    let (mut samples, mut metas, mut gs) = (Vec::new(), Vec::new(), Vec::new());
    for v in 0..views {
        let m = meta([0.035, 0.05, 0.085][rng.gen_range(0..3)], rng.gen_range(1.4..8.0));
        let g = rng.gen_range(0.5..5.0);
        for j in 0..rng.gen_range(2..8) {
            let z = rng.gen_range(0.4..10.0);
            let l = m.focal_length / m.f_number;
            samples.push(PatchSample {
                view_id: v,
                patch_id: j,
                z_prime: z / s,
                b: BlurSize(blur_oracle(z, g, m.focal_length, l)),
            });
        }
        metas.push(m);
        gs.push(g);
    }
    (samples, metas, s, gs)
}

fn solver_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let (samples, metas, s, gs) = exact_samples(&mut rng);
        let sys = assemble_system(&samples, &metas).map_err(|e| format!("trial {trial}: {e}"))?;
        let sol = solve_l1_irls(&sys, &IrlsOptions::default()).map_err(|e| format!("trial {trial}: {e}"))?;
        worst = worst.max(rel(sol.s, s));
        for (k, &v) in sol.views.iter().enumerate() {
            worst = worst.max(rel(1.0 / sol.g_bar[k], gs[v]));
        }
        check(worst <= 1e-9, || format!("trial {trial}: relative error {worst:.2e}"))?;
    }

    let m = CameraMeta::new(0.05, 0.05 / 0.027778, PITCH, 512, 512).unwrap();
    let samples: Vec<PatchSample> = [1.5, 4.0]
        .iter()
        .enumerate()
        .map(|(j, &z)| PatchSample {
            view_id: 0,
            patch_id: j,
            z_prime: z / 3.0,
            b: BlurSize(blur_oracle(z, 2.0, 0.05, 0.027778)),
        })
        .collect();
    let sys = assemble_system(&samples, &[m]).map_err(|e| e.to_string())?;
    let sol = solve_l1_irls(&sys, &IrlsOptions::default()).map_err(|e| e.to_string())?;
    check(
        (sol.g_bar[0] - 0.5).abs() <= 1e-9 && (sol.s_bar - 1.0 / 3.0).abs() <= 1e-9,
        || format!("2x2 case: g_bar = {}, s_bar = {}", sol.g_bar[0], sol.s_bar),
    )?;
    Ok(format!("100 configurations, worst relative error {worst:.1e}; 2x2 case g_bar = {:.12}, s_bar = {:.12}", sol.g_bar[0], sol.s_bar))
}

fn robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst_irls, mut best_margin) = (0.0f64, f64::INFINITY);
    for trial in 0..20 {
        let s = rng.gen_range(0.3..3.0);
        let mut samples = Vec::new();
        let mut metas = Vec::new();
        for v in 0..4 {
            let m = meta([0.035, 0.05, 0.085][rng.gen_range(0..3)], rng.gen_range(1.4..4.0));
            let g = rng.gen_range(0.8..4.0);
            for j in 0..20 {
                let z = rng.gen_range(0.5..8.0);
                samples.push(PatchSample {
                    view_id: v,
                    patch_id: j,
                    z_prime: z / s,
                    b: BlurSize(blur_oracle(z, g, m.focal_length, m.focal_length / m.f_number)),
                });
            }
            metas.push(m);
        }
        let n = samples.len();
        let mut rows: Vec<usize> = (0..n).collect();
        for i in 0..n / 5 {
            let j = rng.gen_range(i..n);
            rows.swap(i, j);
            samples[rows[i]].b = BlurSize(samples[rows[i]].b.0 * 5.0);
        }
        let sys = assemble_system(&samples, &metas).map_err(|e| e.to_string())?;
        let irls = solve_l1_irls(&sys, &IrlsOptions::default()).map_err(|e| e.to_string())?;
        let ls = solve_least_squares(&sys).map_err(|e| e.to_string())?;
        let (e_irls, e_ls) = (rel(irls.s, s), rel(ls.s, s));
        check(e_irls <= 0.05, || format!("trial {trial}: IRLS error {e_irls:.4}"))?;
        check(e_ls > e_irls, || format!("trial {trial}: least squares {e_ls:.4} vs IRLS {e_irls:.4}"))?;
        worst_irls = worst_irls.max(e_irls);
        best_margin = best_margin.min(e_ls - e_irls);
    }
    Ok(format!("20/20 trials, worst IRLS error {worst_irls:.4}, smallest least-squares excess {best_margin:.4}"))
}

fn dp_pair(texture: &Patch, r: f64, m: usize) -> Result<(Patch, Patch), String> {
    let gl = convolve(texture, &left_psf(r).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let gr = convolve(texture, &right_psf(r).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    Ok((gl.crop_center(m, m).map_err(|e| e.to_string())?, gr.crop_center(m, m).map_err(|e| e.to_string())?))
}

fn blur_oracle_search() -> Outcome {
    let m = 64;
    let mut trials = 0;
    let mut worst: f64 = 0.0;
    for step in [0.5, 0.1] {
        let candidates = blur_candidates(15.0, step).map_err(|e| e.to_string())?;
        for seed in 0..5 {
            let texture = noise_texture(m + 32, m + 32, 1000 + seed);
            for r0 in [-8.0, -4.0, -1.0, 0.0, 1.0, 4.0, 8.0] {
                let (gl, gr) = dp_pair(&texture, r0, m)?;
                let est = estimate_patch_blur(&gl, &gr, &candidates).map_err(|e| e.to_string())?;
                let err = (est.radius_px - r0).abs();
                check(err <= 0.5 + 1e-9, || format!("step {step}, seed {seed}, r0 {r0}: estimated {}", est.radius_px))?;
                worst = worst.max(err);
                trials += 1;
            }
        }
    }
    Ok(format!("{trials}/{trials} trials within 0.5 px (grid steps 0.5 and 0.1), worst error {worst:.2} px"))
}

fn psf_properties() -> Outcome {
    for r in [0.4, 1.0, 2.5, 8.0] {
        for r in [r, -r] {
            let k = right_psf(r).map_err(|e| e.to_string())?;
            let mirrored = right_psf(-r).map_err(|e| e.to_string())?;
            let flipped = flip_h(&k);
            check(
                flipped.side() == mirrored.side() && flipped.weights() == mirrored.weights(),
                || format!("flip_h(right_psf({r})) != right_psf({})", -r),
            )?;
            for kernel in [&k, &left_psf(r).map_err(|e| e.to_string())?] {
                let sum: f64 = kernel.weights().iter().sum();
                check((sum - 1.0).abs() <= 1e-12, || format!("r = {r}: kernel sum {sum}"))?;
            }
        }
    }
    let zero = right_psf(0.0).map_err(|e| e.to_string())?;
    check(zero == PsfKernel::delta() && zero.side() == 1 && zero.weights() == [1.0], || {
        format!("r = 0 gives a {}x{} kernel", zero.side(), zero.side())
    })?;
    Ok("mirror symmetry exact for 8 radii, unit sums within 1e-12, r = 0 is the delta".into())
}

/// Patches of three planes in each of two views, with three color channels.
fn refine_fixture(s: f64, in_focus: bool) -> (Vec<RefinePatch>, FocusMap, Vec<CameraMeta>) {
    let metas = vec![meta(0.05, 2.0), meta(0.035, 1.4)];
    let focus = [1.6, 2.2];
    let radii = [[-5.0, 3.5, 7.0], [-6.0, 4.0, 9.0]];
    let side = 64 + 2 * TEXTURE_MARGIN;
    let mut patches = Vec::new();
    let mut g_prime = FocusMap::new();
    for v in 0..2 {
        g_prime.insert(v, focus[v] / s);
        for (j, &r) in radii[v].iter().enumerate() {
            let z = if in_focus { focus[v] } else { depth_for_radius(r, focus[v], &metas[v]).unwrap() };
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for c in 0..3u64 {
                let texture = noise_texture(side, side, 100 * v as u64 + 10 * j as u64 + c);
                let (l, r) = render_dp_patch(&texture, z, focus[v], &metas[v]).unwrap();
                left.push(l.crop_center(64, 64).unwrap());
                right.push(r.crop_center(64, 64).unwrap());
            }
            patches.push(RefinePatch {
                view_id: v,
                patch_id: j,
                z_prime: z / s,
                left,
                right,
            });
        }
    }
    (patches, g_prime, metas)
}

fn ranking(losses: &[Option<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| {
        let key = |i: usize| losses[i].unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.cmp(&b))
    });
    idx
}

fn eta_invariance() -> Outcome {
    let s = 1.7;
    let s_star = 1.8;
    let (patches, g_prime, metas) = refine_fixture(s, false);
    let base = refine_scale(s_star, &g_prime, &patches, &metas, 0.8, 100).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..5 {
        let gained: Vec<RefinePatch> = patches
            .iter()
            .map(|p| {
                let mut p = p.clone();
                for ch in p.left.iter_mut().chain(p.right.iter_mut()) {
                    *ch = ch.scaled(rng.gen_range(0.5..=2.0));
                }
                p
            })
            .collect();
        let rec = refine_scale(s_star, &g_prime, &gained, &metas, 0.8, 100).map_err(|e| e.to_string())?;
        check(ranking(&rec.losses) == ranking(&base.losses), || format!("trial {trial}: candidate ranking changed"))?;
        check(rec.s_optim == base.s_optim, || format!("trial {trial}: s_optim {} vs {}", rec.s_optim, base.s_optim))?;
    }
    Ok(format!("ranking of 100 candidates and s_optim = {:.4} unchanged over 5 gain draws", base.s_optim))
}

fn metric_arithmetic() -> Outcome {
    let a = average_error(&[0.983, 1.008, 0.994]).map_err(|e| e.to_string())?;
    let b = average_error(&[1.078, 0.993, 1.082]).map_err(|e| e.to_string())?;
    check(round3(a) == 0.010 && format!("{a:.3}") == "0.010", || format!("first set gives {a}"))?;
    check(round3(b) == 0.056 && format!("{b:.3}") == "0.056", || format!("second set gives {b}"))?;
    Ok(format!("e_s = {a:.3} and {b:.3}"))
}

/// Views per aperture and image size of the multi-aperture scenes.
const APERTURE_VIEWS: usize = 3;
const APERTURE_SIZE: usize = 512;

fn multi_aperture() -> Outcome {
    let groups = [1.8, 4.0, 8.0];
    let opts = RandomSceneOptions {
        views: APERTURE_VIEWS,
        size: APERTURE_SIZE,
        ..Default::default()
    };
    let cfg = RunConfig::default();
    let mut lines = Vec::new();
    for seed in 0..10 {
        let spec = multi_aperture_scene(seed, &groups, &opts).map_err(|e| e.to_string())?;
        let data = render_dataset(&spec).map_err(|e| e.to_string())?;
        let mut singles = Vec::new();
        for n in groups {
            let tag = format!("f/{n}");
            let views: Vec<_> = data.views.iter().filter(|v| v.aperture_group.as_deref() == Some(tag.as_str())).cloned().collect();
            // A run that fails outright counts as the worst possible estimate.
            let err = run_estimate(&views, &cfg, None).map(|r| rel(r.s_optim, spec.scale)).unwrap_or(f64::INFINITY);
            singles.push(err);
        }
        let pooled = run_estimate(&data.views, &cfg, None).map_err(|e| format!("seed {seed}: pooled run: {e}"))?;
        let pooled_err = rel(pooled.s_optim, spec.scale);
        let mut sorted = singles.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[1];
        check(pooled_err <= median, || {
            format!("seed {seed}: pooled {pooled_err:.4} vs single-aperture {singles:.4?}")
        })?;
        lines.push(format!("{pooled_err:.4}<={median:.4}"));
    }
    Ok(format!("10/10 seeds, pooled vs median single-aperture |r_s - 1|: {}", lines.join(" ")))
}

fn flatten_depths(spec: &mut SceneSpec) {
    for v in &mut spec.views {
        let d = v.planes[0].depth;
        for p in &mut v.planes {
            p.depth = d;
        }
    }
}

fn failure_modes() -> Outcome {
    let opts = RandomSceneOptions {
        views: 3,
        size: 512,
        color: false,
        ..Default::default()
    };
    let mut spec = random_scene(11, &opts).map_err(|e| e.to_string())?;
    flatten_depths(&mut spec);
    let data = render_dataset(&spec).map_err(|e| e.to_string())?;
    match run_estimate(&data.views, &RunConfig::default(), None) {
        Err(e) => check(matches!(e.root(), Error::RankDeficient { .. }), || format!("single depth: unexpected error {e}"))?,
        Ok(_) => return Err("single depth: estimation succeeded".into()),
    }

    let s_star = 1.13;
    let (patches, g_prime, metas) = refine_fixture(1.0, true);
    let rec = refine_scale(s_star, &g_prime, &patches, &metas, 0.8, 100).map_err(|e| e.to_string())?;
    check(rec.flat && rec.s_optim == s_star, || format!("all in focus: s_optim {} (flat {})", rec.s_optim, rec.flat))?;

    let mut spec = random_scene(12, &opts).map_err(|e| e.to_string())?;
    let (meta0, g0) = (spec.views[0].meta, spec.views[0].focus);
    for (p, r) in spec.views[0].planes.iter_mut().zip([-0.6, 0.6, -0.6]) {
        p.depth = depth_for_radius(r, g0, &meta0).ok_or("no depth for radius")?;
    }
    let data = render_dataset(&spec).map_err(|e| e.to_string())?;
    let report = run_estimate(&data.views, &RunConfig::default(), None).map_err(|e| e.to_string())?;
    let v0 = &report.views[0];
    let reason = v0.exclusion.clone().unwrap_or_default();
    check(!v0.selected && reason.contains("T_p"), || format!("low-span view: selected {}, reason {reason:?}", v0.selected))?;
    check(report.views[1..].iter().all(|v| v.selected), || "other views were dropped".into())?;
    Ok(format!("rank deficiency raised; all-in-focus keeps s* = {s_star}; low-span view excluded ({reason})"))
}

fn determinism() -> Outcome {
    let opts = RandomSceneOptions {
        views: 3,
        size: 384,
        ..Default::default()
    };
    let spec = random_scene(21, &opts).map_err(|e| e.to_string())?;
    let data = render_dataset(&spec).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in [1, 1, 4, 4] {
        let cfg = RunConfig { threads, ..Default::default() };
        let mut r = run_estimate(&data.views, &cfg, Some(spec.scale)).map_err(|e| e.to_string())?;
        let same_threads = r.reproducible_json().map_err(|e| e.to_string())?;
        r.config.threads = 0;
        outputs.push((same_threads, r.reproducible_json().map_err(|e| e.to_string())?));
    }
    check(outputs[0].0 == outputs[1].0, || "two single-threaded runs differ".into())?;
    check(outputs[2].0 == outputs[3].0, || "two 4-thread runs differ".into())?;
    check(outputs[0].1 == outputs[2].1, || "1-thread and 4-thread reports differ".into())?;
    Ok(format!("identical reports at 1 and 4 threads ({} bytes)", outputs[0].0.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("forward/inverse closure", closure),
        ("linear-solver exactness", solver_exactness),
        ("IRLS robustness", robustness),
        ("blur-estimation oracle", blur_oracle_search),
        ("PSF properties", psf_properties),
        ("gain invariance", eta_invariance),
        ("metric arithmetic", metric_arithmetic),
        ("multi-aperture pooling", multi_aperture),
        ("failure-mode contracts", failure_modes),
        ("determinism", determinism),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let t = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{t:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{t:.1} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
