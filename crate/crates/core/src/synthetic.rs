//! Forward renderer for dual-pixel datasets with known scale, focus and optics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{blur_to_pixel_radius, thin_lens_blur, BlurSize, CameraMeta};
use crate::psf::{flip_h, psf_side, right_psf, Patch, PreparedPatch};
use crate::view::{DepthMap, DpView, Image};

/// Texture margin around every plane; bounds the largest renderable radius.
pub const TEXTURE_MARGIN: usize = 40;

const SENSOR_PITCH: f64 = 5.36e-6;

/// Textured fronto-parallel plane covering an axis-aligned image rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    /// Absolute depth in meters.
    pub depth: f64,
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub texture_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub id: String,
    /// Focus distance in meters.
    pub focus: f64,
    pub meta: CameraMeta,
    pub planes: Vec<PlaneSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aperture_group: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of additive gaussian noise.
    #[serde(default)]
    pub sigma: f64,
    /// Gains are drawn from `[1 - gain_jitter, 1 + gain_jitter]` per side and channel.
    #[serde(default)]
    pub gain_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scale: f64,
    pub views: Vec<ViewSpec>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub color: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneTruth {
    pub depth: f64,
    pub z_prime: f64,
    pub blur: BlurSize,
    pub radius_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTruth {
    pub id: String,
    pub focus: f64,
    pub focus_prime: f64,
    pub planes: Vec<PlaneTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scale: f64,
    pub views: Vec<ViewTruth>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub views: Vec<DpView>,
    pub truth: GroundTruth,
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = (0..=2 * half)
        .map(|i| {
            let d = i as f64 - half as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable gaussian blur, valid region only.
fn gaussian_valid(p: &Patch, sigma: f64) -> Patch {
    let taps = gaussian_taps(sigma);
    let n = taps.len();
    let (w, h) = (p.width(), p.height());
    let ow = w + 1 - n;
    let horiz: Vec<f64> = (0..h)
        .flat_map(|y| {
            let row = p.row(y);
            let taps = &taps;
            (0..ow).map(move |x| taps.iter().zip(&row[x..x + n]).map(|(t, v)| t * v).sum::<f64>())
        })
        .collect();
    let oh = h + 1 - n;
    Patch::from_fn(ow, oh, |x, y| (0..n).map(|k| taps[k] * horiz[(y + k) * ow + x]).sum())
}

/// Band-limited noise texture in roughly `[0.1, 0.9]`: a fine and a coarse
/// gaussian-filtered white noise layer.
pub fn noise_texture(width: usize, height: usize, seed: u64) -> Patch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pad = 12;
    let (pw, ph) = (width + 2 * pad, height + 2 * pad);
    let white: Vec<f64> = (0..pw * ph).map(|_| rng.gen::<f64>() - 0.5).collect();
    let white = Patch::new(pw, ph, white).expect("sized buffer");
    let a = gaussian_valid(&white, 0.8);
    let b = gaussian_valid(&white, 3.0);
    let a = a.crop_center(width, height).expect("padded");
    let b = b.crop_center(width, height).expect("padded");
    Patch::from_fn(width, height, |x, y| {
        (0.5 + 1.6 * a.get(x, y) + 4.0 * b.get(x, y)).clamp(0.05, 0.95)
    })
}

/// Pixel radius of a point at depth `z` seen by a camera focused at `g`.
pub fn true_radius(z: f64, g: f64, meta: &CameraMeta) -> Result<(BlurSize, f64)> {
    let b = thin_lens_blur(z, g, meta.focal_length, meta.aperture_diameter())?;
    Ok((b, blur_to_pixel_radius(b, meta.sensor_pitch)?))
}

/// Renders a left/right pair from a sharp texture. Both outputs cover the
/// valid region of the convolution.
pub fn render_dp_patch(texture: &Patch, z: f64, g: f64, meta: &CameraMeta) -> Result<(Patch, Patch)> {
    let (_, r) = true_radius(z, g, meta)?;
    let side = psf_side(r);
    if side > texture.width() || side > texture.height() {
        return Err(Error::Dimension(format!(
            "kernel of side {side} exceeds texture {}x{}",
            texture.width(),
            texture.height()
        )));
    }
    let h = right_psf(r)?;
    let prepared = PreparedPatch::new(texture);
    let left = prepared.convolve(&flip_h(&h))?;
    let right = prepared.convolve(&h)?;
    Ok((left.with_channel(texture.channel), right.with_channel(texture.channel)))
}

fn channel_textures(plane: &PlaneSpec, color: bool) -> Vec<Patch> {
    let (w, h) = (plane.width + 2 * TEXTURE_MARGIN, plane.height + 2 * TEXTURE_MARGIN);
    let base = noise_texture(w, h, plane.texture_seed);
    if !color {
        return vec![base];
    }
    (0..3u64)
        .map(|c| {
            let own = noise_texture(w, h, plane.texture_seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(c + 1)));
            let tint = [0.9, 1.0, 0.8][c as usize];
            Patch::from_fn(w, h, |x, y| tint * (0.7 * base.get(x, y) + 0.3 * own.get(x, y)))
        })
        .collect()
}

fn check_view(v: &ViewSpec) -> Result<()> {
    v.meta.validate()?;
    let (w, h) = (v.meta.image_width, v.meta.image_height);
    if v.focus <= v.meta.focal_length {
        return Err(Error::Scene(format!("view {}: focus distance must exceed the focal length", v.id)));
    }
    for (i, p) in v.planes.iter().enumerate() {
        if p.width == 0 || p.height == 0 || p.x + p.width > w || p.y + p.height > h {
            return Err(Error::Scene(format!("view {}: plane {i} lies outside the {w}x{h} image", v.id)));
        }
        if !(p.depth > v.meta.focal_length && p.depth.is_finite()) {
            return Err(Error::Scene(format!("view {}: plane {i} depth must exceed the focal length", v.id)));
        }
        for (j, q) in v.planes.iter().enumerate().take(i) {
            let overlap = p.x < q.x + q.width && q.x < p.x + p.width && p.y < q.y + q.height && q.y < p.y + p.height;
            if overlap {
                return Err(Error::Scene(format!("view {}: planes {j} and {i} overlap", v.id)));
            }
        }
    }
    Ok(())
}

fn render_view(spec: &SceneSpec, index: usize) -> Result<(DpView, ViewTruth)> {
    let v = &spec.views[index];
    let (w, h) = (v.meta.image_width, v.meta.image_height);
    let channels = if spec.color { 3 } else { 1 };
    let mut left = vec![vec![0.5; w * h]; channels];
    let mut right = left.clone();
    let mut depth = vec![f64::NAN; w * h];
    let mut planes = Vec::with_capacity(v.planes.len());
    for plane in &v.planes {
        let (b, r) = true_radius(plane.depth, v.focus, &v.meta)?;
        let half = psf_side(r) / 2;
        if half > TEXTURE_MARGIN {
            return Err(Error::Scene(format!(
                "view {}: blur radius {r:.1} px exceeds the renderable margin",
                v.id
            )));
        }
        let z_prime = plane.depth / spec.scale;
        for (c, tex) in channel_textures(plane, spec.color).iter().enumerate() {
            let crop = tex.crop(
                TEXTURE_MARGIN - half,
                TEXTURE_MARGIN - half,
                plane.width + 2 * half,
                plane.height + 2 * half,
            )?;
            let (pl, pr) = render_dp_patch(&crop, plane.depth, v.focus, &v.meta)?;
            for y in 0..plane.height {
                let row = (plane.y + y) * w + plane.x;
                left[c][row..row + plane.width].copy_from_slice(pl.row(y));
                right[c][row..row + plane.width].copy_from_slice(pr.row(y));
            }
        }
        for y in 0..plane.height {
            let row = (plane.y + y) * w + plane.x;
            depth[row..row + plane.width].fill(z_prime);
        }
        planes.push(PlaneTruth {
            depth: plane.depth,
            z_prime,
            blur: b,
            radius_px: r,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let noise = spec.noise;
    let normal = Normal::new(0.0, noise.sigma.max(0.0)).map_err(|e| Error::Scene(e.to_string()))?;
    for plane in left.iter_mut().chain(right.iter_mut()) {
        let gain = if noise.gain_jitter > 0.0 {
            rng.gen_range(1.0 - noise.gain_jitter..=1.0 + noise.gain_jitter)
        } else {
            1.0
        };
        for px in plane.iter_mut() {
            *px *= gain;
            if noise.sigma > 0.0 {
                *px += normal.sample(&mut rng);
            }
        }
    }

    let to_image = |planes: Vec<Vec<f64>>| -> Result<Image> {
        let mut ps = planes.into_iter().map(|d| Patch::new(w, h, d));
        if spec.color {
            let (r, g, b) = (ps.next().unwrap()?, ps.next().unwrap()?, ps.next().unwrap()?);
            Image::rgb(r, g, b)
        } else {
            Ok(Image::mono(ps.next().unwrap()?))
        }
    };
    let mut view = DpView::new(v.id.clone(), to_image(left)?, to_image(right)?, DepthMap::new(w, h, depth)?, v.meta)?;
    view.aperture_group = v.aperture_group.clone();
    let truth = ViewTruth {
        id: v.id.clone(),
        focus: v.focus,
        focus_prime: v.focus / spec.scale,
        planes,
    };
    Ok((view, truth))
}

/// Renders every view of a scene. Output is a pure function of the spec.
pub fn render_dataset(spec: &SceneSpec) -> Result<SyntheticDataset> {
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(Error::Scene(format!("scale must be positive, got {}", spec.scale)));
    }
    if spec.views.is_empty() {
        return Err(Error::Scene("scene has no views".into()));
    }
    if !(spec.noise.sigma >= 0.0 && (0.0..1.0).contains(&spec.noise.gain_jitter)) {
        return Err(Error::Scene("noise sigma must be >= 0 and gain jitter in [0, 1)".into()));
    }
    for v in &spec.views {
        check_view(v)?;
    }
    let rendered: Vec<(DpView, ViewTruth)> = (0..spec.views.len())
        .into_par_iter()
        .map(|i| render_view(spec, i))
        .collect::<Result<_>>()?;
    let (views, truths) = rendered.into_iter().unzip();
    Ok(SyntheticDataset {
        views,
        truth: GroundTruth {
            scale: spec.scale,
            views: truths,
        },
    })
}

/// Vertical bands covering the image, with inner boundaries rounded to
/// multiples of `align` pixels when that keeps every band non-empty.
pub fn vertical_bands(width: usize, height: usize, depths: &[f64], align: usize, seed: u64) -> Vec<PlaneSpec> {
    let n = depths.len();
    let mut edges: Vec<usize> = (0..=n).map(|i| i * width / n).collect();
    if align > 0 {
        let snapped: Vec<usize> = edges
            .iter()
            .enumerate()
            .map(|(i, e)| if i == 0 || i == n { *e } else { ((*e as f64 / align as f64).round() as usize) * align })
            .collect();
        if snapped.windows(2).all(|w| w[0] < w[1]) {
            edges = snapped;
        }
    }
    (0..n)
        .map(|i| PlaneSpec {
            depth: depths[i],
            x: edges[i],
            y: 0,
            width: edges[i + 1] - edges[i],
            height,
            texture_seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
        })
        .collect()
}

/// Depth at which a camera focused at `g` sees a blur of `r` pixels.
pub fn depth_for_radius(r: f64, g: f64, meta: &CameraMeta) -> Option<f64> {
    let f = meta.focal_length;
    let k = meta.aperture_diameter() * f / (1.0 - f / g) / (2.0 * meta.sensor_pitch);
    let inv = 1.0 / g - r / k;
    (inv > 0.0).then(|| 1.0 / inv)
}

/// Options for [`random_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSceneOptions {
    pub views: usize,
    pub planes: usize,
    pub size: usize,
    pub focal_lengths: Vec<f64>,
    pub f_numbers: Vec<f64>,
    pub scale_range: (f64, f64),
    pub focus_range: (f64, f64),
    /// Magnitudes of the rendered blur radii at the widest aperture.
    pub radius_range: (f64, f64),
    pub color: bool,
    pub noise: NoiseModel,
    /// Band boundaries snap to this many pixels; 0 disables snapping.
    pub band_align: usize,
}

impl Default for RandomSceneOptions {
    fn default() -> Self {
        RandomSceneOptions {
            views: 5,
            planes: 3,
            size: 512,
            focal_lengths: vec![0.035, 0.05, 0.085],
            f_numbers: vec![1.4, 1.8, 2.0, 2.8],
            scale_range: (0.3, 3.0),
            focus_range: (0.8, 3.0),
            radius_range: (4.0, 13.0),
            color: true,
            noise: NoiseModel::default(),
            band_align: 64,
        }
    }
}

fn random_radii(n: usize, range: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Alternate signs so each view has points on both sides of focus, and
    // keep the magnitudes at least one pixel apart.
    loop {
        let radii: Vec<f64> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
                sign * rng.gen_range(range.0..=range.1)
            })
            .collect();
        let distinct = radii
            .iter()
            .enumerate()
            .all(|(i, a)| radii[..i].iter().all(|b| (a - b).abs() >= 1.0));
        if distinct {
            return radii;
        }
    }
}

/// Seeded multi-view scene of vertical-band planes. Plane depths are chosen
/// so the rendered radii fall inside `radius_range` in magnitude.
pub fn random_scene(seed: u64, opts: &RandomSceneOptions) -> Result<SceneSpec> {
    if opts.focal_lengths.is_empty() || opts.f_numbers.is_empty() || opts.views == 0 || opts.planes == 0 {
        return Err(Error::Scene("random scene options must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.gen_range(opts.scale_range.0..=opts.scale_range.1);
    let mut views = Vec::with_capacity(opts.views);
    for i in 0..opts.views {
        let f = opts.focal_lengths[rng.gen_range(0..opts.focal_lengths.len())];
        let n = opts.f_numbers[rng.gen_range(0..opts.f_numbers.len())];
        let meta = CameraMeta::new(f, n, SENSOR_PITCH, opts.size, opts.size)?;
        let (focus, depths) = loop {
            let g = rng.gen_range(opts.focus_range.0..=opts.focus_range.1);
            let radii = random_radii(opts.planes, opts.radius_range, &mut rng);
            let depths: Option<Vec<f64>> = radii.iter().map(|r| depth_for_radius(*r, g, &meta)).collect();
            if let Some(d) = depths {
                if d.iter().all(|z| *z > 4.0 * f && *z < 50.0) {
                    break (g, d);
                }
            }
        };
        views.push(ViewSpec {
            id: format!("view{i}"),
            focus,
            meta,
            planes: vertical_bands(opts.size, opts.size, &depths, opts.band_align, seed.wrapping_mul(31).wrapping_add(i as u64)),
            aperture_group: None,
        });
    }
    Ok(SceneSpec {
        scale,
        views,
        noise: opts.noise,
        color: opts.color,
        seed,
    })
}

/// The same viewpoints rendered once per f-number, each copy tagged with its
/// aperture group. Plane radii are drawn at the widest aperture.
pub fn multi_aperture_scene(seed: u64, f_numbers: &[f64], opts: &RandomSceneOptions) -> Result<SceneSpec> {
    let widest = f_numbers.iter().copied().fold(f64::INFINITY, f64::min);
    if !widest.is_finite() {
        return Err(Error::Scene("no f-numbers given".into()));
    }
    let base_opts = RandomSceneOptions {
        f_numbers: vec![widest],
        ..opts.clone()
    };
    let base = random_scene(seed, &base_opts)?;
    let mut views = Vec::with_capacity(base.views.len() * f_numbers.len());
    for n in f_numbers {
        for v in &base.views {
            let mut v = v.clone();
            v.meta = CameraMeta::new(v.meta.focal_length, *n, v.meta.sensor_pitch, v.meta.image_width, v.meta.image_height)?;
            v.aperture_group = Some(format!("f/{n}"));
            v.id = format!("{}_f{n}", v.id);
            views.push(v);
        }
    }
    Ok(SceneSpec { views, ..base })
}
