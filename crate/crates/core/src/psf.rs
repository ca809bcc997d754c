//! Dual-pixel point-spread functions and the patch operations built on them.
//!
//! The right-view PSF of signed pixel radius `r` is the sum, over integer
//! shifts `k = 0..=floor(|2r|)`, of the centered disk of radius `|r|` masked by
//! the same disk shifted by `k * sign(r)` along x. The left-view PSF is its
//! horizontal mirror.
//!
//! Every row of such a kernel is an arithmetic progression over its support,
//! so [`convolve`] evaluates those rows with running sums instead of a dense
//! multiply-add over the whole kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Mono,
    R,
    G,
    B,
}

/// Rectangular block of intensities in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    width: usize,
    height: usize,
    data: Vec<f64>,
    pub channel: Channel,
}

impl Patch {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Dimension(format!(
                "patch {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("patch contains non-finite value {v}")));
        }
        Ok(Patch {
            width,
            height,
            data,
            channel: Channel::Mono,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Patch {
            width,
            height,
            data,
            channel: Channel::Mono,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Patch {
            width,
            height,
            data: vec![value; width * height],
            channel: Channel::Mono,
        }
    }

    pub fn with_channel(mut self, channel: Channel) -> Self {
        self.channel = channel;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Sub-rectangle starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Patch> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Dimension(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.row(y)[x0..x0 + width]);
        }
        Ok(Patch {
            width,
            height,
            data,
            channel: self.channel,
        })
    }

    /// Centered sub-rectangle.
    pub fn crop_center(&self, width: usize, height: usize) -> Result<Patch> {
        if width > self.width || height > self.height {
            return Err(Error::Dimension(format!(
                "center crop {width}x{height} exceeds {}x{}",
                self.width, self.height
            )));
        }
        self.crop(
            (self.width - width) / 2,
            (self.height - height) / 2,
            width,
            height,
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Patch {
        Patch {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
            channel: self.channel,
        }
    }

    pub fn scaled(&self, c: f64) -> Patch {
        self.map(|v| v * c)
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &Patch) -> Result<Patch> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Patch) -> Result<Patch> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Patch, f: impl Fn(f64, f64) -> f64) -> Result<Patch> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "patch sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(Patch {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            channel: self.channel,
        })
    }

    pub fn frobenius_distance(&self, other: &Patch) -> Result<f64> {
        Ok(self.sub(other)?.data.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn l1_distance(&self, other: &Patch) -> Result<f64> {
        Ok(self.sub(other)?.l1_norm())
    }
}

/// Binary disk of radius `|r|` centered at `(cx, cy)` relative to the center
/// cell of an odd `side x side` grid. Row-major.
pub fn disk(cx: f64, cy: f64, r: f64, side: usize) -> Result<Vec<bool>> {
    if side % 2 == 0 {
        return Err(Error::Dimension(format!("disk grid side must be odd, got {side}")));
    }
    let half = (side / 2) as f64;
    let reach = (r.abs() + cx.abs().max(cy.abs())).floor();
    if !r.is_finite() || reach > half {
        return Err(Error::Dimension(format!(
            "disk of radius {r} at ({cx}, {cy}) does not fit a {side}x{side} grid"
        )));
    }
    let r2 = r * r;
    let mut mask = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            let dx = i as f64 - half - cx;
            let dy = j as f64 - half - cy;
            mask.push(dx * dx + dy * dy <= r2);
        }
    }
    Ok(mask)
}

/// One kernel row whose weights form an arithmetic progression on `u0..=u1`:
/// `weight(u) = alpha + beta * u`.
#[derive(Debug, Clone, PartialEq)]
struct RowRamp {
    row: usize,
    u0: usize,
    u1: usize,
    alpha: f64,
    beta: f64,
}

/// Square, odd-sized, nonnegative convolution kernel with unit sum.
#[derive(Debug, Clone)]
pub struct PsfKernel {
    radius_px: f64,
    side: usize,
    weights: Vec<f64>,
    // Integer shift-overlap counts for kernels built from disks.
    counts: Option<Vec<u32>>,
    ramps: Option<Vec<RowRamp>>,
}

impl PartialEq for PsfKernel {
    fn eq(&self, other: &Self) -> bool {
        self.radius_px == other.radius_px && self.side == other.side && self.weights == other.weights
    }
}

impl PsfKernel {
    /// Arbitrary kernel from raw weights; normalized to unit sum.
    pub fn from_weights(side: usize, weights: Vec<f64>) -> Result<Self> {
        if side % 2 == 0 || weights.len() != side * side {
            return Err(Error::Dimension(format!(
                "kernel needs an odd side and side^2 weights (side {side}, {} weights)",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Domain("kernel weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("kernel weights sum to zero".into()));
        }
        Ok(PsfKernel {
            radius_px: 0.0,
            side,
            weights: weights.iter().map(|w| w / total).collect(),
            counts: None,
            ramps: None,
        })
    }

    pub fn delta() -> Self {
        PsfKernel::from_counts(0.0, 1, vec![1])
    }

    fn from_counts(radius_px: f64, side: usize, counts: Vec<u32>) -> Self {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let total = total as f64;
        let weights = counts.iter().map(|&c| c as f64 / total).collect();
        let ramps = row_ramps(side, &counts, total);
        PsfKernel {
            radius_px,
            side,
            weights,
            counts: Some(counts),
            ramps,
        }
    }

    pub fn radius_px(&self) -> f64 {
        self.radius_px
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, x: usize, y: usize) -> f64 {
        self.weights[y * self.side + x]
    }

    /// Weighted centroid relative to the center cell, `(x, y)`.
    pub fn centroid(&self) -> (f64, f64) {
        let half = (self.side / 2) as f64;
        let (mut cx, mut cy) = (0.0, 0.0);
        for y in 0..self.side {
            for x in 0..self.side {
                let w = self.weight(x, y);
                cx += w * (x as f64 - half);
                cy += w * (y as f64 - half);
            }
        }
        (cx, cy)
    }
}

/// Grid side that holds every nonzero weight of a PSF with radius `r`.
pub fn psf_side(r: f64) -> usize {
    2 * (r.abs().floor() as usize) + 1
}

/// Right-view DP kernel for signed pixel radius `r`.
///
/// In row `dy` the disk spans `|dx| <= a`, `a = floor(sqrt(r^2 - dy^2))`, and
/// the disk shifted by `k` spans `[k - a, k + a]`. Their overlap `[k - a, a]`
/// covers `dx` for every `k` in `0..=dx + a`, and `2a <= floor(|2r|)`, so the
/// summed weight is `dx + a + 1` (mirrored for negative `r`).
pub fn right_psf(r: f64) -> Result<PsfKernel> {
    if !r.is_finite() {
        return Err(Error::Domain(format!("PSF radius must be finite, got {r}")));
    }
    let side = psf_side(r);
    let half = (side / 2) as i64;
    let mut counts = vec![0u32; side * side];
    for (j, row) in counts.chunks_mut(side).enumerate() {
        let dy = j as i64 - half;
        let Some(a) = disk_half_width(r, dy) else {
            continue;
        };
        for dx in -a..=a {
            let w = if r >= 0.0 { dx + a + 1 } else { a - dx + 1 };
            row[(dx + half) as usize] = w as u32;
        }
    }
    Ok(PsfKernel::from_counts(r, side, counts))
}

/// Largest `a >= 0` with `a^2 + dy^2 <= r^2`, matching the membership test of [`disk`].
fn disk_half_width(r: f64, dy: i64) -> Option<i64> {
    let r2 = r * r;
    let dyf = dy as f64;
    if dyf * dyf > r2 {
        return None;
    }
    let mut a = (r2 - dyf * dyf).sqrt().floor() as i64;
    while a > 0 && (a * a) as f64 + dyf * dyf > r2 {
        a -= 1;
    }
    while ((a + 1) * (a + 1)) as f64 + dyf * dyf <= r2 {
        a += 1;
    }
    Some(a)
}

/// Row half-widths and sign identifying a PSF; two radii with the same key
/// produce identical kernels.
pub fn psf_key(r: f64) -> (i8, Vec<i64>) {
    let half = r.abs().floor() as i64;
    let sign = if r > 0.0 {
        1
    } else if r < 0.0 {
        -1
    } else {
        0
    };
    let widths = (0..=half).map(|dy| disk_half_width(r, dy).unwrap_or(-1)).collect::<Vec<_>>();
    // Radius 0 and sub-pixel radii share the delta kernel.
    let sign = if widths.len() == 1 && widths[0] == 0 { 0 } else { sign };
    (sign, widths)
}

/// Left-view DP kernel for signed pixel radius `r`.
pub fn left_psf(r: f64) -> Result<PsfKernel> {
    Ok(flip_h(&right_psf(r)?))
}

/// Mirrors a kernel left-to-right and negates its radius.
pub fn flip_h(k: &PsfKernel) -> PsfKernel {
    let side = k.side;
    let mirror = |v: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(side * side);
        for y in 0..side {
            out.extend(v[y * side..(y + 1) * side].iter().rev());
        }
        out
    };
    match &k.counts {
        Some(counts) => {
            let mut flipped = Vec::with_capacity(side * side);
            for y in 0..side {
                flipped.extend(counts[y * side..(y + 1) * side].iter().rev());
            }
            PsfKernel::from_counts(-k.radius_px, side, flipped)
        }
        None => PsfKernel {
            radius_px: -k.radius_px,
            side,
            weights: mirror(&k.weights),
            counts: None,
            ramps: None,
        },
    }
}

fn row_ramps(side: usize, counts: &[u32], total: f64) -> Option<Vec<RowRamp>> {
    let mut ramps = Vec::new();
    for row in 0..side {
        let cells = &counts[row * side..(row + 1) * side];
        let Some(u0) = cells.iter().position(|&c| c > 0) else {
            continue;
        };
        let u1 = cells.iter().rposition(|&c| c > 0).unwrap();
        let c0 = cells[u0] as i64;
        let d = if u1 > u0 {
            cells[u0 + 1] as i64 - c0
        } else {
            0
        };
        let affine = (u0..=u1).all(|u| cells[u] as i64 == c0 + d * (u - u0) as i64);
        if !affine {
            return None;
        }
        ramps.push(RowRamp {
            row,
            u0,
            u1,
            alpha: (c0 - d * u0 as i64) as f64 / total,
            beta: d as f64 / total,
        });
    }
    Some(ramps)
}

// Rows shorter than this are summed directly.
const RAMP_MIN_SPAN: usize = 6;

/// Per-row running sums of `p[t]` and `t * p[t]`, reusable across kernels.
pub struct PreparedPatch<'a> {
    patch: &'a Patch,
    sum0: Vec<f64>,
    sum1: Vec<f64>,
}

impl<'a> PreparedPatch<'a> {
    pub fn new(patch: &'a Patch) -> Self {
        let w = patch.width;
        let stride = w + 1;
        let mut sum0 = vec![0.0; stride * patch.height];
        let mut sum1 = vec![0.0; stride * patch.height];
        for y in 0..patch.height {
            let row = patch.row(y);
            let (mut a, mut b) = (0.0, 0.0);
            for (t, &v) in row.iter().enumerate() {
                a += v;
                b += t as f64 * v;
                sum0[y * stride + t + 1] = a;
                sum1[y * stride + t + 1] = b;
            }
        }
        PreparedPatch { patch, sum0, sum1 }
    }

    pub fn patch(&self) -> &Patch {
        self.patch
    }

    pub fn convolve(&self, k: &PsfKernel) -> Result<Patch> {
        let p = self.patch;
        let s = k.side;
        if s >= p.width || s >= p.height {
            return Err(Error::Dimension(format!(
                "kernel side {s} does not fit inside a {}x{} patch",
                p.width, p.height
            )));
        }
        self.convolve_region(k, 0, 0, p.width - s + 1, p.height - s + 1)
    }

    /// Convolution output restricted to a `w x h` window whose pixels are
    /// centered on the patch center, identical for every kernel size that
    /// keeps the window inside the valid region.
    pub fn convolve_centered(&self, k: &PsfKernel, w: usize, h: usize) -> Result<Patch> {
        let p = self.patch;
        let half = k.side / 2;
        let cx = (p.width.saturating_sub(w)) / 2;
        let cy = (p.height.saturating_sub(h)) / 2;
        if w > p.width || h > p.height || cx < half || cy < half || cx + w + half > p.width || cy + h + half > p.height {
            return Err(Error::Dimension(format!(
                "kernel side {} leaves no {w}x{h} valid window in a {}x{} patch",
                k.side, p.width, p.height
            )));
        }
        self.convolve_region(k, cx - half, cy - half, w, h)
    }

    /// Valid-region convolution output starting at output offset `(ox, oy)`.
    fn convolve_region(&self, k: &PsfKernel, ox: usize, oy: usize, ow: usize, oh: usize) -> Result<Patch> {
        let p = self.patch;
        let s = k.side;
        if s > p.width || s > p.height || ox + ow + s - 1 > p.width || oy + oh + s - 1 > p.height {
            return Err(Error::Dimension(format!(
                "kernel side {s} with output window {ow}x{oh}+{ox}+{oy} exceeds a {}x{} patch",
                p.width, p.height
            )));
        }
        let mut out = vec![0.0; ow * oh];
        let region = Region { ox, oy, ow, oh };
        match &k.ramps {
            Some(ramps) => self.convolve_ramps(ramps, s, &region, &mut out),
            None => convolve_dense(p, k, &region, &mut out),
        }
        Ok(Patch {
            width: ow,
            height: oh,
            data: out,
            channel: p.channel,
        })
    }

    fn convolve_ramps(&self, ramps: &[RowRamp], s: usize, reg: &Region, out: &mut [f64]) {
        let p = self.patch;
        let stride = p.width + 1;
        let ow = reg.ow;
        for rr in ramps {
            let span = rr.u1 - rr.u0 + 1;
            for i in 0..reg.oh {
                let iy = reg.oy + i + s - 1 - rr.row;
                let dst = &mut out[i * ow..(i + 1) * ow];
                if span < RAMP_MIN_SPAN {
                    let row = p.row(iy);
                    for u in rr.u0..=rr.u1 {
                        let w = rr.alpha + rr.beta * u as f64;
                        let off = reg.ox + s - 1 - u;
                        for (o, &v) in dst.iter_mut().zip(&row[off..off + ow]) {
                            *o += w * v;
                        }
                    }
                } else {
                    let s0 = &self.sum0[iy * stride..(iy + 1) * stride];
                    let s1 = &self.sum1[iy * stride..(iy + 1) * stride];
                    // q runs over [j + s-1-u1, j + s-1-u0] in input columns
                    let lo = reg.ox + s - 1 - rr.u1;
                    let hi = reg.ox + s - rr.u0;
                    for (j, o) in dst.iter_mut().enumerate() {
                        let a = s0[j + hi] - s0[j + lo];
                        let b = s1[j + hi] - s1[j + lo];
                        let base = rr.alpha + rr.beta * (reg.ox + j + s - 1) as f64;
                        *o += base * a - rr.beta * b;
                    }
                }
            }
        }
    }
}

struct Region {
    ox: usize,
    oy: usize,
    ow: usize,
    oh: usize,
}

fn convolve_dense(p: &Patch, k: &PsfKernel, reg: &Region, out: &mut [f64]) {
    let s = k.side;
    let ow = reg.ow;
    for v in 0..s {
        for u in 0..s {
            let w = k.weight(u, v);
            if w == 0.0 {
                continue;
            }
            for i in 0..reg.oh {
                let row = p.row(reg.oy + i + s - 1 - v);
                let off = reg.ox + s - 1 - u;
                for (o, &x) in out[i * ow..(i + 1) * ow].iter_mut().zip(&row[off..off + ow]) {
                    *o += w * x;
                }
            }
        }
    }
}

/// 2-D convolution keeping only the region where the kernel lies fully
/// inside the patch.
pub fn convolve(p: &Patch, k: &PsfKernel) -> Result<Patch> {
    PreparedPatch::new(p).convolve(k)
}

/// Divides a patch by its element-wise L1 norm.
pub fn normalize_l1(p: &Patch) -> Result<Patch> {
    let norm = p.l1_norm();
    if !(norm > 0.0) {
        return Err(Error::DegeneratePatch("patch has zero L1 norm".into()));
    }
    Ok(p.map(|v| v / norm))
}
