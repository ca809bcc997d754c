//! Depth maps, images and dataset manifests on disk.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, PfmErrorKind, Result};
use crate::optics::CameraMeta;
use crate::psf::Patch;
use crate::synthetic::{GroundTruth, SceneSpec, SyntheticDataset};
use crate::view::{DepthMap, DpView, Image};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a grayscale PFM. Rows are returned top to bottom.
pub fn parse_pfm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let err = |kind| Error::Pfm {
        path: path.to_path_buf(),
        kind,
    };
    let mut pos = 0;
    let line = |pos: &mut usize| -> Option<String> {
        let start = *pos;
        let end = bytes[start..].iter().position(|b| *b == b'\n')? + start;
        *pos = end + 1;
        Some(String::from_utf8_lossy(&bytes[start..end]).trim().to_string())
    };
    let magic = line(&mut pos).ok_or_else(|| err(PfmErrorKind::Header("missing magic line".into())))?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => return Err(err(PfmErrorKind::Unsupported(magic))),
        _ => return Err(err(PfmErrorKind::BadMagic(magic))),
    }
    let dims = line(&mut pos).ok_or_else(|| err(PfmErrorKind::Header("missing dimension line".into())))?;
    let parsed: Vec<usize> = dims.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    let [w, h] = parsed[..] else {
        return Err(err(PfmErrorKind::Header(format!("bad dimension line {dims:?}"))));
    };
    if w == 0 || h == 0 {
        return Err(err(PfmErrorKind::Header(format!("empty image {w}x{h}"))));
    }
    let scale_line = line(&mut pos).ok_or_else(|| err(PfmErrorKind::Header("missing scale line".into())))?;
    let scale: f32 = scale_line
        .parse()
        .map_err(|_| err(PfmErrorKind::Header(format!("bad scale {scale_line:?}"))))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(err(PfmErrorKind::ZeroScale));
    }
    let little = scale < 0.0;
    let payload = &bytes[pos..];
    let expected = w * h * 4;
    if payload.len() < expected {
        return Err(err(PfmErrorKind::Truncated {
            expected,
            found: payload.len(),
        }));
    }
    let mut data = vec![0f32; w * h];
    for (i, chunk) in payload[..expected].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (x, y_bottom) = (i % w, i / w);
        data[(h - 1 - y_bottom) * w + x] = v;
    }
    Ok((w, h, data))
}

/// Encodes a top-to-bottom map as grayscale PFM.
pub fn encode_pfm(width: usize, height: usize, data: &[f32], little_endian: bool) -> Vec<u8> {
    let scale = if little_endian { "-1.0" } else { "1.0" };
    let mut out = format!("Pf\n{width} {height}\n{scale}\n").into_bytes();
    for y in (0..height).rev() {
        for v in &data[y * width..(y + 1) * width] {
            out.extend_from_slice(&if little_endian { v.to_le_bytes() } else { v.to_be_bytes() });
        }
    }
    out
}

pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f32]) -> Result<()> {
    write(path, &encode_pfm(width, height, data, true))
}

fn dims_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".dims");
    PathBuf::from(s)
}

/// Little-endian float32 map with its `width height` in `<path>.dims`.
pub fn read_raw_f32(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let side = dims_sidecar(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let dims: Vec<usize> = text.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    let [w, h] = dims[..] else {
        return Err(Error::Manifest(format!("{}: expected \"width height\"", side.display())));
    };
    let bytes = read(path)?;
    if bytes.len() != w * h * 4 {
        return Err(Error::Dimension(format!(
            "{}: {} bytes for a {w}x{h} float32 map",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((w, h, data))
}

/// PFM by extension, otherwise raw float32 with a dimension sidecar.
pub fn load_depth_map(path: &Path) -> Result<DepthMap> {
    let is_pfm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    let (w, h, data) = if is_pfm {
        parse_pfm(&read(path)?, path)?
    } else {
        read_raw_f32(path)?
    };
    DepthMap::new(w, h, data.into_iter().map(f64::from).collect())
}

/// Loads an 8/16-bit PNG or TIFF as values in `[0, 1]`, raised to `gamma`
/// when given.
pub fn load_image(path: &Path, gamma: Option<f64>) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let lin = |v: f64| match gamma {
        Some(g) => v.max(0.0).powf(g),
        None => v,
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let color = img.color().has_color();
    if color {
        let buf = img.to_rgb32f();
        let plane = |c: usize| Patch::from_fn(w, h, |x, y| lin(buf.get_pixel(x as u32, y as u32)[c] as f64));
        Image::rgb(plane(0), plane(1), plane(2))
    } else {
        let buf = img.to_luma32f();
        Ok(Image::mono(Patch::from_fn(w, h, |x, y| lin(buf.get_pixel(x as u32, y as u32)[0] as f64))))
    }
}

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes a 16-bit PNG; values are clamped to `[0, 1]`.
pub fn save_image_png16(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let p = img.planes();
    let dynimg = if img.is_color() {
        DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([to_u16(p[0].get(x, y)), to_u16(p[1].get(x, y)), to_u16(p[2].get(x, y))])
        }))
    } else {
        DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_fn(w, h, |x, y| {
            Luma([to_u16(p[0].get(x as usize, y as usize))])
        }))
    };
    dynimg.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// One view of a manifest. Units are the ones written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub view_id: String,
    pub left_image: String,
    pub right_image: String,
    pub depth_map: String,
    pub focal_length_mm: f64,
    pub f_number: f64,
    pub sensor_pitch_um: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aperture_group: Option<String>,
}

impl ViewEntry {
    pub fn meta(&self, width: usize, height: usize) -> Result<CameraMeta> {
        CameraMeta::new(
            self.focal_length_mm * 1e-3,
            self.f_number,
            self.sensor_pitch_um * 1e-6,
            width,
            height,
        )
        .map_err(|e| Error::Manifest(format!("view {}: {e}", self.view_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_scale: Option<f64>,
    /// Exponent applied to decoded image values; absent means linear input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Checks physical values, id uniqueness and config overrides.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.views.is_empty() {
            return Err(Error::Manifest("no views".into()));
        }
        let mut ids = BTreeSet::new();
        for v in &self.views {
            if !ids.insert(v.view_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate view_id {:?}", v.view_id)));
            }
            for (name, value) in [
                ("focal_length_mm", v.focal_length_mm),
                ("f_number", v.f_number),
                ("sensor_pitch_um", v.sensor_pitch_um),
            ] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::Manifest(format!("view {}: {name} must be positive, got {value}", v.view_id)));
                }
            }
        }
        if let Some(s) = self.ground_truth_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Manifest(format!("ground_truth_scale must be positive, got {s}")));
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Manifest(format!("gamma must be positive, got {g}")));
            }
        }
        self.run_config(RunConfig::default())?.validate()?;
        Ok(())
    }

    /// Applies the manifest's overrides on top of `base`.
    pub fn run_config(&self, base: RunConfig) -> Result<RunConfig> {
        let Some(over) = &self.config else {
            return Ok(base);
        };
        let mut merged = serde_json::to_value(&base)?;
        let (Some(dst), Some(src)) = (merged.as_object_mut(), over.as_object()) else {
            return Err(Error::Manifest("config overrides must be an object".into()));
        };
        for (k, v) in src {
            dst.insert(k.clone(), v.clone());
        }
        serde_json::from_value(merged).map_err(|e| Error::Manifest(format!("config overrides: {e}")))
    }
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
    m.validate()?;
    Ok(m)
}

/// Reads and validates a manifest; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = parse_manifest(&text)?;
    let base = base_dir(path);
    for v in &m.views {
        for (what, rel) in [("left_image", &v.left_image), ("right_image", &v.right_image), ("depth_map", &v.depth_map)] {
            let p = base.join(rel);
            if !p.is_file() {
                return Err(Error::Manifest(format!("view {}: {what} {} not found", v.view_id, p.display())));
            }
        }
    }
    Ok(m)
}

pub fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_view(entry: &ViewEntry, base: &Path, gamma: Option<f64>) -> Result<DpView> {
    let left = load_image(&base.join(&entry.left_image), gamma)?;
    let right = load_image(&base.join(&entry.right_image), gamma)?;
    let depth = load_depth_map(&base.join(&entry.depth_map))?;
    let meta = entry.meta(left.width(), left.height())?;
    let mut view = DpView::new(entry.view_id.clone(), left, right, depth, meta)?;
    view.aperture_group = entry.aperture_group.clone();
    Ok(view)
}

pub fn load_views(manifest: &Manifest, base: &Path) -> Result<Vec<DpView>> {
    manifest.views.iter().map(|v| load_view(v, base, manifest.gamma)).collect()
}

/// File names written by [`write_dataset`].
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const SCENE_FILE: &str = "scene.json";

/// Writes images, PFM depth maps, the manifest, ground truth and the scene
/// spec into `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, data: &SyntheticDataset, spec: &SceneSpec) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(data.views.len());
    for v in &data.views {
        let left = format!("{}_left.png", v.id);
        let right = format!("{}_right.png", v.id);
        let depth = format!("{}_depth.pfm", v.id);
        save_image_png16(&dir.join(&left), &v.left)?;
        save_image_png16(&dir.join(&right), &v.right)?;
        let d: Vec<f32> = v.depth.data().iter().map(|z| if z.is_finite() { *z as f32 } else { 0.0 }).collect();
        write_pfm(&dir.join(&depth), v.depth.width(), v.depth.height(), &d)?;
        entries.push(ViewEntry {
            view_id: v.id.clone(),
            left_image: left,
            right_image: right,
            depth_map: depth,
            focal_length_mm: v.meta.focal_length * 1e3,
            f_number: v.meta.f_number,
            sensor_pitch_um: v.meta.sensor_pitch * 1e6,
            scene: Some("synthetic".into()),
            aperture_group: v.aperture_group.clone(),
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        views: entries,
        ground_truth_scale: Some(data.truth.scale),
        gamma: None,
        config: None,
    };
    let path = dir.join(MANIFEST_FILE);
    write(&path, manifest.to_json()?.as_bytes())?;
    write(&dir.join(TRUTH_FILE), serde_json::to_string_pretty(&data.truth)?.as_bytes())?;
    write(&dir.join(SCENE_FILE), serde_json::to_string_pretty(spec)?.as_bytes())?;
    Ok(path)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, s.as_bytes())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    read_json(path)
}
