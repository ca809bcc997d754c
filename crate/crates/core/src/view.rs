//! In-memory representation of one dual-pixel viewpoint.

use crate::error::{Error, Result};
use crate::optics::CameraMeta;
use crate::psf::{Channel, Patch};

/// Multi-channel image; every plane has the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    planes: Vec<Patch>,
}

impl Image {
    pub fn new(planes: Vec<Patch>) -> Result<Self> {
        let Some(first) = planes.first() else {
            return Err(Error::Dimension("image has no channels".into()));
        };
        let (w, h) = (first.width(), first.height());
        if planes.iter().any(|p| p.width() != w || p.height() != h) {
            return Err(Error::Dimension("image channels differ in size".into()));
        }
        if !(planes.len() == 1 || planes.len() == 3) {
            return Err(Error::Dimension(format!(
                "expected 1 or 3 channels, got {}",
                planes.len()
            )));
        }
        Ok(Image { planes })
    }

    pub fn mono(plane: Patch) -> Self {
        Image {
            planes: vec![plane.with_channel(Channel::Mono)],
        }
    }

    pub fn rgb(r: Patch, g: Patch, b: Patch) -> Result<Self> {
        Image::new(vec![
            r.with_channel(Channel::R),
            g.with_channel(Channel::G),
            b.with_channel(Channel::B),
        ])
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn planes(&self) -> &[Patch] {
        &self.planes
    }

    pub fn is_color(&self) -> bool {
        self.planes.len() == 3
    }

    /// Plane used for blur estimation: green for color images.
    pub fn estimation_plane(&self) -> &Patch {
        if self.is_color() {
            &self.planes[1]
        } else {
            &self.planes[0]
        }
    }

    pub fn map_planes(&self, f: impl Fn(usize, &Patch) -> Patch) -> Image {
        Image {
            planes: self.planes.iter().enumerate().map(|(i, p)| f(i, p)).collect(),
        }
    }
}

/// Scale-ambiguous depth map; non-finite or non-positive entries are invalid
/// and stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        let data = data
            .into_iter()
            .map(|z| if z.is_finite() && z > 0.0 { z } else { f64::NAN })
            .collect();
        Ok(DepthMap {
            width,
            height,
            data,
        })
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

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let z = self.data[y * self.width + x];
        z.is_finite().then_some(z)
    }

    /// Values inside a rectangle, row by row, invalid entries included as NaN.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> impl Iterator<Item = f64> + '_ {
        (y0..y0 + h).flat_map(move |y| self.data[y * self.width + x0..y * self.width + x0 + w].iter().copied())
    }
}

/// Left/right sub-aperture images, scale-ambiguous depth and optics of one view.
#[derive(Debug, Clone)]
pub struct DpView {
    pub id: String,
    pub left: Image,
    pub right: Image,
    pub depth: DepthMap,
    pub meta: CameraMeta,
    pub aperture_group: Option<String>,
}

impl DpView {
    pub fn new(id: impl Into<String>, left: Image, right: Image, depth: DepthMap, meta: CameraMeta) -> Result<Self> {
        let id = id.into();
        let (w, h) = (left.width(), left.height());
        if right.width() != w || right.height() != h || right.planes().len() != left.planes().len() {
            return Err(Error::Dimension(format!("view {id}: left and right images differ")));
        }
        if depth.width() != w || depth.height() != h {
            return Err(Error::Dimension(format!(
                "view {id}: depth map {}x{} does not match images {w}x{h}",
                depth.width(),
                depth.height()
            )));
        }
        meta.validate()?;
        Ok(DpView {
            id,
            left,
            right,
            depth,
            meta,
            aperture_group: None,
        })
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }
}
