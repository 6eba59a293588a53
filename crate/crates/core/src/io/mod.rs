//! Scene ingestion, model persistence and image I/O.

pub mod colmap;
pub mod ply;
pub mod synthetic;

use std::path::Path;

use nalgebra::Vector3;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::model::{inverse_sigmoid, GaussianSet};

/// Every 8th view (by sorted name order) goes to the test split.
pub const TEST_SPLIT_STRIDE: usize = 8;

/// One calibrated view with its ground-truth image and optional ROI mask.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub name: String,
    pub camera: Camera,
    pub image: Image,
    pub is_test: bool,
    pub roi: Option<Mask>,
}

/// A loaded scene: views, the sparse initialization points and the camera
/// bounding-sphere radius.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub views: Vec<TrainView>,
    /// Sparse point positions, 3 per point.
    pub sfm_positions: Vec<f64>,
    /// Point colors in [0, 1], 3 per point.
    pub sfm_colors: Vec<f64>,
    pub scene_extent: f64,
}

impl SceneBundle {
    pub fn point_count(&self) -> usize {
        self.sfm_positions.len() / 3
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| !self.views[i].is_test)
            .collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.views[i].is_test)
            .collect()
    }
}

/// Radius of the bounding sphere of the camera centers.
pub fn camera_extent(cameras: &[Camera]) -> f64 {
    if cameras.is_empty() {
        return 1.0;
    }
    let mut center = Vector3::zeros();
    for cam in cameras {
        center += cam.center();
    }
    center /= cameras.len() as f64;
    let radius = cameras
        .iter()
        .map(|c| (c.center() - center).norm())
        .fold(0.0, f64::max);
    if radius < 1e-9 {
        1.0
    } else {
        radius
    }
}

/// Initial Gaussians from the sparse points: colors become DC coefficients,
/// isotropic scales come from the mean distance to the three nearest
/// neighbors, opacity starts at 0.1.
pub fn init_gaussians_from_sfm(scene: &SceneBundle) -> GaussianSet {
    let n = scene.point_count();
    let mut set = GaussianSet::with_count(n);
    set.positions.copy_from_slice(&scene.sfm_positions);
    for i in 0..n {
        for ch in 0..3 {
            set.sh_dc[3 * i + ch] =
                (scene.sfm_colors[3 * i + ch] - 0.5) / crate::sh::basis(&[0.0, 0.0, 1.0], 0)[0];
        }
        set.raw_opacities[i] = inverse_sigmoid(0.1);
    }
    // Brute-force 3-NN is fine at initialization scale.
    for i in 0..n {
        let pi = set.position(i);
        let mut best = [f64::INFINITY; 3];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d2 = (set.position(j) - pi).norm_squared();
            if d2 < best[2] {
                best[2] = d2;
                best.sort_by(f64::total_cmp);
            }
        }
        let mut mean = 0.0;
        let mut used = 0;
        for b in best {
            if b.is_finite() {
                mean += b;
                used += 1;
            }
        }
        let dist2 = if used > 0 {
            (mean / used as f64).max(1e-7)
        } else {
            1e-4
        };
        let log_scale = dist2.sqrt().ln();
        for k in 0..3 {
            set.log_scales[3 * i + k] = log_scale;
        }
    }
    set
}

/// Load an 8-bit RGB PNG as a float image.
pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot read image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Image::new(w, h);
    for (i, px) in img.pixels().enumerate() {
        for ch in 0..3 {
            out.data[3 * i + ch] = px.0[ch] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Write a float image as an 8-bit RGB PNG, clamping to [0, 1].
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let mut out = image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        for ch in 0..3 {
            px.0[ch] = (img.data[3 * i + ch].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out.save(path)
        .map_err(|e| Error::data(format!("cannot write image {}: {e}", path.display())))
}

/// Load a single-channel ROI mask, thresholded at 0.5.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("cannot read mask {}: {e}", path.display())))?
        .to_luma8();
    Ok(Mask {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.pixels().map(|p| p.0[0] >= 128).collect(),
    })
}
