//! Tile-based forward rasterization of projected Gaussians.

mod forward;
pub(crate) mod project;

pub use forward::{render, render_with_stats};
pub use project::project;

use crate::image::Image;

/// Screen tile edge in pixels.
pub const TILE_SIZE: usize = 16;
/// Pixel states are checkpointed every this many splats of a tile list.
pub const CHECKPOINT_STRIDE: usize = 32;
/// Contributions below this alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Blending weights are clamped here from above; keeps transmittance
/// positive even for high-opacity Gaussians.
pub const ALPHA_MAX: f64 = 0.99;
/// Front-to-back blending stops once transmittance would fall below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Low-pass dilation added to the projected covariance diagonal.
pub const COV2D_DILATION: f64 = 0.3;
/// Screen radius is this many standard deviations of the largest axis.
pub const RADIUS_SIGMAS: f64 = 3.0;

/// One Gaussian after projection into a view.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSplat {
    pub gaussian_index: u32,
    /// Projected center in pixel coordinates.
    pub mean2d: [f64; 2],
    /// Inverse 2D covariance, packed (a, b, c) for [[a, b], [b, c]].
    pub conic: [f64; 3],
    /// Camera-space depth.
    pub depth: f64,
    pub screen_radius: f64,
    /// View-dependent color from SH.
    pub rgb: [f64; 3],
    /// Activated opacity.
    pub alpha_base: f64,
}

/// Pixel rectangle `[x0, x1) x [y0, y1)` of one tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl TileRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn pixels(&self) -> usize {
        self.width() * self.height()
    }
}

/// Depth-ordered splat lists per screen tile.
#[derive(Debug, Clone)]
pub struct TileGrid {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub width: usize,
    pub height: usize,
    /// Indices into the projected splat vector, depth ascending.
    pub lists: Vec<Vec<u32>>,
}

impl TileGrid {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn rect(&self, tile: usize) -> TileRect {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        TileRect {
            x0: tx * TILE_SIZE,
            y0: ty * TILE_SIZE,
            x1: ((tx + 1) * TILE_SIZE).min(self.width),
            y1: ((ty + 1) * TILE_SIZE).min(self.height),
        }
    }
}

/// Pixel state snapshot: transmittance plus accumulated splat color,
/// one entry per tile pixel.
pub type Checkpoint = Vec<[f64; 4]>;

/// Everything the forward pass produces, including what the backward pass
/// and per-Gaussian scoring consume.
#[derive(Debug, Clone)]
pub struct RenderArtifacts {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    /// Final composited image (background included).
    pub image: Image,
    /// Per-pixel transmittance remaining after blending.
    pub final_transmittance: Vec<f64>,
    /// Per-pixel count of list entries up to and including the pixel's last
    /// contributing splat (0 = none), relative to the enclosing tile's list.
    pub last_contributor: Vec<u32>,
    pub tiles: TileGrid,
    /// `checkpoints[tile][k]` holds the pixel states before list entry
    /// `k * CHECKPOINT_STRIDE`; index 0 is the initial state (T=1, RGB=0).
    pub checkpoints: Vec<Vec<Checkpoint>>,
    /// Per-tile maximum of `last_contributor`.
    pub tile_max_contributor: Vec<u32>,
}

/// Per-Gaussian accumulators gathered while rendering one view.
#[derive(Debug, Clone)]
pub struct GaussianViewStats {
    /// Pixels the Gaussian contributed to.
    pub pixel_count: Vec<f64>,
    /// Summed pixel-center distance to the projected mean, in pixels.
    pub distance_sum: Vec<f64>,
    /// Summed per-pixel saliency over covered pixels.
    pub saliency_sum: Vec<f64>,
    /// Summed blending weights (alpha * transmittance).
    pub blend_weight_sum: Vec<f64>,
    /// Camera-space depth, 0 for Gaussians culled in this view.
    pub depth: Vec<f64>,
}

impl GaussianViewStats {
    pub fn zeros(count: usize) -> Self {
        GaussianViewStats {
            pixel_count: vec![0.0; count],
            distance_sum: vec![0.0; count],
            saliency_sum: vec![0.0; count],
            blend_weight_sum: vec![0.0; count],
            depth: vec![0.0; count],
        }
    }
}

/// Maximum blending weight the splat can reach anywhere in the tile,
/// evaluated at the tile point closest to the projected center. Splats that
/// cannot reach `ALPHA_MIN` are dropped from the tile's list.
pub fn tight_cull(splat: &ProjectedSplat, tile: &TileRect) -> bool {
    let cx0 = tile.x0 as f64 + 0.5;
    let cx1 = tile.x1 as f64 - 0.5;
    let cy0 = tile.y0 as f64 + 0.5;
    let cy1 = tile.y1 as f64 - 0.5;
    let dx = splat.mean2d[0].clamp(cx0, cx1) - splat.mean2d[0];
    let dy = splat.mean2d[1].clamp(cy0, cy1) - splat.mean2d[1];
    let [a, b, c] = splat.conic;
    let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    let alpha_max = (splat.alpha_base * (-0.5 * q).exp()).min(ALPHA_MAX);
    alpha_max >= ALPHA_MIN
}

/// Bin sorted splats into tile lists, applying `tight_cull` per tile.
pub(crate) fn build_tile_grid(
    splats: &[ProjectedSplat],
    width: usize,
    height: usize,
) -> TileGrid {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut grid = TileGrid {
        tiles_x,
        tiles_y,
        width,
        height,
        lists: vec![Vec::new(); tiles_x * tiles_y],
    };
    for (i, splat) in splats.iter().enumerate() {
        let r = splat.screen_radius;
        let x_lo = ((splat.mean2d[0] - r) / TILE_SIZE as f64).floor().max(0.0) as usize;
        let y_lo = ((splat.mean2d[1] - r) / TILE_SIZE as f64).floor().max(0.0) as usize;
        if x_lo >= tiles_x || y_lo >= tiles_y {
            continue;
        }
        let x_hi = (((splat.mean2d[0] + r) / TILE_SIZE as f64).floor() as usize).min(tiles_x - 1);
        let y_hi = (((splat.mean2d[1] + r) / TILE_SIZE as f64).floor() as usize).min(tiles_y - 1);
        if splat.mean2d[0] + r < 0.0 || splat.mean2d[1] + r < 0.0 {
            continue;
        }
        for ty in y_lo..=y_hi {
            for tx in x_lo..=x_hi {
                let tile = ty * tiles_x + tx;
                if tight_cull(splat, &grid.rect(tile)) {
                    grid.lists[tile].push(i as u32);
                }
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    fn splat_at(x: f64, y: f64, alpha: f64) -> ProjectedSplat {
        ProjectedSplat {
            gaussian_index: 0,
            mean2d: [x, y],
            conic: [1.0, 0.0, 1.0],
            depth: 1.0,
            screen_radius: 3.0,
            rgb: [1.0, 1.0, 1.0],
            alpha_base: alpha,
        }
    }

    #[test]
    fn cull_keeps_splat_inside_tile() {
        let tile = TileRect {
            x0: 0,
            y0: 0,
            x1: 16,
            y1: 16,
        };
        assert!(tight_cull(&splat_at(8.0, 8.0, 0.8), &tile));
    }

    #[test]
    fn cull_drops_far_splat() {
        let tile = TileRect {
            x0: 0,
            y0: 0,
            x1: 16,
            y1: 16,
        };
        // Unit-sigma splat 5 sigma away from the nearest tile corner.
        assert!(!tight_cull(&splat_at(20.5, 15.5, 0.8), &tile));
    }

    #[test]
    fn cull_threshold_from_conic_quadratic() {
        let tile = TileRect {
            x0: 0,
            y0: 0,
            x1: 16,
            y1: 16,
        };
        // alpha_base * exp(-0.5 d^2) == 1/300 at the nearest point: reject.
        let alpha = 0.8;
        let d = (2.0 * (alpha * 300.0f64).ln()).sqrt();
        let s = splat_at(15.5 + d + 1e-9, 8.5, alpha);
        assert!(!tight_cull(&s, &tile));
        // Slightly closer than the 1/255 distance: keep.
        let d_keep = (2.0 * (alpha * 255.0f64).ln()).sqrt();
        let s = splat_at(15.5 + d_keep - 1e-9, 8.5, alpha);
        assert!(tight_cull(&s, &tile));
    }
}
