//! Front-to-back alpha blending over tiles, with the pixel-state
//! checkpoints and per-Gaussian statistics the backward pass and the
//! densification scoring rely on.

use super::{
    build_tile_grid, Checkpoint, GaussianViewStats, ProjectedSplat, RenderArtifacts, TileGrid,
    ALPHA_MAX, ALPHA_MIN, CHECKPOINT_STRIDE, TRANSMITTANCE_MIN,
};
use crate::camera::Camera;
use crate::image::Image;
use crate::loss::SaliencyMap;
use crate::parallel;

struct TileOutput {
    /// Accumulated splat color per tile pixel (background not yet added).
    color: Vec<[f64; 3]>,
    transmittance: Vec<f64>,
    last_contributor: Vec<u32>,
    checkpoints: Vec<Checkpoint>,
    max_contributor: u32,
    /// Parallel to the tile list: (pixel count, distance, saliency, blend).
    stats: Option<Vec<[f64; 4]>>,
}

fn render_tile(
    tile: usize,
    grid: &TileGrid,
    splats: &[ProjectedSplat],
    saliency: Option<&SaliencyMap>,
) -> TileOutput {
    let rect = grid.rect(tile);
    let list = &grid.lists[tile];
    let n_px = rect.pixels();
    let tw = rect.width();

    let mut trans = vec![1.0f64; n_px];
    let mut color = vec![[0.0f64; 3]; n_px];
    let mut last = vec![0u32; n_px];
    let mut done = vec![false; n_px];
    let mut alive = n_px;
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let mut stats = saliency.map(|_| vec![[0.0f64; 4]; list.len()]);

    'splats: for (j, &splat_idx) in list.iter().enumerate() {
        if j % CHECKPOINT_STRIDE == 0 {
            if alive == 0 {
                break 'splats;
            }
            let snap: Checkpoint = (0..n_px)
                .map(|p| [trans[p], color[p][0], color[p][1], color[p][2]])
                .collect();
            checkpoints.push(snap);
        }
        let splat = &splats[splat_idx as usize];
        let [ca, cb, cc] = splat.conic;
        for p in 0..n_px {
            if done[p] {
                continue;
            }
            let px = (rect.x0 + p % tw) as f64 + 0.5;
            let py = (rect.y0 + p / tw) as f64 + 0.5;
            let dx = px - splat.mean2d[0];
            let dy = py - splat.mean2d[1];
            let q = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy;
            if q < 0.0 {
                continue;
            }
            let alpha = (splat.alpha_base * (-0.5 * q).exp()).min(ALPHA_MAX);
            if alpha < ALPHA_MIN {
                continue;
            }
            let test_t = trans[p] * (1.0 - alpha);
            if test_t < TRANSMITTANCE_MIN {
                done[p] = true;
                alive -= 1;
                continue;
            }
            let weight = alpha * trans[p];
            color[p][0] += splat.rgb[0] * weight;
            color[p][1] += splat.rgb[1] * weight;
            color[p][2] += splat.rgb[2] * weight;
            if let Some(st) = stats.as_mut() {
                let entry = &mut st[j];
                entry[0] += 1.0;
                entry[1] += (dx * dx + dy * dy).sqrt();
                entry[2] += saliency.unwrap().get(rect.x0 + p % tw, rect.y0 + p / tw);
                entry[3] += weight;
            }
            trans[p] = test_t;
            last[p] = j as u32 + 1;
        }
    }

    let max_contributor = last.iter().copied().max().unwrap_or(0);
    TileOutput {
        color,
        transmittance: trans,
        last_contributor: last,
        max_contributor,
        checkpoints,
        stats,
    }
}

fn render_impl(
    splats: &[ProjectedSplat],
    camera: &Camera,
    background: [f64; 3],
    stats_for: Option<(&SaliencyMap, usize)>,
) -> (RenderArtifacts, Option<GaussianViewStats>) {
    let (w, h) = (camera.width, camera.height);
    let grid = build_tile_grid(splats, w, h);
    let saliency = stats_for.map(|(s, _)| s);

    let outputs = parallel::map_range(grid.tile_count(), |tile| {
        render_tile(tile, &grid, splats, saliency)
    });

    let mut image = Image::new(w, h);
    let mut final_t = vec![0.0f64; w * h];
    let mut last = vec![0u32; w * h];
    let mut checkpoints = Vec::with_capacity(outputs.len());
    let mut tile_max = Vec::with_capacity(outputs.len());
    let mut stats = stats_for.map(|(_, count)| GaussianViewStats::zeros(count));

    if let Some(st) = stats.as_mut() {
        for splat in splats {
            st.depth[splat.gaussian_index as usize] = splat.depth;
        }
    }

    // Sequential merge in tile order keeps results independent of the
    // thread count.
    for (tile, out) in outputs.into_iter().enumerate() {
        let rect = grid.rect(tile);
        let tw = rect.width();
        for p in 0..rect.pixels() {
            let x = rect.x0 + p % tw;
            let y = rect.y0 + p / tw;
            let t = out.transmittance[p];
            image.set_pixel(
                x,
                y,
                [
                    out.color[p][0] + t * background[0],
                    out.color[p][1] + t * background[1],
                    out.color[p][2] + t * background[2],
                ],
            );
            final_t[y * w + x] = t;
            last[y * w + x] = out.last_contributor[p];
        }
        if let (Some(st), Some(tile_stats)) = (stats.as_mut(), out.stats) {
            for (j, entry) in tile_stats.into_iter().enumerate() {
                let g = splats[grid.lists[tile][j] as usize].gaussian_index as usize;
                st.pixel_count[g] += entry[0];
                st.distance_sum[g] += entry[1];
                st.saliency_sum[g] += entry[2];
                st.blend_weight_sum[g] += entry[3];
            }
        }
        checkpoints.push(out.checkpoints);
        tile_max.push(out.max_contributor);
    }

    (
        RenderArtifacts {
            width: w,
            height: h,
            background,
            image,
            final_transmittance: final_t,
            last_contributor: last,
            tiles: grid,
            checkpoints,
            tile_max_contributor: tile_max,
        },
        stats,
    )
}

/// Alpha-blend sorted splats over the background.
pub fn render(
    splats: &[ProjectedSplat],
    camera: &Camera,
    background: [f64; 3],
) -> RenderArtifacts {
    render_impl(splats, camera, background, None).0
}

/// Like [`render`], additionally collecting the per-Gaussian view statistics
/// against a precomputed saliency map. The image path is untouched by the
/// stats collection.
pub fn render_with_stats(
    splats: &[ProjectedSplat],
    camera: &Camera,
    background: [f64; 3],
    saliency: &SaliencyMap,
    gaussian_count: usize,
) -> (RenderArtifacts, GaussianViewStats) {
    assert!(
        saliency.width == camera.width && saliency.height == camera.height,
        "saliency map shape mismatch"
    );
    let (artifacts, stats) =
        render_impl(splats, camera, background, Some((saliency, gaussian_count)));
    (artifacts, stats.expect("stats requested"))
}
