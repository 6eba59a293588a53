//! Bucketed gradient engine: per-splat traversal from pixel-state
//! checkpoints.

use super::{contribution_grad, splat_alpha, SplatAcc};
use crate::parallel;
use crate::render::{ProjectedSplat, RenderArtifacts, CHECKPOINT_STRIDE};

#[derive(Debug, Clone, Copy)]
pub struct PerSplatOptions {
    /// Skip buckets that start past the tile's last contributor. Gradients
    /// are bit-identical either way; the skip only removes dead work.
    pub skip_tail: bool,
}

impl Default for PerSplatOptions {
    fn default() -> Self {
        PerSplatOptions { skip_tail: true }
    }
}

/// One unit of backward work: 32 consecutive list entries of one tile.
struct Bucket {
    tile: usize,
    index: usize,
}

/// Accumulate image-space splat gradients bucket by bucket. Each bucket
/// clones its checkpoint states, advances them splat by splat front to back
/// (replaying the forward skip logic exactly), sums every splat's gradient
/// over the whole tile into a private accumulator and emits it once.
pub(super) fn accumulate(
    artifacts: &RenderArtifacts,
    splats: &[ProjectedSplat],
    dl_dimage: &[f64],
    options: PerSplatOptions,
) -> Vec<SplatAcc> {
    let grid = &artifacts.tiles;
    let bg = artifacts.background;
    let w = artifacts.width;

    let mut buckets = Vec::new();
    for tile in 0..grid.tile_count() {
        let stored = artifacts.checkpoints[tile].len();
        let needed = (artifacts.tile_max_contributor[tile] as usize).div_ceil(CHECKPOINT_STRIDE);
        assert!(
            stored >= needed,
            "missing checkpoints: tile {tile} stores {stored}, needs {needed}"
        );
        let count = if options.skip_tail { needed } else { stored };
        for index in 0..count {
            buckets.push(Bucket { tile, index });
        }
    }

    let bucket_accs = parallel::map_slice(&buckets, |bucket| {
        let rect = grid.rect(bucket.tile);
        let list = &grid.lists[bucket.tile];
        let tw = rect.width();
        let n_px = rect.pixels();
        let start = bucket.index * CHECKPOINT_STRIDE;
        let end = (start + CHECKPOINT_STRIDE).min(list.len());
        let mut states = artifacts.checkpoints[bucket.tile][bucket.index].clone();
        let mut acc: Vec<SplatAcc> = vec![[0.0; 9]; end - start];

        for j in start..end {
            let splat = &splats[list[j] as usize];
            let private = &mut acc[j - start];
            for p in 0..n_px {
                let px = rect.x0 + p % tw;
                let py = rect.y0 + p / tw;
                let pix = py * w + px;
                // Pixels past their last contributor took nothing from this
                // splat in the forward pass.
                if j as u32 >= artifacts.last_contributor[pix] {
                    continue;
                }
                let dx = px as f64 + 0.5 - splat.mean2d[0];
                let dy = py as f64 + 0.5 - splat.mean2d[1];
                let Some((g_exp, alpha)) = splat_alpha(splat, dx, dy) else {
                    continue;
                };
                let t_front = states[p][0];
                let weight = alpha * t_front;
                let through = [
                    states[p][1] + splat.rgb[0] * weight,
                    states[p][2] + splat.rgb[1] * weight,
                    states[p][3] + splat.rgb[2] * weight,
                ];
                let t_after = t_front * (1.0 - alpha);
                let t_final = artifacts.final_transmittance[pix];
                let img = artifacts.image.pixel(px, py);
                // Color behind this splat, reconstructed from the totals.
                let s_behind = [
                    (img[0] - t_final * bg[0] - through[0]) / t_after,
                    (img[1] - t_final * bg[1] - through[1]) / t_after,
                    (img[2] - t_final * bg[2] - through[2]) / t_after,
                ];
                let dl = [
                    dl_dimage[3 * pix],
                    dl_dimage[3 * pix + 1],
                    dl_dimage[3 * pix + 2],
                ];
                let bg_dot = bg[0] * dl[0] + bg[1] * dl[1] + bg[2] * dl[2];
                contribution_grad(
                    splat, dx, dy, g_exp, alpha, t_front, s_behind, dl, bg_dot, t_final, private,
                );
                states[p] = [t_after, through[0], through[1], through[2]];
            }
        }
        acc
    });

    let mut splat_acc: Vec<SplatAcc> = vec![[0.0; 9]; splats.len()];
    for (bucket, acc) in buckets.iter().zip(bucket_accs) {
        let list = &grid.lists[bucket.tile];
        let start = bucket.index * CHECKPOINT_STRIDE;
        for (off, a) in acc.into_iter().enumerate() {
            let target = &mut splat_acc[list[start + off] as usize];
            for k in 0..9 {
                target[k] += a[k];
            }
        }
    }
    splat_acc
}
