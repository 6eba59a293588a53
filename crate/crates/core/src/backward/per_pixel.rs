//! Reference gradient engine: per-pixel back-to-front traversal.

use super::{contribution_grad, splat_alpha, SplatAcc};
use crate::parallel;
use crate::render::{ProjectedSplat, RenderArtifacts};

/// Accumulate image-space splat gradients. Tiles run in parallel; each tile
/// walks its pixels and, per pixel, its splat list in reverse blending
/// order, reconstructing transmittance by division and the color behind each
/// splat by the usual recurrence. Tile partials merge in tile order.
pub(super) fn accumulate(
    artifacts: &RenderArtifacts,
    splats: &[ProjectedSplat],
    dl_dimage: &[f64],
) -> Vec<SplatAcc> {
    let grid = &artifacts.tiles;
    let bg = artifacts.background;
    let w = artifacts.width;

    let tile_accs = parallel::map_range(grid.tile_count(), |tile| {
        let rect = grid.rect(tile);
        let list = &grid.lists[tile];
        let mut acc: Vec<SplatAcc> = vec![[0.0; 9]; list.len()];
        for py in rect.y0..rect.y1 {
            for px in rect.x0..rect.x1 {
                let pix = py * w + px;
                let contributors = artifacts.last_contributor[pix] as usize;
                if contributors == 0 {
                    continue;
                }
                let dl = [
                    dl_dimage[3 * pix],
                    dl_dimage[3 * pix + 1],
                    dl_dimage[3 * pix + 2],
                ];
                let bg_dot = bg[0] * dl[0] + bg[1] * dl[1] + bg[2] * dl[2];
                let t_final = artifacts.final_transmittance[pix];
                let cx = px as f64 + 0.5;
                let cy = py as f64 + 0.5;

                let mut t_after = t_final;
                let mut s_behind = [0.0f64; 3];
                let mut last_alpha = 0.0f64;
                let mut last_color = [0.0f64; 3];
                for j in (0..contributors).rev() {
                    let splat = &splats[list[j] as usize];
                    let dx = cx - splat.mean2d[0];
                    let dy = cy - splat.mean2d[1];
                    let Some((g_exp, alpha)) = splat_alpha(splat, dx, dy) else {
                        continue;
                    };
                    let t_front = t_after / (1.0 - alpha);
                    for ch in 0..3 {
                        s_behind[ch] =
                            last_alpha * last_color[ch] + (1.0 - last_alpha) * s_behind[ch];
                    }
                    contribution_grad(
                        splat,
                        dx,
                        dy,
                        g_exp,
                        alpha,
                        t_front,
                        s_behind,
                        dl,
                        bg_dot,
                        t_final,
                        &mut acc[j],
                    );
                    last_color = splat.rgb;
                    last_alpha = alpha;
                    t_after = t_front;
                }
            }
        }
        acc
    });

    let mut splat_acc: Vec<SplatAcc> = vec![[0.0; 9]; splats.len()];
    for (tile, acc) in tile_accs.into_iter().enumerate() {
        for (j, a) in acc.into_iter().enumerate() {
            let target = &mut splat_acc[grid.lists[tile][j] as usize];
            for k in 0..9 {
                target[k] += a[k];
            }
        }
    }
    splat_acc
}
