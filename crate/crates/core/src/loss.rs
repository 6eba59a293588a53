//! Photometric losses, saliency maps and image-quality metrics.
//!
//! SSIM runs as two 1D Gaussian passes with replicate borders; its gradient
//! uses the exact adjoint of those passes so finite differences close at the
//! image boundary too.

use crate::image::{Image, Mask};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Per-pixel importance used to steer densification. Already masked: values
/// are zero wherever the region-of-interest mask is zero.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

fn assert_same_shape(a: &Image, b: &Image) {
    assert!(
        a.width == b.width && a.height == b.height,
        "image shape mismatch: {}x{} vs {}x{}",
        a.width,
        a.height,
        b.width,
        b.height
    );
}

/// Mean absolute error over pixels and channels, with its gradient w.r.t.
/// the rendered image.
pub fn l1_loss(render: &Image, gt: &Image) -> (f64, Vec<f64>) {
    assert_same_shape(render, gt);
    let n = render.data.len() as f64;
    let mut sum = 0.0;
    let mut grad = vec![0.0; render.data.len()];
    for (i, (r, g)) in render.data.iter().zip(&gt.data).enumerate() {
        let d = r - g;
        sum += d.abs();
        grad[i] = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    (sum / n, grad)
}

/// Normalized 1D Gaussian window for SSIM.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn conv_rows(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW as isize / 2;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xi = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[xi];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn conv_cols(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW as isize / 2;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yi = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * src[yi * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn conv_rows_adjoint(grad: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW as isize / 2;
    let mut out = vec![0.0; grad.len()];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            for (t, kv) in k.iter().enumerate() {
                let xi = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                out[y * w + xi] += kv * g;
            }
        }
    }
    out
}

fn conv_cols_adjoint(grad: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW as isize / 2;
    let mut out = vec![0.0; grad.len()];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            for (t, kv) in k.iter().enumerate() {
                let yi = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
                out[yi * w + x] += kv * g;
            }
        }
    }
    out
}

fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    conv_cols(&conv_rows(src, w, h, k), w, h, k)
}

fn blur_adjoint(grad: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    conv_rows_adjoint(&conv_cols_adjoint(grad, w, h, k), w, h, k)
}

fn channel_plane(img: &Image, ch: usize) -> Vec<f64> {
    img.data.iter().skip(ch).step_by(3).copied().collect()
}

/// Structural similarity of two images with its gradient w.r.t. `render`.
///
/// The returned scalar is the SSIM value (1 for identical inputs); the
/// gradient is d(SSIM)/d(render), laid out like `Image::data`.
pub fn ssim(render: &Image, gt: &Image) -> (f64, Vec<f64>) {
    assert_same_shape(render, gt);
    let (w, h) = (render.width, render.height);
    let k = ssim_kernel();
    let npix = (w * h) as f64;
    let dmean = 1.0 / (npix * 3.0);

    let mut total = 0.0;
    let mut grad = vec![0.0; render.data.len()];

    for ch in 0..3 {
        let x = channel_plane(render, ch);
        let y = channel_plane(gt, ch);
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

        let mu_x = blur(&x, w, h, &k);
        let mu_y = blur(&y, w, h, &k);
        let m_x2 = blur(&x2, w, h, &k);
        let m_y2 = blur(&y2, w, h, &k);
        let m_xy = blur(&xy, w, h, &k);

        // dL/d(mu_x), dL/d(m_x2), dL/d(m_xy) of the mean SSIM.
        let mut g_u = vec![0.0; x.len()];
        let mut g_v = vec![0.0; x.len()];
        let mut g_w = vec![0.0; x.len()];

        for i in 0..x.len() {
            let u = mu_x[i];
            let uy = mu_y[i];
            let sxx = m_x2[i] - u * u;
            let syy = m_y2[i] - uy * uy;
            let sxy = m_xy[i] - u * uy;
            let a1 = 2.0 * u * uy + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = u * u + uy * uy + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let denom = b1 * b2;
            let s = a1 * a2 / denom;
            total += s;

            g_u[i] = dmean * (2.0 * uy * (a2 - a1) - 2.0 * u * s * (b2 - b1)) / denom;
            g_v[i] = dmean * (-s / b2);
            g_w[i] = dmean * (2.0 * a1 / denom);
        }

        let bu = blur_adjoint(&g_u, w, h, &k);
        let bv = blur_adjoint(&g_v, w, h, &k);
        let bw = blur_adjoint(&g_w, w, h, &k);
        for i in 0..x.len() {
            grad[3 * i + ch] = bu[i] + 2.0 * x[i] * bv[i] + y[i] * bw[i];
        }
    }

    (total / (npix * 3.0), grad)
}

/// Combined training loss `(1 - lambda) * L1 + lambda * (1 - SSIM)` with its
/// gradient w.r.t. the rendered image.
pub fn photometric_loss(render: &Image, gt: &Image, ssim_weight: f64) -> (f64, Vec<f64>) {
    let (l1, g1) = l1_loss(render, gt);
    if ssim_weight == 0.0 {
        return (l1, g1);
    }
    let (s, gs) = ssim(render, gt);
    let loss = (1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - s);
    let grad = g1
        .iter()
        .zip(&gs)
        .map(|(a, b)| (1.0 - ssim_weight) * a - ssim_weight * b)
        .collect();
    (loss, grad)
}

/// 4-neighbor Laplacian with replicate borders.
fn laplacian(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| -> f64 {
        let xi = x.clamp(0, w as isize - 1) as usize;
        let yi = y.clamp(0, h as isize - 1) as usize;
        plane[yi * w + xi]
    };
    let mut out = vec![0.0; plane.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            out[y as usize * w + x as usize] =
                at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
        }
    }
    out
}

/// Per-pixel saliency: masked combination of the channel-mean L1 error and
/// the absolute Laplacian of the ground-truth luminance.
pub fn saliency(
    gt: &Image,
    render: &Image,
    roi_mask: Option<&Mask>,
    lambda1: f64,
    lambda2: f64,
) -> SaliencyMap {
    assert_same_shape(render, gt);
    if let Some(m) = roi_mask {
        assert!(
            m.width == gt.width && m.height == gt.height,
            "mask shape mismatch"
        );
    }
    let (w, h) = (gt.width, gt.height);
    let lap = laplacian(&gt.luminance(), w, h);
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(m) = roi_mask {
                if !m.get(x, y) {
                    continue;
                }
            }
            let r = render.pixel(x, y);
            let g = gt.pixel(x, y);
            let err =
                ((r[0] - g[0]).abs() + (r[1] - g[1]).abs() + (r[2] - g[2]).abs()) / 3.0;
            values[y * w + x] = lambda1 * err + lambda2 * lap[y * w + x].abs();
        }
    }
    SaliencyMap {
        width: w,
        height: h,
        values,
    }
}

/// Peak signal-to-noise ratio in decibels for unit dynamic range;
/// `f64::INFINITY` when the images are identical.
pub fn psnr(render: &Image, gt: &Image) -> f64 {
    assert_same_shape(render, gt);
    let mse: f64 = render
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / render.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        let mut img = Image::new(w, h);
        for v in img.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    // Dense 2D-convolution SSIM, the oracle for the separable path.
    fn ssim_dense_oracle(render: &Image, gt: &Image) -> f64 {
        let k1 = ssim_kernel();
        let mut k2 = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
        for (i, a) in k1.iter().enumerate() {
            for (j, b) in k1.iter().enumerate() {
                k2[i][j] = a * b;
            }
        }
        let (w, h) = (render.width, render.height);
        let conv2 = |src: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            let r = SSIM_WINDOW as isize / 2;
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dxx in -r..=r {
                            let yi = (y + dy).clamp(0, h as isize - 1) as usize;
                            let xi = (x + dxx).clamp(0, w as isize - 1) as usize;
                            acc += k2[(dy + r) as usize][(dxx + r) as usize] * src[yi * w + xi];
                        }
                    }
                    out[y as usize * w + x as usize] = acc;
                }
            }
            out
        };
        let mut total = 0.0;
        for ch in 0..3 {
            let x = channel_plane(render, ch);
            let y = channel_plane(gt, ch);
            let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
            let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
            let mu_x = conv2(&x);
            let mu_y = conv2(&y);
            let m_x2 = conv2(&x2);
            let m_y2 = conv2(&y2);
            let m_xy = conv2(&xy);
            for i in 0..x.len() {
                let sxx = m_x2[i] - mu_x[i] * mu_x[i];
                let syy = m_y2[i] - mu_y[i] * mu_y[i];
                let sxy = m_xy[i] - mu_x[i] * mu_y[i];
                total += ((2.0 * mu_x[i] * mu_y[i] + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                    / ((mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + SSIM_C1)
                        * (sxx + syy + SSIM_C2));
            }
        }
        total / (w * h * 3) as f64
    }

    #[test]
    fn l1_basics() {
        let a = Image::filled(4, 4, [0.7, 0.7, 0.7]);
        let b = Image::filled(4, 4, [0.2, 0.2, 0.2]);
        assert_eq!(l1_loss(&a, &a).0, 0.0);
        assert_relative_eq!(l1_loss(&a, &b).0, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn l1_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_image(&mut rng, 9, 7);
        let b = random_image(&mut rng, 9, 7);
        let expect: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.data.len() as f64;
        assert_relative_eq!(l1_loss(&a, &b).0, expect, epsilon = 1e-14);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        assert!((ssim(&a, &a).0 - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).0 - ssim(&b, &a).0).abs() < 1e-9);
        let s = ssim(&a, &b).0;
        assert!(s > -1.0 && s < 1.0);
    }

    #[test]
    fn separable_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let w = rng.gen_range(12..24);
            let h = rng.gen_range(12..24);
            let a = random_image(&mut rng, w, h);
            let b = random_image(&mut rng, w, h);
            let fast = ssim(&a, &b).0;
            let oracle = ssim_dense_oracle(&a, &b);
            assert!(
                (fast - oracle).abs() < 1e-6,
                "separable {fast} vs dense {oracle}"
            );
        }
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = random_image(&mut rng, 16, 16);
        let b = random_image(&mut rng, 16, 16);
        let (_, grad) = ssim(&a, &b);
        let h = 1e-5;
        // Probe a scattered subset of pixels, including corners.
        let mut idxs: Vec<usize> = (0..a.data.len()).step_by(53).collect();
        idxs.extend_from_slice(&[0, 1, 2, a.data.len() - 1]);
        for i in idxs {
            let orig = a.data[i];
            a.data[i] = orig + h;
            let up = ssim(&a, &b).0;
            a.data[i] = orig - h;
            let dn = ssim(&a, &b).0;
            a.data[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() <= 1e-3 * fd.abs().max(grad[i].abs()).max(1e-6),
                "pixel {i}: analytic {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn photometric_reduces_to_each_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_image(&mut rng, 14, 14);
        let b = random_image(&mut rng, 14, 14);
        assert_eq!(photometric_loss(&a, &a, 0.2).0, 0.0);
        assert_eq!(photometric_loss(&a, &b, 0.0).0, l1_loss(&a, &b).0);
        assert_relative_eq!(
            photometric_loss(&a, &b, 1.0).0,
            1.0 - ssim(&a, &b).0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn saliency_zero_cases() {
        let gt = Image::filled(8, 8, [0.4, 0.4, 0.4]);
        let s = saliency(&gt, &gt, None, 0.5, 0.5);
        assert!(s.values.iter().all(|v| *v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gt = random_image(&mut rng, 8, 8);
        let render = random_image(&mut rng, 8, 8);
        let empty = Mask {
            width: 8,
            height: 8,
            data: vec![false; 64],
        };
        let s = saliency(&gt, &render, Some(&empty), 0.5, 0.5);
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saliency_laplacian_of_single_bright_pixel() {
        // Constant gray image with one bright pixel; render is perfect so
        // only the Laplacian term contributes.
        let mut gt = Image::filled(7, 7, [0.25, 0.25, 0.25]);
        gt.set_pixel(3, 3, [1.0, 1.0, 1.0]);
        let lum_spike = 0.75; // luminance step of the bright pixel
        let l2 = 2.0;
        let s = saliency(&gt, &gt, None, 0.5, l2);
        assert_relative_eq!(s.get(3, 3), l2 * 4.0 * lum_spike, epsilon = 1e-12);
        assert_relative_eq!(s.get(3, 2), l2 * lum_spike, epsilon = 1e-12);
        assert_relative_eq!(s.get(2, 3), l2 * lum_spike, epsilon = 1e-12);
        assert_eq!(s.get(2, 2), 0.0);
        assert_eq!(s.get(0, 0), 0.0);
    }

    #[test]
    fn saliency_is_homogeneous_in_lambdas() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let gt = random_image(&mut rng, 10, 10);
        let render = random_image(&mut rng, 10, 10);
        let base = saliency(&gt, &render, None, 0.5, 0.5);
        let scaled = saliency(&gt, &render, None, 1.5, 1.5);
        for (a, b) in base.values.iter().zip(&scaled.values) {
            assert_relative_eq!(3.0 * a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn psnr_values() {
        let a = Image::filled(4, 4, [0.5, 0.5, 0.5]);
        assert_eq!(psnr(&a, &a), f64::INFINITY);
        let b = Image::filled(4, 4, [0.6, 0.6, 0.6]);
        // MSE = 0.01 -> 20 dB
        assert_relative_eq!(psnr(&a, &b), 20.0, epsilon = 1e-9);
        let c = Image::filled(4, 4, [0.51, 0.51, 0.51]);
        // MSE = 1e-4 -> 40 dB
        assert_relative_eq!(psnr(&a, &c), 40.0, epsilon = 1e-9);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn shape_mismatch_panics() {
        let a = Image::new(4, 4);
        let b = Image::new(5, 4);
        let _ = l1_loss(&a, &b);
    }
}
