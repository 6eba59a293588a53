//! Real spherical harmonics up to degree 3 for view-dependent color.
//!
//! Basis ordering is band-major with m running from -l to l, matching the
//! common splat interchange layout: index 0 is the DC term, 1..=3 band 1,
//! 4..=8 band 2, 9..=15 band 3.

pub const SH_BASIS: usize = 16;

const C0: f64 = 0.28209479177387814;
const C1: f64 = 0.4886025119029199;
const C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

/// Basis values for a unit direction, bands above `degree` left at zero.
pub fn basis(dir: &[f64; 3], degree: usize) -> [f64; SH_BASIS] {
    let (x, y, z) = (dir[0], dir[1], dir[2]);
    let mut b = [0.0; SH_BASIS];
    b[0] = C0;
    if degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = C3[0] * y * (3.0 * xx - yy);
        b[10] = C3[1] * x * y * z;
        b[11] = C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = C3[5] * z * (xx - yy);
        b[15] = C3[6] * x * (xx - 3.0 * yy);
    }
    b
}

/// Partial derivatives of every basis value w.r.t. the direction components.
/// Returns (d/dx, d/dy, d/dz).
pub fn basis_grad(dir: &[f64; 3], degree: usize) -> [[f64; SH_BASIS]; 3] {
    let (x, y, z) = (dir[0], dir[1], dir[2]);
    let mut dx = [0.0; SH_BASIS];
    let mut dy = [0.0; SH_BASIS];
    let mut dz = [0.0; SH_BASIS];
    if degree >= 1 {
        dy[1] = -C1;
        dz[2] = C1;
        dx[3] = -C1;
    }
    if degree >= 2 {
        dx[4] = C2[0] * y;
        dy[4] = C2[0] * x;
        dy[5] = C2[1] * z;
        dz[5] = C2[1] * y;
        dx[6] = -2.0 * C2[2] * x;
        dy[6] = -2.0 * C2[2] * y;
        dz[6] = 4.0 * C2[2] * z;
        dx[7] = C2[3] * z;
        dz[7] = C2[3] * x;
        dx[8] = 2.0 * C2[4] * x;
        dy[8] = -2.0 * C2[4] * y;
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        dx[9] = C3[0] * 6.0 * x * y;
        dy[9] = C3[0] * (3.0 * xx - 3.0 * yy);
        dx[10] = C3[1] * y * z;
        dy[10] = C3[1] * x * z;
        dz[10] = C3[1] * x * y;
        dx[11] = C3[2] * (-2.0 * x * y);
        dy[11] = C3[2] * (4.0 * zz - xx - 3.0 * yy);
        dz[11] = C3[2] * 8.0 * y * z;
        dx[12] = C3[3] * (-6.0 * x * z);
        dy[12] = C3[3] * (-6.0 * y * z);
        dz[12] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
        dx[13] = C3[4] * (4.0 * zz - 3.0 * xx - yy);
        dy[13] = C3[4] * (-2.0 * x * y);
        dz[13] = C3[4] * 8.0 * x * z;
        dx[14] = C3[5] * 2.0 * x * z;
        dy[14] = C3[5] * (-2.0 * y * z);
        dz[14] = C3[5] * (xx - yy);
        dx[15] = C3[6] * (3.0 * xx - 3.0 * yy);
        dy[15] = C3[6] * (-6.0 * x * y);
    }
    [dx, dy, dz]
}

/// SH contraction per channel before the 0.5 offset and clamp.
pub fn eval_unclamped(
    dir: &[f64; 3],
    sh_dc: &[f64; 3],
    sh_rest: &[f64],
    degree: usize,
) -> [f64; 3] {
    debug_assert_eq!(sh_rest.len(), (SH_BASIS - 1) * 3);
    let b = basis(dir, degree);
    let mut rgb = [0.0; 3];
    for ch in 0..3 {
        let mut v = b[0] * sh_dc[ch];
        for c in 1..SH_BASIS {
            v += b[c] * sh_rest[(c - 1) * 3 + ch];
        }
        rgb[ch] = v;
    }
    rgb
}

/// View-dependent color: SH contraction plus the 0.5 offset, clamped at 0
/// from below.
pub fn eval(dir: &[f64; 3], sh_dc: &[f64; 3], sh_rest: &[f64], degree: usize) -> [f64; 3] {
    let raw = eval_unclamped(dir, sh_dc, sh_rest, degree);
    [
        (raw[0] + 0.5).max(0.0),
        (raw[1] + 0.5).max(0.0),
        (raw[2] + 0.5).max(0.0),
    ]
}
