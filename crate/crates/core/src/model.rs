//! Gaussian scene state and the activations applied to its raw parameters.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

/// Spherical-harmonics coefficients per channel beyond the DC term
/// (bands 1..=3: 3 + 5 + 7 = 15).
pub const SH_REST_COEFFS: usize = 15;
/// Optimized scalars in `sh_rest` per Gaussian (15 coefficients x RGB).
pub const SH_REST_DIM: usize = SH_REST_COEFFS * 3;
/// Total optimized scalars per Gaussian:
/// position 3 + rotation 4 + scale 3 + opacity 1 + sh_dc 3 + sh_rest 45.
pub const ATTRS_PER_GAUSSIAN: usize = 59;

/// How raw opacities map to blending opacities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OpacityMode {
    /// `o = sigmoid(raw)`, bounded to (0, 1).
    Sigmoid,
    /// `o = |raw|`; may exceed 1, blending weights are clamped at render time.
    HighOpacityAbs,
}

/// Activated opacity for a raw parameter under the given mode.
pub fn activate_opacity(raw: f64, mode: OpacityMode) -> f64 {
    match mode {
        OpacityMode::Sigmoid => sigmoid(raw),
        OpacityMode::HighOpacityAbs => raw.abs(),
    }
}

/// d(activated)/d(raw). The kink of `abs` at 0 uses subgradient 0.
pub fn activate_opacity_grad(raw: f64, mode: OpacityMode) -> f64 {
    match mode {
        OpacityMode::Sigmoid => {
            let s = sigmoid(raw);
            s * (1.0 - s)
        }
        OpacityMode::HighOpacityAbs => {
            if raw > 0.0 {
                1.0
            } else if raw < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of `sigmoid`; input clamped away from {0, 1}.
pub fn inverse_sigmoid(y: f64) -> f64 {
    let y = y.clamp(1e-12, 1.0 - 1e-12);
    (y / (1.0 - y)).ln()
}

/// World-space covariance `R S S^T R^T` from a quaternion and activated
/// (strictly positive) scales. The quaternion is normalized before use.
pub fn build_covariance(rotation: &[f64; 4], scales: &Vector3<f64>) -> Matrix3<f64> {
    let r = rotation_matrix(rotation);
    let m = r * Matrix3::from_diagonal(scales);
    m * m.transpose()
}

/// Rotation matrix of a (w, x, y, z) quaternion, normalized first.
pub fn rotation_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    *uq.to_rotation_matrix().matrix()
}

/// Structure-of-arrays Gaussian model state.
///
/// Layouts: `positions`/`log_scales`/`sh_dc` are `3 * count` (xyz / rgb),
/// `rotations` is `4 * count` as (w, x, y, z), `raw_opacities` is `count`,
/// `sh_rest` is `45 * count` stored coefficient-major per Gaussian
/// (`[c0.r, c0.g, c0.b, c1.r, ...]`).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub count: usize,
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub raw_opacities: Vec<f64>,
    pub sh_dc: Vec<f64>,
    pub sh_rest: Vec<f64>,
    pub opacity_mode: OpacityMode,
}

impl GaussianSet {
    /// A set of `count` Gaussians with identity rotations, unit scales,
    /// zero SH and raw opacity 0.
    pub fn with_count(count: usize) -> Self {
        let mut rotations = vec![0.0; 4 * count];
        for i in 0..count {
            rotations[4 * i] = 1.0;
        }
        GaussianSet {
            count,
            positions: vec![0.0; 3 * count],
            rotations,
            log_scales: vec![0.0; 3 * count],
            raw_opacities: vec![0.0; count],
            sh_dc: vec![0.0; 3 * count],
            sh_rest: vec![0.0; SH_REST_DIM * count],
            opacity_mode: OpacityMode::Sigmoid,
        }
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.positions[3 * i],
            self.positions[3 * i + 1],
            self.positions[3 * i + 2],
        )
    }

    pub fn rotation(&self, i: usize) -> [f64; 4] {
        [
            self.rotations[4 * i],
            self.rotations[4 * i + 1],
            self.rotations[4 * i + 2],
            self.rotations[4 * i + 3],
        ]
    }

    /// Activated (exponentiated) scales, strictly positive.
    pub fn scales(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.log_scales[3 * i].exp(),
            self.log_scales[3 * i + 1].exp(),
            self.log_scales[3 * i + 2].exp(),
        )
    }

    pub fn opacity(&self, i: usize) -> f64 {
        activate_opacity(self.raw_opacities[i], self.opacity_mode)
    }

    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        build_covariance(&self.rotation(i), &self.scales(i))
    }

    pub fn sh_dc_rgb(&self, i: usize) -> [f64; 3] {
        [
            self.sh_dc[3 * i],
            self.sh_dc[3 * i + 1],
            self.sh_dc[3 * i + 2],
        ]
    }

    /// The 45 higher-band coefficients of Gaussian `i`.
    pub fn sh_rest_slice(&self, i: usize) -> &[f64] {
        &self.sh_rest[SH_REST_DIM * i..SH_REST_DIM * (i + 1)]
    }

    /// Renormalize every stored quaternion to unit length.
    pub fn renormalize_rotations(&mut self) {
        for q in self.rotations.chunks_exact_mut(4) {
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if n > 0.0 {
                for v in q.iter_mut() {
                    *v /= n;
                }
            } else {
                q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
            }
        }
    }

    /// Keep only the rows whose old indices appear in `survivors` (in that
    /// order). Used by pruning and split-parent removal.
    pub fn retain_rows(&mut self, survivors: &[usize]) {
        self.positions = gather(&self.positions, survivors, 3);
        self.rotations = gather(&self.rotations, survivors, 4);
        self.log_scales = gather(&self.log_scales, survivors, 3);
        self.raw_opacities = gather(&self.raw_opacities, survivors, 1);
        self.sh_dc = gather(&self.sh_dc, survivors, 3);
        self.sh_rest = gather(&self.sh_rest, survivors, SH_REST_DIM);
        self.count = survivors.len();
    }

    /// Append a copy of row `src` and return the new row index.
    pub fn push_copy_of(&mut self, src: usize) -> usize {
        for k in 0..3 {
            self.positions.push(self.positions[3 * src + k]);
        }
        for k in 0..4 {
            self.rotations.push(self.rotations[4 * src + k]);
        }
        for k in 0..3 {
            self.log_scales.push(self.log_scales[3 * src + k]);
        }
        self.raw_opacities.push(self.raw_opacities[src]);
        for k in 0..3 {
            self.sh_dc.push(self.sh_dc[3 * src + k]);
        }
        for k in 0..SH_REST_DIM {
            self.sh_rest.push(self.sh_rest[SH_REST_DIM * src + k]);
        }
        self.count += 1;
        self.count - 1
    }
}

pub(crate) fn gather(data: &[f64], rows: &[usize], stride: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * stride);
    for &r in rows {
        out.extend_from_slice(&data[stride * r..stride * (r + 1)]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn opacity_activation_modes() {
        assert_eq!(activate_opacity(0.0, OpacityMode::Sigmoid), 0.5);
        assert_eq!(activate_opacity(-0.5, OpacityMode::HighOpacityAbs), 0.5);
        // abs mode may exceed 1; the clamp happens at blend time.
        assert_eq!(activate_opacity(2.0, OpacityMode::HighOpacityAbs), 2.0);
    }

    #[test]
    fn opacity_activation_is_monotone() {
        // Sigmoid is monotone in the raw value, abs in its magnitude.
        let mut prev_sig = f64::NEG_INFINITY;
        for k in 0..100 {
            let x = -5.0 + 0.1 * k as f64;
            let s = activate_opacity(x, OpacityMode::Sigmoid);
            assert!(s > prev_sig);
            prev_sig = s;
        }
        let mut prev_abs = f64::NEG_INFINITY;
        for k in 0..100 {
            let x = 0.1 * k as f64;
            let a = activate_opacity(x, OpacityMode::HighOpacityAbs);
            assert!(a >= prev_abs);
            assert_eq!(a, activate_opacity(-x, OpacityMode::HighOpacityAbs));
            prev_abs = a;
        }
    }

    #[test]
    fn covariance_identity_and_axis_aligned() {
        let id = [1.0, 0.0, 0.0, 0.0];
        let c = build_covariance(&id, &Vector3::new(1.0, 1.0, 1.0));
        assert_relative_eq!(c, Matrix3::identity(), epsilon = 1e-12);

        let c = build_covariance(&id, &Vector3::new(2.0, 1.0, 1.0));
        assert_relative_eq!(
            c,
            Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn covariance_rotated_by_quarter_turn() {
        // 90 degrees about z maps the x-axis scale onto y.
        let q = [FRAC_1_SQRT_2, 0.0, 0.0, FRAC_1_SQRT_2];
        let c = build_covariance(&q, &Vector3::new(2.0, 1.0, 1.0));
        assert_relative_eq!(
            c,
            Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            if q.iter().map(|v| v * v).sum::<f64>() < 1e-3 {
                continue;
            }
            let s = Vector3::new(
                rng.gen_range(0.2..2.0),
                rng.gen_range(0.2..2.0),
                rng.gen_range(0.2..2.0),
            );
            let cov = build_covariance(&q, &s);
            let mut eig: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
            let mut expect: Vec<f64> = s.iter().map(|v| v * v).collect();
            eig.sort_by(f64::total_cmp);
            expect.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&expect) {
                assert_relative_eq!(a, b, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn retain_and_push_rows() {
        let mut set = GaussianSet::with_count(3);
        for i in 0..3 {
            set.positions[3 * i] = i as f64;
            set.raw_opacities[i] = 10.0 * i as f64;
        }
        set.retain_rows(&[2, 0]);
        assert_eq!(set.count, 2);
        assert_eq!(set.positions[0], 2.0);
        assert_eq!(set.raw_opacities[1], 0.0);

        let j = set.push_copy_of(0);
        assert_eq!(j, 2);
        assert_eq!(set.position(2), set.position(0));
    }
}
