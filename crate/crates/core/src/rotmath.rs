//! Rotation representations used throughout the pipeline: axis-angle vectors,
//! 3x3 rotation matrices and the continuous 6-D encoding (first two matrix
//! rows).
//!
//! All functions are pure. Axis-angle to matrix conversion is the Rodrigues
//! formula with a series expansion near zero; the inverse uses an `atan2`
//! formulation that stays well conditioned for every angle.

use nalgebra::{Matrix3, Vector3};

use crate::error::{BpgError, Result};

/// Below this rotation magnitude the sin/cos ratios switch to their series.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Tolerance on `mᵀm = I` and `det(m) = 1` for a matrix to count as a rotation.
pub const ORTHO_TOL: f64 = 1e-9;

/// Rotation as a 3-vector: unit axis scaled by the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        AxisAngle(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMatrix(Matrix3<f64>);

impl RotMatrix {
    pub fn identity() -> Self {
        RotMatrix(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and unit determinant.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        Self::from_matrix_tol(m, ORTHO_TOL)
    }

    /// Like [`RotMatrix::from_matrix`] with a caller-chosen tolerance, for
    /// measurements that were stored in reduced precision.
    pub fn from_matrix_tol(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        check_rotation(&m, tol)?;
        Ok(RotMatrix(m))
    }

    /// Wraps `m` without validation. Products of valid rotations stay valid
    /// up to rounding, so internal code uses this on composed matrices.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> RotMatrix {
        RotMatrix(self.0.transpose())
    }

    /// Composition `self · other`.
    pub fn compose(&self, other: &RotMatrix) -> RotMatrix {
        RotMatrix(mul3(&self.0, &other.0))
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

/// First and second rows of a rotation matrix, concatenated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SixD(pub [f64; 6]);

impl SixD {
    pub const IDENTITY: SixD = SixD([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
}

fn check_rotation(m: &Matrix3<f64>, tol: f64) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(BpgError::InvalidArgument(
            "rotation matrix has non-finite entries".into(),
        ));
    }
    let gram = m.transpose() * m;
    let dev = (gram - Matrix3::identity()).abs().max();
    if dev > tol {
        return Err(BpgError::InvalidArgument(format!(
            "matrix is not orthonormal (max |mᵀm - I| = {dev:e})"
        )));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > tol {
        return Err(BpgError::InvalidArgument(format!(
            "matrix determinant is {det}, expected +1"
        )));
    }
    Ok(())
}

/// Plain triple-loop product with a fixed summation order, so that
/// `aᵀ·a` comes out exactly symmetric.
pub(crate) fn mul3(a: &Matrix3<f64>, b: &Matrix3<f64>) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            out[(i, j)] = a[(i, 0)] * b[(0, j)] + a[(i, 1)] * b[(1, j)] + a[(i, 2)] * b[(2, j)];
        }
    }
    out
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `sin θ / θ` and `(1 - cos θ) / θ²`.
fn rodrigues_coeffs(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// Rodrigues formula without input validation.
pub(crate) fn rodrigues(v: &Vector3<f64>) -> Matrix3<f64> {
    let (a, b) = rodrigues_coeffs(v.norm());
    let k = skew(v);
    Matrix3::identity() + k * a + (k * k) * b
}

/// Partial derivatives `∂R/∂v_i` of the Rodrigues map, i = 0..3.
pub fn rodrigues_jacobian(v: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = v.norm_squared();
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    if theta2.sqrt() < SMALL_ANGLE {
        // dR/dv_i at the origin is [e_i]x; the correction is O(|v|)
        let k = skew(v);
        return basis.map(|e| {
            let ek = skew(&e);
            ek + (ek * k + k * ek) * 0.5
        });
    }
    let r = rodrigues(v);
    let k = skew(v);
    let i_minus_r = Matrix3::identity() - r;
    let mut out = [Matrix3::zeros(); 3];
    for (i, e) in basis.iter().enumerate() {
        let w = v.cross(&(i_minus_r * e));
        out[i] = (k * v[i] + skew(&w)) * r / theta2;
    }
    out
}

pub fn axis_angle_to_matrix(a: &AxisAngle) -> Result<RotMatrix> {
    if !a.is_finite() {
        return Err(BpgError::InvalidArgument(
            "axis-angle has non-finite components".into(),
        ));
    }
    Ok(RotMatrix(rodrigues(&a.0)))
}

/// Matrix logarithm. Near a half turn the axis sign is arbitrary.
pub fn matrix_to_axis_angle(r: &RotMatrix) -> Result<AxisAngle> {
    check_rotation(&r.0, ORTHO_TOL)?;
    Ok(log_unchecked(&r.0))
}

pub(crate) fn log_unchecked(m: &Matrix3<f64>) -> AxisAngle {
    let w = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let s = 0.5 * w.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if c > 0.0 {
        if theta < SMALL_ANGLE {
            return AxisAngle(w * (0.5 + theta * theta / 12.0));
        }
        return AxisAngle(w * (theta / (2.0 * s)));
    }
    if s > 1e-4 {
        return AxisAngle(w * (theta / (2.0 * s)));
    }
    // near a half turn: (R + Rᵀ)/2 - cI = (1 - c) n nᵀ
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * c;
    let k = (0..3)
        .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
        .unwrap_or(0);
    let mut n: Vector3<f64> = sym.column(k).into();
    n /= n.norm();
    if n.dot(&w) < 0.0 {
        n = -n;
    }
    AxisAngle(n * theta)
}

pub fn matrix_to_sixd(r: &RotMatrix) -> SixD {
    let m = &r.0;
    SixD([
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
    ])
}

/// 6-D encoding of the relative rotation `R_prevᵀ · R_cur`.
pub fn angular_velocity_sixd(prev: &RotMatrix, cur: &RotMatrix) -> SixD {
    matrix_to_sixd(&prev.transpose().compose(cur))
}

/// Geodesic distance between two rotations in degrees.
///
/// Evaluated as `atan2(sin θ, cos θ)` on `R1ᵀR2`, which equals the clamped
/// `arccos((tr - 1) / 2)` and returns exactly zero for identical inputs.
pub fn geodesic_deg(r1: &RotMatrix, r2: &RotMatrix) -> f64 {
    let m = mul3(&r1.0.transpose(), &r2.0);
    let w = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let c = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    (0.5 * w.norm()).atan2(c).to_degrees()
}

pub fn rot_x(angle: f64) -> RotMatrix {
    let (s, c) = angle.sin_cos();
    RotMatrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
}

pub fn rot_y(angle: f64) -> RotMatrix {
    let (s, c) = angle.sin_cos();
    RotMatrix(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
}

pub fn rot_z(angle: f64) -> RotMatrix {
    let (s, c) = angle.sin_cos();
    RotMatrix(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
}
