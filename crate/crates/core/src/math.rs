//! Geometric and numeric primitives shared by the rest of the crate.
//!
//! Everything here works in `f64`. File formats store `f32`, which widens
//! losslessly, so round-trips through these types stay bit-exact.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Quaternion stored as `(w, x, y, z)`. May be unnormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quat {
    fn from(v: [f64; 4]) -> Self {
        Quat::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Quat> {
        let n = self.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::invalid(format!(
                "quaternion norm {n:e} is too small to define a rotation"
            )));
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Rotation of angle `|v|` about axis `v / |v|`.
    pub fn from_axis_angle(v: &Vec3) -> Quat {
        let angle = v.norm();
        if angle < 1e-300 {
            return Quat::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = v / angle;
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Hamilton product `self * rhs` (apply `rhs` first, then `self`).
    pub fn mul(&self, rhs: &Quat) -> Quat {
        let (a, b) = (self, rhs);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Normalizes, then converts to a rotation matrix.
    pub fn to_rotation(&self) -> Result<Mat3> {
        let q = self.normalized()?;
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Ok(Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Unit quaternion with non-negative `w` for a proper rotation matrix.
    pub fn from_rotation(m: &Mat3) -> Quat {
        // Shepperd: branch on the largest diagonal term for stability.
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let n = q.norm();
        let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
        Quat::new(sign * q.w / n, sign * q.x / n, sign * q.y / n, sign * q.z / n)
    }
}

/// Rodrigues' formula for an axis-angle vector.
pub fn axis_angle_to_matrix(v: &Vec3) -> Mat3 {
    let angle = v.norm();
    if angle < 1e-12 {
        // first-order expansion keeps the map smooth through zero
        return Mat3::identity() + skew(v);
    }
    let k = skew(&(v / angle));
    Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const ROTATION_TOL: f64 = 1e-6;

/// Checks `RᵀR = I` and `det R = +1` within `1e-6`.
pub fn check_rotation(r: &Mat3, field: &str) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::invariant(field, "rotation has non-finite entries"));
    }
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    if err > ROTATION_TOL {
        return Err(Error::invariant(
            field,
            format!("rotation is not orthonormal (max |RᵀR - I| = {err:e})"),
        ));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOL {
        return Err(Error::invariant(
            field,
            format!("rotation determinant is {det}, expected +1"),
        ));
    }
    Ok(())
}

/// Rigid map `x ↦ R·x + t`. Serialized as a row-major 4×4 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation, "rotation")?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invariant("translation", "non-finite translation"));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    pub fn from_quat(q: &Quat, t: Vec3) -> Result<Self> {
        Ok(RigidTransform {
            rotation: q.to_rotation()?,
            translation: t,
        })
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_matrix4(m: &[[f64; 4]; 4]) -> Result<Self> {
        let bottom = m[3];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invariant(
                "matrix",
                format!("bottom row of a rigid 4x4 must be [0, 0, 0, 1], got {bottom:?}"),
            ));
        }
        let rotation = Mat3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        RigidTransform::new(rotation, Vec3::new(m[0][3], m[1][3], m[2][3]))
    }
}

impl TryFrom<[[f64; 4]; 4]> for RigidTransform {
    type Error = Error;

    fn try_from(m: [[f64; 4]; 4]) -> Result<Self> {
        RigidTransform::from_matrix4(&m)
    }
}

impl From<RigidTransform> for [[f64; 4]; 4] {
    fn from(t: RigidTransform) -> Self {
        t.to_matrix4()
    }
}

pub const SH_COEFFS: usize = 16;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Additive offset applied before clamping, as in common splat files.
pub const SH_OFFSET: f64 = 0.5;

/// Degree-3 real SH, RGB per coefficient, band-major (`[0]` is DC).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShCoefficients(pub [[f64; 3]; SH_COEFFS]);

impl ShCoefficients {
    pub fn from_dc(dc: [f64; 3]) -> Self {
        let mut c = [[0.0; 3]; SH_COEFFS];
        c[0] = dc;
        ShCoefficients(c)
    }

    pub fn dc(&self) -> [f64; 3] {
        self.0[0]
    }

    /// DC triple that renders as `rgb` (before clamping).
    pub fn dc_for_color(rgb: [f64; 3]) -> [f64; 3] {
        rgb.map(|c| (c - SH_OFFSET) / SH_C0)
    }
}

/// Real SH basis values for a unit direction.
pub fn sh_basis(dir: &Vec3) -> [f64; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * xy,
        SH_C2[1] * yz,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Pre-clamp color: `Σ c·Y + 0.5` per channel.
pub fn sh_raw_color(coeffs: &ShCoefficients, basis: &[f64; SH_COEFFS]) -> [f64; 3] {
    let mut rgb = [SH_OFFSET; 3];
    for (c, b) in coeffs.0.iter().zip(basis) {
        for ch in 0..3 {
            rgb[ch] += c[ch] * b;
        }
    }
    rgb
}

/// View-dependent color, clamped at zero. `dir` must be unit length.
pub fn eval_sh(coeffs: &ShCoefficients, dir: &Vec3) -> Result<[f64; 3]> {
    let n = dir.norm();
    if !((n - 1.0).abs() <= 1e-6) {
        return Err(Error::invalid(format!(
            "SH direction must be unit length, got norm {n}"
        )));
    }
    Ok(sh_raw_color(coeffs, &sh_basis(dir)).map(|c| c.max(0.0)))
}

/// Serde adapter: `Mat3` as a row-major `[[f64; 3]; 3]`.
pub mod serde_mat3 {
    use super::Mat3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat3, s: S) -> Result<S::Ok, S::Error> {
        let rows: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]));
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat3, D::Error> {
        let rows = <[[f64; 3]; 3]>::deserialize(d)?;
        Ok(Mat3::from_fn(|r, c| rows[r][c]))
    }
}

/// Serde adapter: `Vec3` as `[f64; 3]`.
pub mod serde_vec3 {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}
