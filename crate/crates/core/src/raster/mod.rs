//! CPU Gaussian splatting: projection, tiled forward blending with priority
//! groups, a brute-force reference, and the appearance backward pass.

mod backward;
mod forward;

pub use backward::{render_backward, RenderGradients};
pub use forward::{
    pixel_contributors, reference_pixel, render, render_reference, render_with_state, ForwardState,
    RenderOutput,
};

use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::math::{Mat3, Quat, Vec3};
use crate::scene::Group;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConstants {
    pub tile_size: usize,
    /// Added to the diagonal of every projected covariance (px²).
    pub lowpass: f64,
    pub alpha_max: f64,
    pub alpha_cull: f64,
    /// Blending stops once transmittance falls below this.
    pub t_stop: f64,
    /// Means projecting outside the image grown by this factor about its
    /// center are culled.
    pub frustum_margin: f64,
}

impl Default for RasterConstants {
    fn default() -> Self {
        RasterConstants {
            tile_size: 16,
            lowpass: 0.3,
            alpha_max: 0.99,
            alpha_cull: 1.0 / 255.0,
            t_stop: 1e-4,
            frustum_margin: 1.3,
        }
    }
}

impl RasterConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tile_size > 0
            && self.lowpass >= 0.0
            && self.alpha_max > 0.0
            && self.alpha_max < 1.0
            && self.alpha_cull > 0.0
            && self.alpha_cull < self.alpha_max
            && self.t_stop >= 0.0
            && self.t_stop < 1.0
            && self.frustum_margin >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid raster constants {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    /// Fill color seen through the remaining transmittance.
    pub background: [f64; 3],
    pub constants: RasterConstants,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            background: [0.0; 3],
            constants: RasterConstants::default(),
        }
    }
}

/// A Gaussian after projection to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean: [f64; 2],
    /// `[xx, xy, yy]`, low-pass dilation included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub group: Group,
    pub source_index: usize,
}

impl Splat2D {
    /// Unclamped Gaussian falloff `exp(−½ dᵀΣ⁻¹d)` at a pixel center.
    #[inline]
    pub fn falloff(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let power = -0.5 * (self.conic[0] * dx * dx + self.conic[2] * dy * dy) - self.conic[1] * dx * dy;
        power.min(0.0).exp()
    }

    #[inline]
    pub fn alpha(&self, px: f64, py: f64, k: &RasterConstants) -> f64 {
        (self.opacity * self.falloff(px, py)).min(k.alpha_max)
    }

    /// Inclusive pixel box outside which `alpha < alpha_cull`, or `None` if
    /// the splat can never reach the cull threshold.
    pub fn pixel_bounds(&self, k: &RasterConstants, width: usize, height: usize) -> Option<[usize; 4]> {
        if self.opacity < k.alpha_cull {
            return None;
        }
        let q = 2.0 * (self.opacity / k.alpha_cull).ln();
        let hx = (q * self.cov2d[0]).sqrt() + 1.0;
        let hy = (q * self.cov2d[2]).sqrt() + 1.0;
        let x0 = (self.mean[0] - hx).ceil().max(0.0);
        let y0 = (self.mean[1] - hy).ceil().max(0.0);
        let x1 = (self.mean[0] + hx).floor().min(width as f64 - 1.0);
        let y1 = (self.mean[1] + hy).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return None;
        }
        Some([x0 as usize, y0 as usize, x1 as usize, y1 as usize])
    }
}

/// `Σ = R·diag(s)²·Rᵀ`.
pub fn build_covariance(q: &Quat, s: &Vec3) -> Result<Mat3> {
    if !s.iter().all(|v| *v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("scales must be positive, got {s:?}")));
    }
    let r = q.to_rotation()?;
    let m = r * Mat3::from_diagonal(s);
    Ok(m * m.transpose())
}

/// Projected mean (pixels), `cov2d` and camera depth; `None` when culled.
pub fn project_gaussian(
    mu: &Vec3,
    sigma: &Mat3,
    camera: &CameraRig,
    k: &RasterConstants,
) -> Option<([f64; 2], [f64; 3], f64)> {
    let t = camera.to_camera(mu);
    if !(t.z > camera.near && t.z < camera.far) {
        return None;
    }
    let (u, v) = camera.project_camera_point(&t);
    let (w, h) = (camera.width as f64, camera.height as f64);
    let half = 0.5 * k.frustum_margin;
    if (u - 0.5 * (w - 1.0)).abs() > half * w || (v - 0.5 * (h - 1.0)).abs() > half * h {
        return None;
    }
    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / t.z;
    let j = nalgebra::Matrix2x3::new(
        fx * iz,
        0.0,
        -fx * t.x * iz * iz,
        0.0,
        fy * iz,
        -fy * t.y * iz * iz,
    );
    let wr = camera.world_to_camera.rotation;
    let m = j * wr;
    let c = m * sigma * m.transpose();
    let cov = [c[(0, 0)] + k.lowpass, 0.5 * (c[(0, 1)] + c[(1, 0)]), c[(1, 1)] + k.lowpass];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0 && det.is_finite()) {
        return None;
    }
    Some(([u, v], cov, t.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::RigidTransform;
    use proptest::prelude::*;

    fn camera() -> CameraRig {
        CameraRig {
            width: 64,
            height: 48,
            fx: 100.0,
            fy: 90.0,
            cx: 31.5,
            cy: 23.5,
            world_to_camera: RigidTransform::IDENTITY,
            near: 0.01,
            far: 100.0,
        }
    }

    #[test]
    fn covariance_basic_cases() {
        let c = build_covariance(&Quat::IDENTITY, &Vec3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(c, Mat3::identity());
        let c = build_covariance(&Quat::IDENTITY, &Vec3::new(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(c, Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)));
        assert!(build_covariance(&Quat::IDENTITY, &Vec3::new(0.0, 1.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            s in prop::array::uniform3(0.05f64..3.0),
        ) {
            let q = Quat::new(w, x, y, z);
            prop_assume!(q.norm() > 0.1);
            let c = build_covariance(&q, &Vec3::from(s)).unwrap();
            prop_assert!((c - c.transpose()).norm() < 1e-12);
            let mut e: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
            e.sort_by(f64::total_cmp);
            let mut want: Vec<f64> = s.iter().map(|v| v * v).collect();
            want.sort_by(f64::total_cmp);
            for k in 0..3 {
                prop_assert!((e[k] - want[k]).abs() < 1e-6 * want[2].max(1.0));
            }
        }
    }

    #[test]
    fn projection_on_axis() {
        let k = RasterConstants::default();
        let cam = camera();
        let eps: f64 = 0.01;
        let d = 2.0;
        let sigma = Mat3::identity() * eps * eps;
        let (mean, cov, z) = project_gaussian(&Vec3::new(0.0, 0.0, d), &sigma, &cam, &k).unwrap();
        assert_eq!(mean, [cam.cx, cam.cy]);
        assert_eq!(z, d);
        assert!((cov[0] - k.lowpass - (cam.fx * eps / d).powi(2)).abs() < 1e-12);
        assert!((cov[2] - k.lowpass - (cam.fy * eps / d).powi(2)).abs() < 1e-12);
        assert_eq!(cov[1], 0.0);

        let (_, far, _) = project_gaussian(&Vec3::new(0.0, 0.0, 2.0 * d), &sigma, &cam, &k).unwrap();
        assert!(((cov[0] - k.lowpass) / (far[0] - k.lowpass) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn culling() {
        let k = RasterConstants::default();
        let cam = camera();
        let s = Mat3::identity() * 1e-4;
        assert!(project_gaussian(&Vec3::new(0.0, 0.0, -1.0), &s, &cam, &k).is_none());
        assert!(project_gaussian(&Vec3::new(0.0, 0.0, 200.0), &s, &cam, &k).is_none());
        // far off to the side
        assert!(project_gaussian(&Vec3::new(5.0, 0.0, 1.0), &s, &cam, &k).is_none());
        // just outside the image but inside the margin
        assert!(project_gaussian(&Vec3::new(0.35, 0.0, 1.0), &s, &cam, &k).is_some());
    }

    #[test]
    fn bounds_contain_all_visible_pixels() {
        let k = RasterConstants::default();
        let s = Splat2D {
            mean: [20.3, 11.7],
            cov2d: [9.0, 4.0, 5.0],
            conic: {
                let det = 9.0 * 5.0 - 16.0;
                [5.0 / det, -4.0 / det, 9.0 / det]
            },
            depth: 1.0,
            color: [1.0; 3],
            opacity: 0.8,
            group: Group::Head,
            source_index: 0,
        };
        let [x0, y0, x1, y1] = s.pixel_bounds(&k, 64, 48).unwrap();
        for y in 0..48 {
            for x in 0..64 {
                let inside = (x0..=x1).contains(&x) && (y0..=y1).contains(&y);
                if !inside {
                    assert!(s.alpha(x as f64, y as f64, &k) < k.alpha_cull);
                }
            }
        }
    }
}
