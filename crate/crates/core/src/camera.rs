use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, RigidTransform, Vec3};

/// Pinhole camera. OpenCV axes: x right, y down, z forward. Pixel `(i, j)`
/// has its center at the continuous coordinate `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: RigidTransform,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

fn default_near() -> f64 {
    0.01
}

fn default_far() -> f64 {
    100.0
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invariant("camera.size", "width and height must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invariant("camera.focal", "fx and fy must be positive"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invariant("camera.clip", "require 0 < near < far"));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if (self.cx - 0.5 * w).abs() > 2.0 * w || (self.cy - 0.5 * h).abs() > 2.0 * h {
            return Err(Error::invariant(
                "camera.principal_point",
                "principal point lies outside the 4x image margin",
            ));
        }
        Ok(())
    }

    /// Looks from `eye` toward `target`; `up` is the world up direction.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        width: u32,
        height: u32,
        fov_y_deg: f64,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at: eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at: up is parallel to the view direction"))?;
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        let cam = CameraRig {
            width,
            height,
            fx: f,
            fy: f,
            cx: 0.5 * (width as f64 - 1.0),
            cy: 0.5 * (height as f64 - 1.0),
            world_to_camera: RigidTransform {
                rotation,
                translation: -(rotation * eye),
            },
            near: default_near(),
            far: default_far(),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// World-to-camera pose of an orbit camera around `target`, world up +y.
    /// Azimuth 0 looks down −z from the +z side; positive elevation is above.
    ///
    /// ```text
    /// eye = target + r (cos e sin a, sin e, cos e cos a)
    /// R   = [[ cos a,        0,      −sin a      ],
    ///        [ sin e sin a, −cos e,   sin e cos a ],
    ///        [−cos e sin a, −sin e,  −cos e cos a ]]
    /// t   = −R eye
    /// ```
    pub fn orbit_pose(target: Vec3, radius: f64, azimuth: f64, elevation: f64) -> Result<RigidTransform> {
        if !(radius > 0.0) || !(elevation.abs() < std::f64::consts::FRAC_PI_2) || !azimuth.is_finite() {
            return Err(Error::invalid("orbit: need radius > 0 and |elevation| < π/2"));
        }
        let (sa, ca) = azimuth.sin_cos();
        let (se, ce) = elevation.sin_cos();
        let eye = target + radius * Vec3::new(ce * sa, se, ce * ca);
        #[rustfmt::skip]
        let rotation = Mat3::new(
            ca, 0.0, -sa,
            se * sa, -ce, se * ca,
            -ce * sa, -se, -ce * ca,
        );
        Ok(RigidTransform {
            rotation,
            translation: -(rotation * eye),
        })
    }

    pub fn center(&self) -> Vec3 {
        -(self.world_to_camera.rotation.transpose() * self.world_to_camera.translation)
    }

    #[inline]
    pub fn to_camera(&self, x: &Vec3) -> Vec3 {
        self.world_to_camera.apply(x)
    }

    /// Pixel coordinates of a camera-space point (no depth test).
    #[inline]
    pub fn project_camera_point(&self, p: &Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Pixel index containing a world point, or `None` when it is outside
    /// the image or the clip range.
    pub fn pixel_of(&self, x: &Vec3) -> Option<(usize, usize, f64)> {
        let p = self.to_camera(x);
        if !(p.z > self.near && p.z < self.far) {
            return None;
        }
        let (u, v) = self.project_camera_point(&p);
        let (i, j) = ((u + 0.5).floor(), (v + 0.5).floor());
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some((i as usize, j as usize, p.z))
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn with_pose(&self, world_to_camera: RigidTransform) -> CameraRig {
        CameraRig {
            world_to_camera,
            ..self.clone()
        }
    }
}
