//! Posing the mesh-bound head block of a composed cloud.

use crate::error::{Error, Result};
use crate::head::{pose_mesh, HeadModel, HeadParams};
use crate::math::{Quat, RigidTransform};
use crate::scene::{GaussianCloud, TriangleBinding};

/// A head model plus the binding of the first `binding.len()` Gaussians of a
/// cloud; `placement` maps head space into the cloud's world.
#[derive(Debug, Clone, Copy)]
pub struct HeadRig<'a> {
    pub model: &'a HeadModel,
    pub binding: &'a TriangleBinding,
    pub placement: RigidTransform,
}

impl HeadRig<'_> {
    /// Poses the mesh and rewrites the head block's geometry in place.
    /// Appearance and everything past the head block are untouched.
    pub fn drive(&self, cloud: &mut GaussianCloud, params: &HeadParams) -> Result<()> {
        let n = self.binding.len();
        if cloud.len() < n {
            return Err(Error::invalid(format!(
                "cloud has {} Gaussians, the head binding needs {n}",
                cloud.len()
            )));
        }
        let mesh = pose_mesh(self.model, params)?;
        let driven = self.binding.drive(&mesh)?;
        let q = Quat::from_rotation(&self.placement.rotation);
        for i in 0..n {
            cloud.positions[i] = self.placement.apply(&driven.positions[i]);
            cloud.rotations[i] = q.mul(&driven.rotations[i]);
            cloud.log_scales[i] = driven.log_scales[i];
        }
        Ok(())
    }
}
