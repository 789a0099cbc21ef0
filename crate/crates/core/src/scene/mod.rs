//! Gaussian cloud storage, triangle binding and scene composition.

mod binding;
mod labels;
mod ply;

pub use binding::{bind_to_mesh, bind_to_mesh_with, BindOptions, BindResult, DrivenAttributes, TriangleBinding};
pub use labels::{labels_path, load_labels, save_labels};
pub use ply::{load_splat_file, load_splat_file_as, save_splat_file};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logistic, Quat, RigidTransform, ShCoefficients, Vec3};

/// Render-priority group. Head splats blend before background splats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Head = 0,
    Background = 1,
}

/// One Gaussian, used for building clouds point by point.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vec3,
    pub rotation: Quat,
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub sh: ShCoefficients,
    pub group: Group,
}

/// Columnar Gaussian storage. Scales are stored as logs and opacities as
/// logits, so `exp`/`logistic` keep them positive and inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<ShCoefficients>,
    pub group: Vec<Group>,
    pub person: Vec<bool>,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn with_capacity(n: usize) -> Self {
        GaussianCloud {
            positions: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            sh: Vec::with_capacity(n),
            group: Vec::with_capacity(n),
            person: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, g: Gaussian) {
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.sh.push(g.sh);
        self.group.push(g.group);
        self.person.push(false);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh[i],
            group: self.group[i],
        }
    }

    pub fn opacity(&self, i: usize) -> f64 {
        logistic(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        self.log_scales[i].map(f64::exp)
    }

    pub fn count_group(&self, g: Group) -> usize {
        self.group.iter().filter(|&&x| x == g).count()
    }

    pub fn set_group(&mut self, g: Group) {
        self.group.iter_mut().for_each(|x| *x = g);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            ("rotations", self.rotations.len()),
            ("log_scales", self.log_scales.len()),
            ("opacity_logits", self.opacity_logits.len()),
            ("sh", self.sh.len()),
            ("group", self.group.len()),
            ("person", self.person.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::invariant(name, format!("length {len}, expected {n}")));
            }
        }
        for (i, s) in self.log_scales.iter().enumerate() {
            let e = s.map(f64::exp);
            if !e.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(Error::invariant(
                    "log_scales",
                    format!("point {i} has a non-finite or zero scale"),
                ));
            }
        }
        if let Some(i) = self.positions.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invariant("positions", format!("point {i} is not finite")));
        }
        if let Some(i) = self.opacity_logits.iter().position(|v| v.is_nan()) {
            return Err(Error::invariant("opacity_logits", format!("point {i} is NaN")));
        }
        Ok(())
    }

    /// Keeps the points whose index yields `true`, preserving order.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> GaussianCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> GaussianCloud {
        GaussianCloud {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            rotations: idx.iter().map(|&i| self.rotations[i]).collect(),
            log_scales: idx.iter().map(|&i| self.log_scales[i]).collect(),
            opacity_logits: idx.iter().map(|&i| self.opacity_logits[i]).collect(),
            sh: idx.iter().map(|&i| self.sh[i]).collect(),
            group: idx.iter().map(|&i| self.group[i]).collect(),
            person: idx.iter().map(|&i| self.person[i]).collect(),
        }
    }

    pub fn extend(&mut self, other: &GaussianCloud) {
        self.positions.extend_from_slice(&other.positions);
        self.rotations.extend_from_slice(&other.rotations);
        self.log_scales.extend_from_slice(&other.log_scales);
        self.opacity_logits.extend_from_slice(&other.opacity_logits);
        self.sh.extend_from_slice(&other.sh);
        self.group.extend_from_slice(&other.group);
        self.person.extend_from_slice(&other.person);
    }

    /// Applies a rigid map to positions and orientations in place.
    pub fn transform(&mut self, t: &RigidTransform) {
        let q = Quat::from_rotation(&t.rotation);
        for p in &mut self.positions {
            *p = t.apply(p);
        }
        for r in &mut self.rotations {
            *r = q.mul(r);
        }
    }
}

/// Head block (transformed) followed by the background block.
pub fn merge_scenes(
    head: &GaussianCloud,
    background: &GaussianCloud,
    head_transform: &RigidTransform,
) -> GaussianCloud {
    let mut out = GaussianCloud::with_capacity(head.len() + background.len());
    out.extend(head);
    out.transform(head_transform);
    out.extend(background);
    out
}
