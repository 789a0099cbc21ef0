use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gaussian, GaussianCloud, Group};
use crate::error::{Error, Result};
use crate::head::PosedMesh;
use crate::math::{logit, Quat, ShCoefficients, Vec3};

/// Scale given to Gaussians hosted by zero-area triangles.
const DEGENERATE_SCALE: f64 = 1e-6;

/// Per-Gaussian attachment to a host triangle, in the triangle's local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleBinding {
    pub triangles: Vec<u32>,
    pub local_positions: Vec<Vec3>,
    pub local_rotations: Vec<Quat>,
    pub local_log_scales: Vec<Vec3>,
    pub global_scale: f64,
    /// Face count of the mesh the binding was built against.
    pub face_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BindOptions {
    pub gaussians_per_triangle: usize,
    pub global_scale: f64,
    pub initial_opacity: f64,
    pub initial_color: [f64; 3],
}

impl Default for BindOptions {
    fn default() -> Self {
        BindOptions {
            gaussians_per_triangle: 1,
            global_scale: 1.0,
            initial_opacity: 0.9,
            initial_color: [0.5; 3],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BindResult {
    pub cloud: GaussianCloud,
    pub binding: TriangleBinding,
    /// Number of zero-area host triangles that received the fallback scale.
    pub degenerate_triangles: usize,
}

/// World-space attributes produced by [`TriangleBinding::drive`].
#[derive(Debug, Clone, PartialEq)]
pub struct DrivenAttributes {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub log_scales: Vec<Vec3>,
}

impl DrivenAttributes {
    /// Writes the geometry into the first `len()` entries of `cloud`.
    pub fn apply_to(&self, cloud: &mut GaussianCloud) -> Result<()> {
        let n = self.positions.len();
        if cloud.len() < n {
            return Err(Error::invalid(format!(
                "cloud has {} Gaussians but the binding drives {n}",
                cloud.len()
            )));
        }
        cloud.positions[..n].copy_from_slice(&self.positions);
        cloud.rotations[..n].copy_from_slice(&self.rotations);
        cloud.log_scales[..n].copy_from_slice(&self.log_scales);
        Ok(())
    }
}

pub fn bind_to_mesh(mesh: &PosedMesh, gaussians_per_triangle: usize) -> Result<BindResult> {
    bind_to_mesh_with(
        mesh,
        &BindOptions {
            gaussians_per_triangle,
            ..BindOptions::default()
        },
    )
}

/// Hosts `gaussians_per_triangle` Gaussians at every triangle's barycenter.
pub fn bind_to_mesh_with(mesh: &PosedMesh, opts: &BindOptions) -> Result<BindResult> {
    if opts.gaussians_per_triangle == 0 {
        return Err(Error::invalid("gaussians_per_triangle must be positive"));
    }
    if !(opts.global_scale > 0.0 && opts.global_scale.is_finite()) {
        return Err(Error::invalid("global scale must be positive"));
    }
    if !(opts.initial_opacity > 0.0 && opts.initial_opacity < 1.0) {
        return Err(Error::invalid("initial opacity must lie in (0, 1)"));
    }
    let n = mesh.faces.len() * opts.gaussians_per_triangle;
    let mut binding = TriangleBinding {
        triangles: Vec::with_capacity(n),
        local_positions: vec![Vec3::zeros(); n],
        local_rotations: vec![Quat::IDENTITY; n],
        local_log_scales: Vec::with_capacity(n),
        global_scale: opts.global_scale,
        face_count: mesh.faces.len(),
    };
    let mut degenerate = 0;
    for f in 0..mesh.faces.len() {
        let edge = mesh.mean_edge_length(f);
        let size = if mesh.area(f) > 1e-14 && edge > 0.0 {
            0.5 * edge
        } else {
            degenerate += 1;
            DEGENERATE_SCALE
        };
        for _ in 0..opts.gaussians_per_triangle {
            binding.triangles.push(f as u32);
            binding.local_log_scales.push(Vec3::repeat(size.ln()));
        }
    }

    let driven = binding.drive(mesh)?;
    let sh = ShCoefficients::from_dc(ShCoefficients::dc_for_color(opts.initial_color));
    let mut cloud = GaussianCloud::with_capacity(n);
    for i in 0..n {
        cloud.push(Gaussian {
            position: driven.positions[i],
            rotation: driven.rotations[i],
            log_scale: driven.log_scales[i],
            opacity_logit: logit(opts.initial_opacity),
            sh,
            group: Group::Head,
        });
    }
    Ok(BindResult {
        cloud,
        binding,
        degenerate_triangles: degenerate,
    })
}

impl TriangleBinding {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for (name, len) in [
            ("local_positions", self.local_positions.len()),
            ("local_rotations", self.local_rotations.len()),
            ("local_log_scales", self.local_log_scales.len()),
        ] {
            if len != n {
                return Err(Error::invariant(name, format!("length {len}, expected {n}")));
            }
        }
        if !(self.global_scale > 0.0 && self.global_scale.is_finite()) {
            return Err(Error::invariant("global_scale", "must be positive"));
        }
        if let Some(t) = self.triangles.iter().find(|&&t| t as usize >= self.face_count) {
            return Err(Error::invariant(
                "triangles",
                format!("index {t} out of range for {} faces", self.face_count),
            ));
        }
        Ok(())
    }

    /// Maps local attributes through each host triangle's current frame:
    /// `q′ = q_frame · q`, `μ′ = k·R′·μ + T′`, `log s′ = log k + log s`.
    pub fn drive(&self, mesh: &PosedMesh) -> Result<DrivenAttributes> {
        if mesh.faces.len() != self.face_count {
            return Err(Error::invalid(format!(
                "mesh has {} faces but the binding was built for {}",
                mesh.faces.len(),
                self.face_count
            )));
        }
        let k = self.global_scale;
        let log_k = k.ln();
        let frame_quats: Vec<Quat> = mesh.frames.iter().map(Quat::from_rotation).collect();
        let mut out = DrivenAttributes {
            positions: Vec::with_capacity(self.len()),
            rotations: Vec::with_capacity(self.len()),
            log_scales: Vec::with_capacity(self.len()),
        };
        for i in 0..self.len() {
            let f = self.triangles[i] as usize;
            let r = &mesh.frames[f];
            out.positions.push(r * self.local_positions[i] * k + mesh.barycenters[f]);
            out.rotations.push(frame_quats[f].mul(&self.local_rotations[i]));
            out.log_scales.push(self.local_log_scales[i].add_scalar(log_k));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = BindingFile {
            global_scale: self.global_scale,
            face_count: self.face_count,
            triangles: self.triangles.clone(),
            local_positions: self.local_positions.iter().map(|v| (*v).into()).collect(),
            local_rotations: self.local_rotations.clone(),
            local_log_scales: self.local_log_scales.iter().map(|v| (*v).into()).collect(),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::parse("binding", e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TriangleBinding> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: BindingFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        let b = TriangleBinding {
            triangles: file.triangles,
            local_positions: file.local_positions.into_iter().map(Vec3::from).collect(),
            local_rotations: file.local_rotations,
            local_log_scales: file.local_log_scales.into_iter().map(Vec3::from).collect(),
            global_scale: file.global_scale,
            face_count: file.face_count,
        };
        b.validate()?;
        Ok(b)
    }
}

#[derive(Serialize, Deserialize)]
struct BindingFile {
    global_scale: f64,
    face_count: usize,
    triangles: Vec<u32>,
    local_positions: Vec<[f64; 3]>,
    local_rotations: Vec<Quat>,
    local_log_scales: Vec<[f64; 3]>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{make_synthetic_head, pose_mesh, HeadParams};
    use crate::math::{axis_angle_to_matrix, Mat3};

    fn mesh() -> PosedMesh {
        let m = make_synthetic_head(3, 42, 3, 2, 2).unwrap();
        pose_mesh(&m, &HeadParams::neutral(&m)).unwrap()
    }

    #[test]
    fn one_per_triangle_sits_on_barycenters() {
        let mesh = mesh();
        let r = bind_to_mesh(&mesh, 1).unwrap();
        assert_eq!(r.cloud.len(), mesh.faces.len());
        assert_eq!(r.degenerate_triangles, 0);
        for (p, b) in r.cloud.positions.iter().zip(&mesh.barycenters) {
            assert_eq!(p, b);
        }
        assert!(r.cloud.group.iter().all(|&g| g == Group::Head));
        assert_eq!(bind_to_mesh(&mesh, 3).unwrap().cloud.len(), 3 * mesh.faces.len());
    }

    #[test]
    fn drive_with_binding_mesh_is_identity() {
        let mesh = mesh();
        let mut r = bind_to_mesh(&mesh, 2).unwrap();
        // non-trivial local attributes
        for (i, p) in r.binding.local_positions.iter_mut().enumerate() {
            *p = Vec3::new(0.01 * i as f64, -0.02, 0.005);
        }
        r.binding.local_rotations[0] = Quat::from_axis_angle(&Vec3::new(0.3, 0.1, -0.2));
        let a = r.binding.drive(&mesh).unwrap();
        let b = r.binding.drive(&mesh).unwrap();
        assert_eq!(a, b);
        // world attributes recomputed by hand
        for i in 0..r.binding.len() {
            let f = r.binding.triangles[i] as usize;
            let expect = mesh.frames[f] * r.binding.local_positions[i] + mesh.barycenters[f];
            assert!((a.positions[i] - expect).norm() < 1e-7);
        }
    }

    #[test]
    fn doubling_k_doubles_offsets_and_scales() {
        let mesh = mesh();
        let mut b = bind_to_mesh(&mesh, 1).unwrap().binding;
        b.local_positions.iter_mut().for_each(|p| *p = Vec3::new(0.01, 0.02, 0.03));
        let a1 = b.drive(&mesh).unwrap();
        b.global_scale = 2.0;
        let a2 = b.drive(&mesh).unwrap();
        for i in 0..b.len() {
            let bc = mesh.barycenters[b.triangles[i] as usize];
            assert!(((a2.positions[i] - bc) - 2.0 * (a1.positions[i] - bc)).norm() < 1e-12);
            let ds = a2.log_scales[i].map(f64::exp) - 2.0 * a1.log_scales[i].map(f64::exp);
            assert!(ds.norm() < 1e-12);
        }
    }

    #[test]
    fn rigid_mesh_motion_moves_gaussians_rigidly() {
        let mesh = mesh();
        let mut b = bind_to_mesh(&mesh, 1).unwrap().binding;
        b.local_positions.iter_mut().for_each(|p| *p = Vec3::new(0.01, -0.02, 0.03));
        let r = axis_angle_to_matrix(&Vec3::new(0.7, -0.4, 1.3));
        let t = Vec3::new(0.2, 0.1, -0.5);
        let moved = PosedMesh::new(mesh.vertices.iter().map(|v| r * v + t).collect(), mesh.faces.clone());
        let a = b.drive(&mesh).unwrap();
        let c = b.drive(&moved).unwrap();
        for i in 0..b.len() {
            assert!((c.positions[i] - (r * a.positions[i] + t)).norm() < 1e-6);
            let ra = a.rotations[i].to_rotation().unwrap();
            let rc: Mat3 = c.rotations[i].to_rotation().unwrap();
            assert!((rc - r * ra).norm() < 1e-6);
            assert!((c.log_scales[i] - a.log_scales[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn topology_mismatch_rejected() {
        let mesh = mesh();
        let b = bind_to_mesh(&mesh, 1).unwrap().binding;
        let smaller = PosedMesh::new(mesh.vertices.clone(), mesh.faces[1..].to_vec());
        assert!(matches!(b.drive(&smaller), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn degenerate_triangles_counted() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::x() * 2.0];
        let mesh = PosedMesh::new(v, vec![[0, 1, 2], [0, 1, 3]]);
        let r = bind_to_mesh(&mesh, 1).unwrap();
        assert_eq!(r.degenerate_triangles, 1);
        assert!((r.cloud.log_scales[1].x - DEGENERATE_SCALE.ln()).abs() < 1e-12);
        r.cloud.validate().unwrap();
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("binding.json");
        let mut b = bind_to_mesh(&mesh(), 2).unwrap().binding;
        b.local_positions[3] = Vec3::new(0.1, 1.0 / 3.0, -2e-9);
        b.save(&p).unwrap();
        assert_eq!(TriangleBinding::load(&p).unwrap(), b);
    }
}
