//! Parametric head: blendshape deformation, joint regression and linear
//! blend skinning, plus the posed-mesh triangle frames that drive bound
//! Gaussians.

mod asset;
mod depth;
mod synthetic;

pub use asset::{load_head_asset, save_head_asset};
pub use depth::rasterize_mesh_depth;
pub use synthetic::make_synthetic_head;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, axis_angle_to_matrix, Mat3, Vec3};

const SUM_TOL: f64 = 1e-5;

/// Template mesh, linear bases, joint regressor and skinning weights.
///
/// Bases are stored row-major as `(3·V) × K` (row `3·v + axis`). The pose
/// basis has `9·(J − 1)` columns, one block of nine per non-root joint in
/// index order.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel {
    pub template_vertices: Vec<[f32; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub n_shape: usize,
    pub n_expression: usize,
    pub shape_basis: Vec<f32>,
    pub expression_basis: Vec<f32>,
    pub pose_basis: Vec<f32>,
    /// `J × V`, rows sum to one.
    pub joint_regressor: Vec<f32>,
    /// `V × J`, rows sum to one, non-negative.
    pub skinning_weights: Vec<f32>,
    /// Parent per joint; the root has `-1`.
    pub kinematic_parents: Vec<i32>,
    pub root_joint_index: usize,
}

impl HeadModel {
    pub fn n_vertices(&self) -> usize {
        self.template_vertices.len()
    }

    pub fn n_joints(&self) -> usize {
        self.kinematic_parents.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_pose_features(&self) -> usize {
        9 * self.n_joints().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.n_vertices();
        let j = self.n_joints();
        if v == 0 {
            return Err(Error::invariant("template_vertices", "mesh has no vertices"));
        }
        if j == 0 {
            return Err(Error::invariant("kinematic_parents", "model has no joints"));
        }
        let finite = |name: &str, data: &[f32]| -> Result<()> {
            if data.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::invariant(name, "contains non-finite values"))
            }
        };
        finite("template_vertices", self.template_vertices.as_flattened())?;
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&k| k as usize >= v) {
                return Err(Error::invariant(
                    "faces",
                    format!("face {i} references a vertex outside 0..{v}"),
                ));
            }
        }
        let check_len = |name: &str, len: usize, want: usize| -> Result<()> {
            if len == want {
                Ok(())
            } else {
                Err(Error::invariant(name, format!("expected {want} values, found {len}")))
            }
        };
        check_len("shape_basis", self.shape_basis.len(), 3 * v * self.n_shape)?;
        check_len(
            "expression_basis",
            self.expression_basis.len(),
            3 * v * self.n_expression,
        )?;
        check_len("pose_basis", self.pose_basis.len(), 3 * v * self.n_pose_features())?;
        check_len("joint_regressor", self.joint_regressor.len(), j * v)?;
        check_len("skinning_weights", self.skinning_weights.len(), v * j)?;
        finite("shape_basis", &self.shape_basis)?;
        finite("expression_basis", &self.expression_basis)?;
        finite("pose_basis", &self.pose_basis)?;
        finite("joint_regressor", &self.joint_regressor)?;
        finite("skinning_weights", &self.skinning_weights)?;

        for (r, row) in self.joint_regressor.chunks(v).enumerate() {
            let sum: f64 = row.iter().map(|&x| x as f64).sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::invariant(
                    "joint_regressor",
                    format!("row {r} sums to {sum}, expected 1"),
                ));
            }
        }
        for (r, row) in self.skinning_weights.chunks(j).enumerate() {
            if row.iter().any(|&w| w < 0.0) {
                return Err(Error::invariant(
                    "skinning_weights",
                    format!("row {r} has a negative weight"),
                ));
            }
            let sum: f64 = row.iter().map(|&x| x as f64).sum();
            if (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::invariant(
                    "skinning_weights",
                    format!("row {r} sums to {sum}, expected 1"),
                ));
            }
        }
        if self.root_joint_index >= j {
            return Err(Error::invariant(
                "root_joint_index",
                format!("{} is not a joint index (J = {j})", self.root_joint_index),
            ));
        }
        self.joint_order().map(|_| ())
    }

    /// Joints ordered so every parent precedes its children.
    pub fn joint_order(&self) -> Result<Vec<usize>> {
        let j = self.n_joints();
        let mut children = vec![Vec::new(); j];
        for (k, &p) in self.kinematic_parents.iter().enumerate() {
            if k == self.root_joint_index {
                if p != -1 {
                    return Err(Error::invariant(
                        "kinematic_parents",
                        format!("root joint {k} must have parent -1, found {p}"),
                    ));
                }
                continue;
            }
            if p < 0 || p as usize >= j || p as usize == k {
                return Err(Error::invariant(
                    "kinematic_parents",
                    format!("joint {k} has invalid parent {p}"),
                ));
            }
            children[p as usize].push(k);
        }
        let mut order = Vec::with_capacity(j);
        let mut stack = vec![self.root_joint_index];
        while let Some(k) = stack.pop() {
            order.push(k);
            stack.extend(children[k].iter().rev());
        }
        if order.len() != j {
            return Err(Error::invariant(
                "kinematic_parents",
                "parent graph is not a tree rooted at root_joint_index",
            ));
        }
        Ok(order)
    }

    fn template(&self, v: usize) -> Vec3 {
        let t = self.template_vertices[v];
        Vec3::new(t[0] as f64, t[1] as f64, t[2] as f64)
    }

    /// `T̄ + S·β` per vertex.
    pub fn shaped_template(&self, shape: &[f64]) -> Result<Vec<Vec3>> {
        if shape.len() != self.n_shape {
            return Err(Error::invalid(format!(
                "shape vector has {} entries, model expects {}",
                shape.len(),
                self.n_shape
            )));
        }
        Ok((0..self.n_vertices())
            .map(|v| self.template(v) + basis_offset(&self.shape_basis, self.n_shape, v, shape))
            .collect())
    }

    /// Joint rotations for non-root joints, flattened as `(R − I)` rows.
    pub fn pose_features(&self, pose: &[[f64; 3]]) -> Result<Vec<f64>> {
        if pose.len() != self.n_joints() {
            return Err(Error::invalid(format!(
                "pose has {} joints, model expects {}",
                pose.len(),
                self.n_joints()
            )));
        }
        let mut out = Vec::with_capacity(self.n_pose_features());
        for (j, aa) in pose.iter().enumerate() {
            if j == self.root_joint_index {
                continue;
            }
            let r = axis_angle_to_matrix(&Vec3::from(*aa)) - Mat3::identity();
            for row in 0..3 {
                for col in 0..3 {
                    out.push(r[(row, col)]);
                }
            }
        }
        Ok(out)
    }
}

fn basis_offset(basis: &[f32], k: usize, v: usize, coeffs: &[f64]) -> Vec3 {
    let mut out = Vec3::zeros();
    if k == 0 {
        return out;
    }
    for axis in 0..3 {
        let row = &basis[(3 * v + axis) * k..(3 * v + axis + 1) * k];
        out[axis] = row.iter().zip(coeffs).map(|(&b, &c)| b as f64 * c).sum();
    }
    out
}

/// Shape, expression and pose parameters plus the global rigid `(R, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    #[serde(default)]
    pub shape: Vec<f64>,
    #[serde(default)]
    pub expression: Vec<f64>,
    /// Axis-angle per joint.
    #[serde(default)]
    pub pose: Vec<[f64; 3]>,
    #[serde(default = "Mat3::identity", with = "math::serde_mat3")]
    pub global_rotation: Mat3,
    #[serde(default = "Vec3::zeros", with = "math::serde_vec3")]
    pub global_translation: Vec3,
}

impl HeadParams {
    pub fn neutral(model: &HeadModel) -> Self {
        HeadParams {
            shape: vec![0.0; model.n_shape],
            expression: vec![0.0; model.n_expression],
            pose: vec![[0.0; 3]; model.n_joints()],
            global_rotation: Mat3::identity(),
            global_translation: Vec3::zeros(),
        }
    }

    /// Fills empty vectors with zeros, then checks every dimension.
    pub fn conform(mut self, model: &HeadModel) -> Result<Self> {
        if self.shape.is_empty() {
            self.shape = vec![0.0; model.n_shape];
        }
        if self.expression.is_empty() {
            self.expression = vec![0.0; model.n_expression];
        }
        if self.pose.is_empty() {
            self.pose = vec![[0.0; 3]; model.n_joints()];
        }
        self.validate(model)?;
        Ok(self)
    }

    pub fn validate(&self, model: &HeadModel) -> Result<()> {
        let dims = [
            ("shape", self.shape.len(), model.n_shape),
            ("expression", self.expression.len(), model.n_expression),
            ("pose", self.pose.len(), model.n_joints()),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::invalid(format!(
                    "{name} has {got} entries, model expects {want}"
                )));
            }
        }
        math::check_rotation(&self.global_rotation, "global_rotation")?;
        Ok(())
    }
}

/// Posed vertices with per-face orientation frames and barycenters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub frames: Vec<Mat3>,
    pub barycenters: Vec<Vec3>,
}

impl PosedMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Self {
        let (frames, barycenters) = faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|k| vertices[k as usize]);
                (face_frame(&a, &b, &c), (a + b + c) / 3.0)
            })
            .unzip();
        PosedMesh {
            vertices,
            faces,
            frames,
            barycenters,
        }
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|k| self.vertices[k as usize])
    }

    pub fn mean_edge_length(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        ((b - a).norm() + (c - b).norm() + (a - c).norm()) / 3.0
    }

    pub fn area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }
}

/// Column 1: unit edge `v1 − v0`; column 3: unit normal; column 2: `c3 × c1`.
/// Degenerate triangles get the identity frame.
pub fn face_frame(a: &Vec3, b: &Vec3, c: &Vec3) -> Mat3 {
    let e1 = b - a;
    let n = e1.cross(&(c - a));
    let (Some(x), Some(z)) = (e1.try_normalize(1e-15), n.try_normalize(1e-30)) else {
        return Mat3::identity();
    };
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}

/// `T̄ + S·β + E·ψ + P·p(θ)`.
pub fn deform_canonical(model: &HeadModel, params: &HeadParams) -> Result<Vec<Vec3>> {
    params.validate(model)?;
    let pose_feat = model.pose_features(&params.pose)?;
    let shaped = model.shaped_template(&params.shape)?;
    let np = model.n_pose_features();
    Ok(shaped
        .into_iter()
        .enumerate()
        .map(|(v, base)| {
            base + basis_offset(&model.expression_basis, model.n_expression, v, &params.expression)
                + basis_offset(&model.pose_basis, np, v, &pose_feat)
        })
        .collect())
}

/// `joint_regressor × (T̄ + S·β)`.
pub fn regress_joints(model: &HeadModel, shape: &[f64]) -> Result<Vec<Vec3>> {
    let shaped = model.shaped_template(shape)?;
    let v = model.n_vertices();
    Ok(model
        .joint_regressor
        .chunks(v)
        .map(|row| {
            row.iter()
                .zip(&shaped)
                .fold(Vec3::zeros(), |acc, (&w, p)| acc + p * w as f64)
        })
        .collect())
}

/// Per-joint affine maps `x ↦ A·x + b` from rest pose to posed space.
fn relative_joint_transforms(
    model: &HeadModel,
    joints: &[Vec3],
    pose: &[[f64; 3]],
) -> Result<Vec<(Mat3, Vec3)>> {
    let order = model.joint_order()?;
    let mut world: Vec<(Mat3, Vec3)> = vec![(Mat3::identity(), Vec3::zeros()); joints.len()];
    for &j in &order {
        let r = axis_angle_to_matrix(&Vec3::from(pose[j]));
        world[j] = if j == model.root_joint_index {
            (r, joints[j])
        } else {
            let p = model.kinematic_parents[j] as usize;
            let (pr, pt) = world[p];
            (pr * r, pr * (joints[j] - joints[p]) + pt)
        };
    }
    Ok(world
        .into_iter()
        .zip(joints)
        .map(|((r, t), jp)| (r, t - r * jp))
        .collect())
}

/// Linear blend skinning followed by the global rigid about the root joint.
pub fn skin(model: &HeadModel, canonical: &[Vec3], params: &HeadParams) -> Result<PosedMesh> {
    params.validate(model)?;
    if canonical.len() != model.n_vertices() {
        return Err(Error::invalid(format!(
            "canonical mesh has {} vertices, model expects {}",
            canonical.len(),
            model.n_vertices()
        )));
    }
    let joints = regress_joints(model, &params.shape)?;
    let transforms = relative_joint_transforms(model, &joints, &params.pose)?;
    let root = joints[model.root_joint_index];
    let (gr, gt) = (params.global_rotation, params.global_translation);
    let nj = model.n_joints();
    let vertices = canonical
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let weights = &model.skinning_weights[v * nj..(v + 1) * nj];
            let mut a = Mat3::zeros();
            let mut b = Vec3::zeros();
            for (&w, (r, t)) in weights.iter().zip(&transforms) {
                if w != 0.0 {
                    a += r * w as f64;
                    b += t * w as f64;
                }
            }
            let posed = a * x + b;
            gr * (posed - root) + root + gt
        })
        .collect();
    Ok(PosedMesh::new(vertices, model.faces.clone()))
}

/// Convenience: deform then skin.
pub fn pose_mesh(model: &HeadModel, params: &HeadParams) -> Result<PosedMesh> {
    let canonical = deform_canonical(model, params)?;
    skin(model, &canonical, params)
}
