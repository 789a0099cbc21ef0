use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HeadModel;
use crate::error::{Error, Result};
use crate::math::Vec3;

const HEAD_RADII: [f64; 3] = [0.078, 0.105, 0.092];

/// Deterministic head-like fixture: a deformed icosphere with a
/// tree-structured skeleton.
///
/// The icosphere is refined until it has at least `n_vertices` vertices
/// (12, 42, 162, 642, 2562, ...), so the result may have more than asked.
/// Model space is +y up, +z toward the face; the root joint sits at the
/// base of the head.
pub fn make_synthetic_head(
    seed: u64,
    n_vertices: usize,
    n_joints: usize,
    n_shape: usize,
    n_expression: usize,
) -> Result<HeadModel> {
    if n_vertices == 0 || n_joints == 0 {
        return Err(Error::invalid("synthetic head needs at least one vertex and one joint"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dirs, faces) = icosphere(n_vertices);
    let v = dirs.len();

    let waves: Vec<(Vec3, f64, f64)> = (0..4)
        .map(|_| (random_unit(&mut rng), rng.random_range(1.0..3.0), rng.random_range(0.0..6.3)))
        .collect();
    let positions: Vec<Vec3> = dirs
        .iter()
        .map(|d| {
            let bump: f64 = waves.iter().map(|(a, f, ph)| (f * a.dot(d) + ph).sin()).sum();
            let r = 1.0 + 0.02 * bump;
            Vec3::new(d.x * HEAD_RADII[0], d.y * HEAD_RADII[1], d.z * HEAD_RADII[2]) * r
        })
        .collect();
    let template_vertices: Vec<[f32; 3]> = positions
        .iter()
        .map(|p| [p.x as f32, p.y as f32, p.z as f32])
        .collect();
    let rest: Vec<Vec3> = template_vertices
        .iter()
        .map(|t| Vec3::new(t[0] as f64, t[1] as f64, t[2] as f64))
        .collect();

    // Root regresses from the lowest vertices; every other joint from the
    // handful of vertices nearest a random anchor.
    let mut kinematic_parents = vec![-1i32; n_joints];
    let mut joint_regressor = vec![0.0f32; n_joints * v];
    let mut joint_pos = Vec::with_capacity(n_joints);
    let k_near = v.min(6);
    for j in 0..n_joints {
        let anchor = if j == 0 {
            Vec3::new(0.0, -2.0, 0.0)
        } else {
            kinematic_parents[j] = rng.random_range(0..j) as i32;
            rest[rng.random_range(0..v)]
        };
        let mut idx: Vec<usize> = (0..v).collect();
        idx.sort_by(|&a, &b| {
            let (da, db) = ((rest[a] - anchor).norm(), (rest[b] - anchor).norm());
            da.total_cmp(&db).then(a.cmp(&b))
        });
        let count = if j == 0 { v.min(v.div_ceil(10).max(k_near)) } else { k_near };
        let w = 1.0 / count as f64;
        let mut pos = Vec3::zeros();
        for &i in &idx[..count] {
            joint_regressor[j * v + i] = w as f32;
            pos += rest[i] * w;
        }
        joint_pos.push(pos);
    }
    fix_row_sums(&mut joint_regressor, v);

    let sigma = 0.06;
    let mut skinning_weights = vec![0.0f32; v * n_joints];
    for (i, p) in rest.iter().enumerate() {
        let raw: Vec<f64> = joint_pos
            .iter()
            .map(|jp| (-(p - jp).norm_squared() / (2.0 * sigma * sigma)).exp() + 1e-3)
            .collect();
        let total: f64 = raw.iter().sum();
        for (j, r) in raw.iter().enumerate() {
            skinning_weights[i * n_joints + j] = (r / total) as f32;
        }
    }
    fix_row_sums(&mut skinning_weights, n_joints);

    let shape_basis = smooth_basis(&mut rng, &dirs, n_shape, 0.01, |_| 1.0);
    // expressions act on the lower front of the face
    let expression_basis = smooth_basis(&mut rng, &dirs, n_expression, 0.006, |d| {
        (d.z.max(0.0) * (0.5 - d.y).clamp(0.0, 1.0)).powi(2)
    });
    let n_pose = 9 * (n_joints - 1);
    let pose_basis = smooth_basis(&mut rng, &dirs, n_pose, 0.0015, |_| 1.0);

    let model = HeadModel {
        template_vertices,
        faces,
        n_shape,
        n_expression,
        shape_basis,
        expression_basis,
        pose_basis,
        joint_regressor,
        skinning_weights,
        kinematic_parents,
        root_joint_index: 0,
    };
    model.validate()?;
    Ok(model)
}

/// Nudges the largest entry of each row so the `f32` row sums to one.
fn fix_row_sums(data: &mut [f32], width: usize) {
    for row in data.chunks_mut(width) {
        let sum: f32 = row.iter().sum();
        if let Some(m) = row.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *m += 1.0 - sum;
        }
    }
}

fn smooth_basis(
    rng: &mut ChaCha8Rng,
    dirs: &[Vec3],
    k: usize,
    amplitude: f64,
    falloff: impl Fn(&Vec3) -> f64,
) -> Vec<f32> {
    let v = dirs.len();
    let mut out = vec![0.0f32; 3 * v * k];
    for c in 0..k {
        let axis = random_unit(rng);
        let disp = random_unit(rng);
        let freq = rng.random_range(0.5..2.5);
        let phase = rng.random_range(0.0..6.3);
        for (i, d) in dirs.iter().enumerate() {
            let s = amplitude * falloff(d) * (freq * axis.dot(d) + phase).sin();
            let vec = d * (0.7 * s) + disp * (0.3 * s);
            for a in 0..3 {
                out[(3 * i + a) * k + c] = vec[a] as f32;
            }
        }
    }
    out
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let p = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = p.norm();
        if n > 1e-3 && n <= 1.0 {
            return p / n;
        }
    }
}

/// Unit icosphere with at least `min_vertices` vertices.
fn icosphere(min_vertices: usize) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::from(*p).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    while verts.len() < min_vertices {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = make_synthetic_head(7, 100, 4, 3, 3).unwrap();
        let b = make_synthetic_head(7, 100, 4, 3, 3).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_head(8, 100, 4, 3, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn icosphere_sizes() {
        assert_eq!(icosphere(1).0.len(), 12);
        assert_eq!(icosphere(13).0.len(), 42);
        let (v, f) = icosphere(600);
        assert_eq!(v.len(), 642);
        assert_eq!(f.len(), 1280);
    }

    #[test]
    fn outward_winding() {
        let (v, f) = icosphere(42);
        for [a, b, c] in f {
            let (a, b, c) = (v[a as usize], v[b as usize], v[c as usize]);
            let n = (b - a).cross(&(c - a));
            assert!(n.dot(&(a + b + c)) > 0.0);
        }
    }

    #[test]
    fn rejects_empty() {
        assert!(make_synthetic_head(1, 0, 1, 0, 0).is_err());
        assert!(make_synthetic_head(1, 10, 0, 0, 0).is_err());
    }
}
