//! Head-to-background alignment and least-squares rigid fitting.
//!
//! The head is rendered through its virtual camera `W2C₁` after the rigid
//! `x ↦ R(x − x_root) + x_root + t`; the background was captured with
//! `W2C₂`. We want the map `T_c` with `W2C₁(R x + t′) = W2C₂(T_c x)` for all
//! `x`. Writing `W2Cᵢ x = Rᵢ x + tᵢ` and matching the linear and constant
//! terms gives
//!
//! ```text
//! R_c = R₂ᵀ R₁ R
//! t_c = R₂ᵀ (R₁ t′ + t₁ − t₂),   t′ = t + (I − R) x_root
//! ```

use std::fs;
use std::path::Path;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{check_rotation, serde_vec3, Mat3, Quat, RigidTransform, Vec3};

/// Tolerance for agreement between the solutions of several view pairs.
pub const PAIR_AGREEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPair {
    pub w2c_head: RigidTransform,
    pub w2c_background: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentProblem {
    pub pairs: Vec<CameraPair>,
    pub head_rotation: Mat3,
    pub head_translation: Vec3,
    pub root_joint: Vec3,
}

/// Problem file (TOML). The first pair is given at top level; more may
/// follow as `[[extra_pairs]]`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    w2c_head: RigidTransform,
    w2c_background: RigidTransform,
    /// Quaternion `[w, x, y, z]`.
    head_rotation: Quat,
    #[serde(with = "serde_vec3")]
    head_translation: Vec3,
    #[serde(with = "serde_vec3")]
    root_joint: Vec3,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extra_pairs: Vec<CameraPair>,
}

impl AlignmentProblem {
    pub fn single(w2c_head: RigidTransform, w2c_background: RigidTransform, r: Mat3, t: Vec3, x_root: Vec3) -> Self {
        AlignmentProblem {
            pairs: vec![CameraPair {
                w2c_head,
                w2c_background,
            }],
            head_rotation: r,
            head_translation: t,
            root_joint: x_root,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::invalid("alignment problem has no camera pair"));
        }
        check_rotation(&self.head_rotation, "head_rotation")?;
        for p in &self.pairs {
            check_rotation(&p.w2c_head.rotation, "w2c_head")?;
            check_rotation(&p.w2c_background.rotation, "w2c_background")?;
        }
        let finite = self.head_translation.iter().chain(self.root_joint.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("head translation and root joint must be finite"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<AlignmentProblem> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ProblemFile =
            toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.message()))?;
        let mut pairs = vec![CameraPair {
            w2c_head: f.w2c_head,
            w2c_background: f.w2c_background,
        }];
        pairs.extend(f.extra_pairs);
        let p = AlignmentProblem {
            pairs,
            head_rotation: f.head_rotation.to_rotation()?,
            head_translation: f.head_translation,
            root_joint: f.root_joint,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let f = ProblemFile {
            w2c_head: self.pairs[0].w2c_head,
            w2c_background: self.pairs[0].w2c_background,
            head_rotation: Quat::from_rotation(&self.head_rotation),
            head_translation: self.head_translation,
            root_joint: self.root_joint,
            extra_pairs: self.pairs[1..].to_vec(),
        };
        let text = toml::to_string(&f).map_err(|e| Error::parse("alignment problem", e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `t′ = t + (I − R)·x_root`: the root-pivoted rigid as a plain `R x + t′`.
pub fn root_adjusted_translation(r: &Mat3, t: &Vec3, x_root: &Vec3) -> Vec3 {
    t + (Mat3::identity() - r) * x_root
}

fn solve_pair(pair: &CameraPair, r: &Mat3, t_prime: &Vec3) -> RigidTransform {
    let (r1, t1) = (&pair.w2c_head.rotation, &pair.w2c_head.translation);
    let (r2, t2) = (&pair.w2c_background.rotation, &pair.w2c_background.translation);
    let r2t = r2.transpose();
    RigidTransform {
        rotation: r2t * r1 * r,
        translation: r2t * (r1 * t_prime + t1 - t2),
    }
}

/// Closed-form `T_c`. With several camera pairs every pair must yield the
/// same transform (within [`PAIR_AGREEMENT_TOL`]).
pub fn solve_alignment(problem: &AlignmentProblem) -> Result<RigidTransform> {
    problem.validate()?;
    let t_prime = root_adjusted_translation(&problem.head_rotation, &problem.head_translation, &problem.root_joint);
    let first = solve_pair(&problem.pairs[0], &problem.head_rotation, &t_prime);
    for (i, pair) in problem.pairs.iter().enumerate().skip(1) {
        let other = solve_pair(pair, &problem.head_rotation, &t_prime);
        let dr = (other.rotation - first.rotation).abs().max();
        let dt = (other.translation - first.translation).abs().max();
        if dr > PAIR_AGREEMENT_TOL || dt > PAIR_AGREEMENT_TOL {
            return Err(Error::invalid(format!(
                "camera pair {i} disagrees with pair 0 (rotation Δ {dr:.3e}, translation Δ {dt:.3e})"
            )));
        }
    }
    Ok(first)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceFit {
    pub transform: RigidTransform,
    /// 1 unless the similarity mode was requested.
    pub scale: f64,
    pub rms: f64,
}

impl CorrespondenceFit {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.transform.rotation * x * self.scale + self.transform.translation
    }
}

/// Least-squares `dst ≈ s·R·src + t` (Kabsch/Umeyama); `s = 1` unless
/// `with_scale`.
pub fn rigid_from_correspondences(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<CorrespondenceFit> {
    if src.len() != dst.len() {
        return Err(Error::invalid(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    let m = src.len();
    if m < 3 {
        return Err(Error::Rank(format!("need at least 3 correspondences, got {m}")));
    }
    let mf = m as f64;
    let mu_s = src.iter().sum::<Vec3>() / mf;
    let mu_d = dst.iter().sum::<Vec3>() / mf;
    let mut cov = Mat3::zeros();
    let mut scatter = Mat3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let (a, b) = (s - mu_s, d - mu_d);
        cov += b * a.transpose();
        scatter += a * a.transpose();
    }
    cov /= mf;
    scatter /= mf;
    let eig = SymmetricEigen::new(scatter).eigenvalues;
    let mut ev: Vec<f64> = eig.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Rank("source points are collinear or coincident".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Rank("target points are collinear or coincident".into()));
    }
    let d = if (u.determinant() * v_t.determinant()) < 0.0 { -1.0 } else { 1.0 };
    let s_mat = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    let rotation = u * s_mat * v_t;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * s_mat[(i, i)]).sum();
        trace / ev.iter().sum::<f64>()
    } else {
        1.0
    };
    let translation = mu_d - rotation * mu_s * scale;
    let fit = CorrespondenceFit {
        transform: RigidTransform { rotation, translation },
        scale,
        rms: 0.0,
    };
    let sq: f64 = src.iter().zip(dst).map(|(s, d)| (fit.apply(s) - d).norm_squared()).sum();
    Ok(CorrespondenceFit { rms: (sq / mf).sqrt(), ..fit })
}

/// Reads `x y z` rows (whitespace or comma separated, `#` comments).
pub fn load_points(path: impl AsRef<Path>) -> Result<Vec<Vec3>> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pts = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(&what, format!("line {}: {e}", ln + 1)))?;
        if vals.len() != 3 {
            return Err(Error::parse(&what, format!("line {}: expected 3 numbers", ln + 1)));
        }
        pts.push(Vec3::new(vals[0], vals[1], vals[2]));
    }
    Ok(pts)
}

/// Writes a transform as a 4×4 row-major matrix, one row per line.
pub fn format_matrix4(t: &RigidTransform) -> String {
    t.to_matrix4()
        .iter()
        .map(|row| row.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::axis_angle_to_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    fn rand_rigid(rng: &mut ChaCha8Rng) -> RigidTransform {
        RigidTransform {
            rotation: axis_angle_to_matrix(&rand_vec(rng, 3.0)),
            translation: rand_vec(rng, 2.0),
        }
    }

    #[test]
    fn root_adjustment_cases() {
        let t = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(root_adjusted_translation(&Mat3::identity(), &t, &Vec3::new(4.0, 5.0, 6.0)), t);
        let r = axis_angle_to_matrix(&Vec3::new(0.3, 0.2, 0.1));
        assert_eq!(root_adjusted_translation(&r, &t, &Vec3::zeros()), t);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x_root = rand_vec(&mut rng, 1.0);
        let tp = root_adjusted_translation(&r, &t, &x_root);
        for _ in 0..100 {
            let x = rand_vec(&mut rng, 1.0);
            let a = r * x + tp;
            let b = r * (x - x_root) + x_root + t;
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn degenerate_and_cancelling_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_rigid(&mut rng);
        let p = AlignmentProblem::single(w, w, Mat3::identity(), Vec3::zeros(), rand_vec(&mut rng, 1.0));
        let tc = solve_alignment(&p).unwrap();
        assert!((tc.rotation - Mat3::identity()).abs().max() < 1e-12);
        assert!(tc.translation.norm() < 1e-12);

        let r = axis_angle_to_matrix(&Vec3::new(0.1, -0.5, 0.2));
        let (t, x_root) = (Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, -0.1, 0.02));
        let tc = solve_alignment(&AlignmentProblem::single(w, w, r, t, x_root)).unwrap();
        assert!((tc.rotation - r).abs().max() < 1e-12);
        assert!((tc.translation - root_adjusted_translation(&r, &t, &x_root)).norm() < 1e-12);
    }

    #[test]
    fn substitution_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (w1, w2) = (rand_rigid(&mut rng), rand_rigid(&mut rng));
            let r = axis_angle_to_matrix(&rand_vec(&mut rng, 3.0));
            let (t, x_root) = (rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 0.5));
            let tc = solve_alignment(&AlignmentProblem::single(w1, w2, r, t, x_root)).unwrap();
            let tp = root_adjusted_translation(&r, &t, &x_root);
            for _ in 0..20 {
                let x = rand_vec(&mut rng, 1.0);
                let lhs = w1.apply(&(r * x + tp));
                let rhs = w2.apply(&tc.apply(&x));
                assert!((lhs - rhs).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn multi_pair_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w1, w2) = (rand_rigid(&mut rng), rand_rigid(&mut rng));
        // the same physical rig seen from another viewpoint V: both cameras move by V
        let v = rand_rigid(&mut rng);
        let r = axis_angle_to_matrix(&Vec3::new(0.2, 0.1, 0.0));
        let mut p = AlignmentProblem::single(w1, w2, r, Vec3::new(0.1, 0.0, 0.0), Vec3::zeros());
        p.pairs.push(CameraPair {
            w2c_head: v.compose(&w1),
            w2c_background: v.compose(&w2),
        });
        let a = solve_alignment(&p).unwrap();
        let b = solve_alignment(&AlignmentProblem { pairs: p.pairs[..1].to_vec(), ..p.clone() }).unwrap();
        assert!((a.rotation - b.rotation).abs().max() < 1e-12);
        p.pairs[1].w2c_background.translation.x += 0.01;
        assert!(solve_alignment(&p).is_err());
    }

    #[test]
    fn correspondence_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src: Vec<Vec3> = (0..30).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let id = rigid_from_correspondences(&src, &src, false).unwrap();
        assert!((id.transform.rotation - Mat3::identity()).abs().max() < 1e-9);
        assert!(id.rms < 1e-12);

        let t = rand_rigid(&mut rng);
        let dst: Vec<Vec3> = src.iter().map(|x| t.apply(x)).collect();
        let fit = rigid_from_correspondences(&src, &dst, false).unwrap();
        assert!((fit.transform.rotation - t.rotation).abs().max() < 1e-9);
        assert!((fit.transform.translation - t.translation).norm() < 1e-9);
        assert!(fit.rms < 1e-9);

        let dst: Vec<Vec3> = src.iter().map(|x| t.rotation * x * 2.5 + t.translation).collect();
        let fit = rigid_from_correspondences(&src, &dst, true).unwrap();
        assert!((fit.scale - 2.5).abs() < 1e-9);
        assert!(fit.rms < 1e-9);
    }

    #[test]
    fn collinear_is_rank_error() {
        let src: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(rigid_from_correspondences(&src, &src, false), Err(Error::Rank(_))));
        assert!(matches!(rigid_from_correspondences(&src[..2], &src[..2], false), Err(Error::Rank(_))));
    }

    #[test]
    fn problem_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = AlignmentProblem::single(
            rand_rigid(&mut rng),
            rand_rigid(&mut rng),
            axis_angle_to_matrix(&Vec3::new(0.1, 0.2, 0.3)),
            Vec3::new(0.0, 0.1, 0.2),
            Vec3::new(0.0, -0.05, 0.0),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        p.save(&path).unwrap();
        let q = AlignmentProblem::load(&path).unwrap();
        assert!((q.head_rotation - p.head_rotation).abs().max() < 1e-12);
        assert_eq!(q.pairs, p.pairs);
    }
}
