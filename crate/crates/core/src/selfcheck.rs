//! Built-in property checks and a renderer benchmark, run by `headsplat
//! selftest`. Each check compares a fast path against a brute-force or
//! closed-form oracle.

use std::time::Instant;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{root_adjusted_translation, solve_alignment, AlignmentProblem};
use crate::camera::CameraRig;
use crate::error::Result;
use crate::head::{deform_canonical, make_synthetic_head, pose_mesh, HeadParams};
use crate::imageio::FloatImage;
use crate::math::{axis_angle_to_matrix, logit, Quat, RigidTransform, ShCoefficients, Vec3, SH_COEFFS};
use crate::raster::{
    build_covariance, reference_pixel, render, render_backward, render_reference, render_with_state, RenderOptions,
};
use crate::scene::{bind_to_mesh, load_splat_file, save_splat_file, Gaussian, GaussianCloud, Group};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Centered pinhole at the origin looking down +z.
pub fn test_camera(w: u32, h: u32) -> CameraRig {
    CameraRig {
        width: w,
        height: h,
        fx: w as f64,
        fy: w as f64,
        cx: (w as f64 - 1.0) / 2.0,
        cy: (h as f64 - 1.0) / 2.0,
        world_to_camera: RigidTransform::IDENTITY,
        near: 0.01,
        far: 100.0,
    }
}

/// Random Gaussians in front of [`test_camera`]; `scale` sets their size
/// (log-scales drawn around `ln(scale)`).
pub fn random_cloud(seed: u64, n: usize, scale: f64) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = GaussianCloud::with_capacity(n);
    let ls = scale.ln();
    for _ in 0..n {
        let z = rng.random_range(1.0..4.0);
        let mut sh = ShCoefficients::default();
        for k in 0..SH_COEFFS {
            let amp = if k == 0 { 0.8 } else { 0.3 };
            sh.0[k] = [0; 3].map(|_| rng.random_range(-amp..amp));
        }
        c.push(Gaussian {
            position: Vec3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.6..0.6) * z, z),
            rotation: Quat::new(
                rng.random_range(0.2..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
            log_scale: Vec3::new(
                ls + rng.random_range(-1.0..1.0),
                ls + rng.random_range(-1.0..1.0),
                ls + rng.random_range(-1.0..1.0),
            ),
            opacity_logit: rng.random_range(-2.0..4.0),
            sh,
            group: if rng.random_bool(0.4) { Group::Head } else { Group::Background },
        });
    }
    c
}

fn max_abs_diff(a: &FloatImage, b: &FloatImage) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn tiled_matches_reference(scenes: usize) -> CheckResult {
    check("tiled renderer equals brute-force reference", || {
        let opts = RenderOptions {
            background: [0.2, 0.1, 0.3],
            ..Default::default()
        };
        let cam = test_camera(64, 64);
        let mut worst = 0.0f64;
        for s in 0..scenes as u64 {
            let c = random_cloud(1000 + s, 50 + (s as usize * 37) % 450, 0.05);
            let d = max_abs_diff(&render(&c, &cam, &opts)?.color, &render_reference(&c, &cam, &opts)?.color);
            worst = worst.max(d);
        }
        Ok((worst < 1e-5, format!("{scenes} scenes, max |Δ| {worst:.2e}")))
    })
}

pub fn gradients_match_finite_differences(scenes: usize) -> CheckResult {
    check("backward pass matches central differences", || {
        let cam = test_camera(16, 16);
        let opts = RenderOptions {
            background: [0.3, 0.5, 0.2],
            ..Default::default()
        };
        let mut weights = FloatImage::new(16, 16, 3, 0.0);
        for (i, v) in weights.data.iter_mut().enumerate() {
            *v = ((i * 37 % 101) as f64 / 101.0) - 0.4;
        }
        let loss = |c: &GaussianCloud| -> Result<f64> {
            let out = render(c, &cam, &opts)?;
            Ok(out.color.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum())
        };
        let mut worst = 0.0f64;
        for s in 0..scenes as u64 {
            let c = random_cloud(2000 + s, 20, 0.08);
            let (_, state) = render_with_state(&c, &cam, &opts)?;
            let g = render_backward(&state, &cam, &weights)?;
            let mut rel = |a: f64, fd: f64| worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-4));
            for i in 0..c.len() {
                let h = 1e-3;
                let (mut p, mut m) = (c.clone(), c.clone());
                p.opacity_logits[i] += h;
                m.opacity_logits[i] -= h;
                rel(g.opacity_logit[i], (loss(&p)? - loss(&m)?) / (2.0 * h));
                for (k, ch) in [(0, 1), (2, 0), (11, 2)] {
                    let h = 1e-4;
                    let (mut p, mut m) = (c.clone(), c.clone());
                    p.sh[i].0[k][ch] += h;
                    m.sh[i].0[k][ch] -= h;
                    let a = if k == 0 { g.sh_dc[i][ch] } else { g.sh_rest[i][k - 1][ch] };
                    rel(a, (loss(&p)? - loss(&m)?) / (2.0 * h));
                }
            }
        }
        Ok((worst < 1e-3, format!("{scenes} scenes, max rel. error {worst:.2e}")))
    })
}

pub fn covariance_spectrum(draws: usize) -> CheckResult {
    check("covariance eigenvalues are squared scales", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..draws {
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.1..1.0),
            );
            let s = Vec3::new(rng.random_range(0.01..2.0), rng.random_range(0.01..2.0), rng.random_range(0.01..2.0));
            let mut ev: Vec<f64> = SymmetricEigen::new(build_covariance(&q, &s)?).eigenvalues.iter().copied().collect();
            let mut want: Vec<f64> = s.iter().map(|v| v * v).collect();
            ev.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (a, b) in ev.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok((worst < 1e-6, format!("{draws} draws, max |Δλ| {worst:.2e}")))
    })
}

pub fn head_model_identities() -> CheckResult {
    check("zero parameters give the template; zero pose skins to identity", || {
        let m = make_synthetic_head(4, 162, 5, 6, 4)?;
        let p = HeadParams::neutral(&m);
        let canon = deform_canonical(&m, &p)?;
        let exact = canon.iter().zip(&m.template_vertices).all(|(a, t)| {
            a.iter().zip(t).all(|(x, y)| *x == *y as f64)
        });
        let posed = pose_mesh(&m, &p)?;
        let skin_err = posed
            .vertices
            .iter()
            .zip(&canon)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        Ok((exact && skin_err < 1e-7, format!("template exact: {exact}, skinning |Δ| {skin_err:.2e}")))
    })
}

pub fn binding_round_trip() -> CheckResult {
    check("driving a fresh binding reproduces it", || {
        let m = make_synthetic_head(5, 162, 5, 6, 4)?;
        let mesh = pose_mesh(&m, &HeadParams::neutral(&m))?;
        let b = bind_to_mesh(&mesh, 2)?;
        let d = b.binding.drive(&mesh)?;
        let mut worst = 0.0f64;
        for i in 0..b.cloud.len() {
            worst = worst.max((d.positions[i] - b.cloud.positions[i]).norm());
            worst = worst.max((d.log_scales[i] - b.cloud.log_scales[i]).abs().max());
            let (q, r) = (d.rotations[i], b.cloud.rotations[i]);
            let dq = (q.w - r.w).abs().max((q.x - r.x).abs()).max((q.y - r.y).abs()).max((q.z - r.z).abs());
            worst = worst.max(dq);
        }
        Ok((worst < 1e-7, format!("{} Gaussians, max |Δ| {worst:.2e}", b.cloud.len())))
    })
}

pub fn alignment_substitution(problems: usize) -> CheckResult {
    check("alignment satisfies its defining equation", || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut v = |s: f64| Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
        let mut worst = 0.0f64;
        for _ in 0..problems {
            let w1 = RigidTransform::new(axis_angle_to_matrix(&v(3.0)), v(2.0))?;
            let w2 = RigidTransform::new(axis_angle_to_matrix(&v(3.0)), v(2.0))?;
            let r = axis_angle_to_matrix(&v(3.0));
            let (t, root) = (v(1.0), v(0.5));
            let tc = solve_alignment(&AlignmentProblem::single(w1, w2, r, t, root))?;
            let tp = root_adjusted_translation(&r, &t, &root);
            for _ in 0..8 {
                let x = v(1.0);
                worst = worst.max((w1.apply(&(r * x + tp)) - w2.apply(&tc.apply(&x))).norm());
            }
        }
        Ok((worst < 1e-9, format!("{problems} problems, max residual {worst:.2e}")))
    })
}

pub fn priority_compositing() -> CheckResult {
    check("head group composites before background", || {
        let flat = |color: [f64; 3], z: f64, s: f64, group| Gaussian {
            position: Vec3::new(0.0, 0.0, z),
            rotation: Quat::IDENTITY,
            log_scale: Vec3::repeat(s.ln()),
            opacity_logit: logit(0.5),
            sh: ShCoefficients::from_dc(ShCoefficients::dc_for_color(color)),
            group,
        };
        let cam = test_camera(9, 9);
        let center = |a: Group, b: Group| -> Result<[f64; 3]> {
            let mut c = GaussianCloud::default();
            c.push(flat([1.0, 0.0, 0.0], 1.0, 0.05, a));
            c.push(flat([0.0, 0.0, 1.0], 2.0, 0.1, b));
            let out = render(&c, &cam, &RenderOptions::default())?;
            Ok([0, 1, 2].map(|ch| out.color.get(4, 4, ch)))
        };
        let prio = center(Group::Background, Group::Head)?;
        let depth = center(Group::Head, Group::Head)?;
        let err = (prio[0] - 0.25).abs() + prio[1].abs() + (prio[2] - 0.5).abs() + (depth[0] - 0.5).abs() + (depth[2] - 0.25).abs();
        Ok((err < 1e-12, format!("priority {prio:.3?}, depth-only {depth:.3?}")))
    })
}

pub fn splat_file_round_trip() -> CheckResult {
    check("splat file round trip is bit-exact", || {
        let mut c = random_cloud(7, 500, 0.05);
        let r = |v: f64| v as f32 as f64;
        c.positions.iter_mut().for_each(|p| *p = p.map(r));
        c.log_scales.iter_mut().for_each(|p| *p = p.map(r));
        c.opacity_logits.iter_mut().for_each(|v| *v = r(*v));
        c.rotations.iter_mut().for_each(|q| *q = Quat::new(r(q.w), r(q.x), r(q.y), r(q.z)));
        c.sh.iter_mut().for_each(|s| s.0 = s.0.map(|x| x.map(r)));
        c.set_group(Group::Background);
        let dir = tempfile::tempdir().map_err(|e| crate::Error::io("tempdir", e))?;
        let p = dir.path().join("c.ply");
        save_splat_file(&c, &p)?;
        let back = load_splat_file(&p)?;
        Ok((back == c, format!("{} Gaussians", c.len())))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfReport {
    pub gaussians: usize,
    pub width: u32,
    pub height: u32,
    pub tiled_seconds: f64,
    /// Brute-force time extrapolated from a pixel sample.
    pub reference_seconds: f64,
    pub sampled_pixels: usize,
}

impl PerfReport {
    pub fn speedup(&self) -> f64 {
        self.reference_seconds / self.tiled_seconds
    }

    pub fn fps(&self) -> f64 {
        1.0 / self.tiled_seconds
    }
}

/// Times the tiled renderer (best of `repeats`) against the brute-force
/// path. The brute-force time is its setup cost plus the measured per-pixel
/// cost of `samples` random pixels scaled to the full image.
pub fn benchmark(cloud: &GaussianCloud, camera: &CameraRig, samples: usize, repeats: usize) -> Result<PerfReport> {
    let opts = RenderOptions::default();
    render(cloud, camera, &opts)?;
    let mut tiled = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        render(cloud, camera, &opts)?;
        tiled = tiled.min(t.elapsed().as_secs_f64());
    }
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pixels: Vec<(usize, usize)> = (0..samples).map(|_| (rng.random_range(0..w), rng.random_range(0..h))).collect();
    let t = Instant::now();
    reference_pixel(cloud, camera, &opts, &[])?;
    let setup = t.elapsed().as_secs_f64();
    let t = Instant::now();
    reference_pixel(cloud, camera, &opts, &pixels)?;
    let sampled = t.elapsed().as_secs_f64();
    let per_pixel = (sampled - setup).max(0.0) / samples.max(1) as f64;
    Ok(PerfReport {
        gaussians: cloud.len(),
        width: camera.width,
        height: camera.height,
        tiled_seconds: tiled,
        reference_seconds: setup + per_pixel * (w * h) as f64,
        sampled_pixels: samples,
    })
}

/// The benchmark scene: `n` small Gaussians filling a `size`² view.
pub fn benchmark_scene(n: usize, size: u32) -> (GaussianCloud, CameraRig) {
    (random_cloud(42, n, 0.012), test_camera(size, size))
}

/// Every check; `quick` shrinks the sample counts.
pub fn run_all(quick: bool) -> Vec<CheckResult> {
    let k = |full: usize, small: usize| if quick { small } else { full };
    vec![
        tiled_matches_reference(k(100, 10)),
        gradients_match_finite_differences(k(10, 2)),
        covariance_spectrum(k(10_000, 500)),
        head_model_identities(),
        binding_round_trip(),
        alignment_substitution(k(1000, 50)),
        priority_compositing(),
        splat_file_round_trip(),
    ]
}
