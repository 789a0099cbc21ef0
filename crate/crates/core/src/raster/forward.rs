use rayon::prelude::*;

use super::{build_covariance, project_gaussian, RasterConstants, RenderOptions, Splat2D};
use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::imageio::FloatImage;
use crate::math::{sh_basis, sh_raw_color, SH_COEFFS};
use crate::scene::GaussianCloud;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// RGB, not clamped above; includes the background seen through the
    /// remaining transmittance.
    pub color: FloatImage,
    pub alpha: FloatImage,
    /// Alpha-weighted expected depth, `+∞` where nothing contributed.
    pub depth: FloatImage,
    pub contributors: Vec<u32>,
}

impl RenderOutput {
    fn blank(w: usize, h: usize, bg: [f64; 3]) -> Self {
        let mut color = FloatImage::new(w, h, 3, 0.0);
        for px in color.data.chunks_mut(3) {
            px.copy_from_slice(&bg);
        }
        RenderOutput {
            color,
            alpha: FloatImage::new(w, h, 1, 0.0),
            depth: FloatImage::new(w, h, 1, f64::INFINITY),
            contributors: vec![0; w * h],
        }
    }
}

/// View-dependent shading inputs kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shading {
    pub basis: [f64; SH_COEFFS],
    pub positive: [bool; 3],
}

/// Everything the backward pass needs to replay the forward blend exactly.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub(crate) camera: CameraRig,
    pub(crate) options: RenderOptions,
    pub(crate) n_gaussians: usize,
    /// Splats in blend order.
    pub(crate) splats: Vec<Splat2D>,
    pub(crate) shading: Vec<Shading>,
    pub(crate) tiles_x: usize,
    pub(crate) tiles_y: usize,
    /// Per tile, ranks into `splats` in blend order.
    pub(crate) tile_lists: Vec<Vec<u32>>,
}

impl ForwardState {
    pub fn camera(&self) -> &CameraRig {
        &self.camera
    }

    pub fn n_gaussians(&self) -> usize {
        self.n_gaussians
    }

    pub fn visible_count(&self) -> usize {
        self.splats.len()
    }
}

/// Projects, shades and sorts every Gaussian by `(group, depth, index)`.
fn prepare(cloud: &GaussianCloud, camera: &CameraRig, k: &RasterConstants) -> Result<(Vec<Splat2D>, Vec<Shading>)> {
    let center = camera.center();
    let mut out: Vec<(Splat2D, Shading)> = (0..cloud.len())
        .into_par_iter()
        .filter_map(|i| {
            let sigma = build_covariance(&cloud.rotations[i], &cloud.scale(i)).ok()?;
            let (mean, cov2d, depth) = project_gaussian(&cloud.positions[i], &sigma, camera, k)?;
            let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
            let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
            let dir = (cloud.positions[i] - center).try_normalize(1e-300)?;
            let basis = sh_basis(&dir);
            let raw = sh_raw_color(&cloud.sh[i], &basis);
            let splat = Splat2D {
                mean,
                cov2d,
                conic,
                depth,
                color: raw.map(|c| c.max(0.0)),
                opacity: cloud.opacity(i),
                group: cloud.group[i],
                source_index: i,
            };
            Some((splat, Shading { basis, positive: raw.map(|c| c > 0.0) }))
        })
        .collect();
    out.sort_by(|(a, _), (b, _)| {
        a.group
            .cmp(&b.group)
            .then(a.depth.total_cmp(&b.depth))
            .then(a.source_index.cmp(&b.source_index))
    });
    if let Some((s, _)) = out.iter().find(|(s, _)| !s.color.iter().all(|c| c.is_finite())) {
        return Err(Error::Numerical(format!("Gaussian {} has a non-finite color", s.source_index)));
    }
    Ok(out.into_iter().unzip())
}

fn check_inputs(cloud: &GaussianCloud, camera: &CameraRig, options: &RenderOptions) -> Result<()> {
    camera.validate()?;
    options.constants.validate()?;
    cloud.validate()
}

pub fn render(cloud: &GaussianCloud, camera: &CameraRig, options: &RenderOptions) -> Result<RenderOutput> {
    Ok(render_with_state(cloud, camera, options)?.0)
}

/// Tiled forward pass; the returned state feeds [`super::render_backward`].
pub fn render_with_state(
    cloud: &GaussianCloud,
    camera: &CameraRig,
    options: &RenderOptions,
) -> Result<(RenderOutput, ForwardState)> {
    check_inputs(cloud, camera, options)?;
    let k = &options.constants;
    let (w, h) = (camera.width as usize, camera.height as usize);
    let (splats, shading) = prepare(cloud, camera, k)?;
    let ts = k.tile_size;
    let (tiles_x, tiles_y) = (w.div_ceil(ts), h.div_ceil(ts));

    // Ranks are visited in blend order, so every tile list is already sorted.
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    for (rank, s) in splats.iter().enumerate() {
        let Some([x0, y0, x1, y1]) = s.pixel_bounds(k, w, h) else { continue };
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                tile_lists[ty * tiles_x + tx].push(rank as u32);
            }
        }
    }

    let tiles: Vec<TileResult> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let xs = tx * ts..((tx + 1) * ts).min(w);
            let ys = ty * ts..((ty + 1) * ts).min(h);
            let list = &tile_lists[t];
            let mut res = TileResult::default();
            for y in ys {
                for x in xs.clone() {
                    res.pixels.push(blend_pixel(
                        list.iter().map(|&r| &splats[r as usize]),
                        x,
                        y,
                        options,
                    ));
                }
            }
            res
        })
        .collect();

    let mut out = RenderOutput::blank(w, h, options.background);
    for (t, tile) in tiles.iter().enumerate() {
        let (tx, ty) = (t % tiles_x, t / tiles_x);
        let xs = tx * ts..((tx + 1) * ts).min(w);
        let ys = ty * ts..((ty + 1) * ts).min(h);
        let mut it = tile.pixels.iter();
        for y in ys {
            for x in xs.clone() {
                it.next().unwrap().write(&mut out, x, y);
            }
        }
    }
    let state = ForwardState {
        camera: camera.clone(),
        options: *options,
        n_gaussians: cloud.len(),
        splats,
        shading,
        tiles_x,
        tiles_y,
        tile_lists,
    };
    Ok((out, state))
}

/// Brute force: every pixel blends the full globally sorted list.
pub fn render_reference(cloud: &GaussianCloud, camera: &CameraRig, options: &RenderOptions) -> Result<RenderOutput> {
    check_inputs(cloud, camera, options)?;
    let (w, h) = (camera.width as usize, camera.height as usize);
    let (splats, _) = prepare(cloud, camera, &options.constants)?;
    let mut out = RenderOutput::blank(w, h, options.background);
    for y in 0..h {
        for x in 0..w {
            blend_pixel(splats.iter(), x, y, options).write(&mut out, x, y);
        }
    }
    Ok(out)
}

/// Reference evaluation of a handful of pixels; returns `(rgb, alpha)` per
/// pixel. Useful for timing the brute-force path on large scenes.
pub fn reference_pixel(
    cloud: &GaussianCloud,
    camera: &CameraRig,
    options: &RenderOptions,
    pixels: &[(usize, usize)],
) -> Result<Vec<([f64; 3], f64)>> {
    check_inputs(cloud, camera, options)?;
    let (splats, _) = prepare(cloud, camera, &options.constants)?;
    Ok(pixels
        .iter()
        .map(|&(x, y)| {
            let p = blend_pixel(splats.iter(), x, y, options);
            (p.color, 1.0 - p.transmittance)
        })
        .collect())
}

/// Source indices of the splats that blended into pixel `(x, y)`, in order.
pub fn pixel_contributors(state: &ForwardState, x: usize, y: usize) -> Vec<usize> {
    let k = &state.options.constants;
    let ts = k.tile_size;
    let list = &state.tile_lists[(y / ts) * state.tiles_x + x / ts];
    let (px, py) = (x as f64, y as f64);
    let mut t = 1.0;
    let mut out = Vec::new();
    for &r in list {
        let s = &state.splats[r as usize];
        let a = s.alpha(px, py, k);
        if a < k.alpha_cull {
            continue;
        }
        out.push(s.source_index);
        t *= 1.0 - a;
        if t < k.t_stop {
            break;
        }
    }
    out
}

#[derive(Default)]
struct TileResult {
    pixels: Vec<PixelResult>,
}

struct PixelResult {
    color: [f64; 3],
    transmittance: f64,
    depth: f64,
    count: u32,
}

impl PixelResult {
    fn write(&self, out: &mut RenderOutput, x: usize, y: usize) {
        let i = y * out.alpha.width + x;
        out.color.data[3 * i..3 * i + 3].copy_from_slice(&self.color);
        out.alpha.data[i] = 1.0 - self.transmittance;
        out.depth.data[i] = self.depth;
        out.contributors[i] = self.count;
    }
}

#[inline]
fn blend_pixel<'a>(
    splats: impl Iterator<Item = &'a Splat2D>,
    x: usize,
    y: usize,
    options: &RenderOptions,
) -> PixelResult {
    let k = &options.constants;
    let (px, py) = (x as f64, y as f64);
    let mut t = 1.0;
    let mut c = [0.0; 3];
    let mut wsum = 0.0;
    let mut zsum = 0.0;
    let mut count = 0;
    for s in splats {
        let a = s.alpha(px, py, k);
        if a < k.alpha_cull {
            continue;
        }
        let w = a * t;
        for ch in 0..3 {
            c[ch] += s.color[ch] * w;
        }
        wsum += w;
        zsum += s.depth * w;
        t *= 1.0 - a;
        count += 1;
        if t < k.t_stop {
            break;
        }
    }
    for ch in 0..3 {
        c[ch] += t * options.background[ch];
    }
    PixelResult {
        color: c,
        transmittance: t,
        depth: if wsum > 0.0 { zsum / wsum } else { f64::INFINITY },
        count,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::math::{logit, Quat, RigidTransform, ShCoefficients, Vec3};
    use crate::scene::{Gaussian, Group};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn camera(w: u32, h: u32) -> CameraRig {
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

    fn flat(color: [f64; 3], pos: Vec3, scale: f64, opacity: f64, group: Group) -> Gaussian {
        Gaussian {
            position: pos,
            rotation: Quat::IDENTITY,
            log_scale: Vec3::repeat(scale.ln()),
            opacity_logit: logit(opacity),
            sh: ShCoefficients::from_dc(ShCoefficients::dc_for_color(color)),
            group,
        }
    }

    pub(crate) fn random_scene(seed: u64, n: usize) -> GaussianCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = GaussianCloud::default();
        for _ in 0..n {
            let z = rng.random_range(1.0..4.0);
            let mut sh = ShCoefficients::default();
            for k in 0..SH_COEFFS {
                sh.0[k] = [0; 3].map(|_| rng.random_range(-0.6..0.6));
            }
            c.push(Gaussian {
                position: Vec3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.6..0.6) * z, z),
                rotation: Quat::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.2..1.0),
                ),
                log_scale: Vec3::new(
                    rng.random_range(-3.5..-1.5),
                    rng.random_range(-3.5..-1.5),
                    rng.random_range(-3.5..-1.5),
                ),
                opacity_logit: rng.random_range(-2.0..4.0),
                sh,
                group: if rng.random_bool(0.4) { Group::Head } else { Group::Background },
            });
        }
        c
    }

    const RED: [f64; 3] = [1.0, 0.0, 0.0];
    const BLUE: [f64; 3] = [0.0, 0.0, 1.0];

    #[test]
    fn empty_scene_is_background() {
        let opts = RenderOptions {
            background: [0.2, 0.4, 0.6],
            ..Default::default()
        };
        let out = render(&GaussianCloud::default(), &camera(8, 8), &opts).unwrap();
        assert!(out.color.data.chunks(3).all(|p| p == [0.2, 0.4, 0.6]));
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
        assert!(out.depth.data.iter().all(|d| d.is_infinite()));
        assert_eq!(render_reference(&GaussianCloud::default(), &camera(8, 8), &opts).unwrap(), out);
    }

    #[test]
    fn single_saturated_gaussian() {
        let cam = camera(9, 9);
        let mut c = GaussianCloud::default();
        c.push(flat([0.3, 0.6, 0.9], Vec3::new(0.0, 0.0, 2.0), 0.05, 0.9999, Group::Head));
        let out = render(&c, &cam, &RenderOptions::default()).unwrap();
        let k = RasterConstants::default();
        let px = &out.color.data[3 * (4 * 9 + 4)..3 * (4 * 9 + 4) + 3];
        for (got, want) in px.iter().zip([0.3, 0.6, 0.9]) {
            assert!((got - want * k.alpha_max).abs() < 1e-12);
        }
        let reference = render_reference(&c, &cam, &RenderOptions::default()).unwrap();
        for (a, b) in out.color.data.iter().zip(&reference.color.data) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    /// Opacity so that the splat's alpha at its own center is exactly `a`.
    fn two_splat_scene(a_group: Group, b_group: Group) -> GaussianCloud {
        let mut c = GaussianCloud::default();
        c.push(flat(RED, Vec3::new(0.0, 0.0, 1.0), 0.05, 0.5, a_group));
        c.push(flat(BLUE, Vec3::new(0.0, 0.0, 2.0), 0.1, 0.5, b_group));
        c
    }

    #[test]
    fn two_coincident_by_depth() {
        let cam = camera(9, 9);
        let out = render(&two_splat_scene(Group::Head, Group::Head), &cam, &RenderOptions::default()).unwrap();
        let i = 3 * (4 * 9 + 4);
        let want = [0.5, 0.0, 0.25];
        for ch in 0..3 {
            assert!((out.color.data[i + ch] - want[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn priority_beats_depth() {
        let cam = camera(9, 9);
        let c = two_splat_scene(Group::Background, Group::Head);
        let (out, state) = render_with_state(&c, &cam, &RenderOptions::default()).unwrap();
        let i = 3 * (4 * 9 + 4);
        let want = [0.25, 0.0, 0.5];
        for ch in 0..3 {
            assert!((out.color.data[i + ch] - want[ch]).abs() < 1e-12);
        }
        assert_eq!(pixel_contributors(&state, 4, 4), vec![1, 0]);
    }

    #[test]
    fn tiled_matches_reference_on_random_scenes() {
        let opts = RenderOptions {
            background: [0.1, 0.2, 0.3],
            constants: RasterConstants {
                tile_size: 8,
                ..Default::default()
            },
        };
        for seed in 0..10 {
            let c = random_scene(seed, 60);
            let cam = camera(37, 29);
            let a = render(&c, &cam, &opts).unwrap();
            let b = render_reference(&c, &cam, &opts).unwrap();
            for (x, y) in a.color.data.iter().zip(&b.color.data) {
                assert!((x - y).abs() < 1e-5, "seed {seed}");
            }
            assert_eq!(a.contributors, b.contributors);
        }
    }

    #[test]
    fn alpha_telescopes_and_priority_order_holds() {
        let c = random_scene(7, 80);
        let cam = camera(32, 32);
        let (out, state) = render_with_state(&c, &cam, &RenderOptions::default()).unwrap();
        let k = RasterConstants::default();
        for y in 0..32 {
            for x in 0..32 {
                let order = pixel_contributors(&state, x, y);
                let t: f64 = order
                    .iter()
                    .map(|&i| {
                        let s = state.splats.iter().find(|s| s.source_index == i).unwrap();
                        1.0 - s.alpha(x as f64, y as f64, &k)
                    })
                    .product();
                assert!((out.alpha.get(x, y, 0) - (1.0 - t)).abs() < 1e-6);
                let first_bg = order.iter().position(|&i| c.group[i] == Group::Background);
                if let Some(p) = first_bg {
                    assert!(order[p..].iter().all(|&i| c.group[i] == Group::Background));
                }
            }
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let c = random_scene(3, 200);
        let cam = camera(64, 48);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| render(&c, &cam, &RenderOptions::default()).unwrap())
        };
        let a = run(1);
        let b = run(4);
        let bits = |o: &RenderOutput| o.color.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn expected_depth_of_single_splat() {
        let cam = camera(9, 9);
        let mut c = GaussianCloud::default();
        c.push(flat(RED, Vec3::new(0.0, 0.0, 3.0), 0.2, 0.7, Group::Head));
        let out = render(&c, &cam, &RenderOptions::default()).unwrap();
        assert!((out.depth.get(4, 4, 0) - 3.0).abs() < 1e-12);
    }
}
