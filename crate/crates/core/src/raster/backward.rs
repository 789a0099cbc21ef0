use rayon::prelude::*;

use super::forward::ForwardState;
use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::imageio::FloatImage;
use crate::math::SH_COEFFS;

/// Appearance gradients, indexed by Gaussian (source) index. Gaussians that
/// were culled or never contributed get zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    pub sh_dc: Vec<[f64; 3]>,
    pub sh_rest: Vec<[[f64; 3]; SH_COEFFS - 1]>,
    pub opacity_logit: Vec<f64>,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        RenderGradients {
            sh_dc: vec![[0.0; 3]; n],
            sh_rest: vec![[[0.0; 3]; SH_COEFFS - 1]; n],
            opacity_logit: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logit.is_empty()
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &RenderGradients, s: f64) {
        for (a, b) in self.sh_dc.iter_mut().zip(&other.sh_dc) {
            for ch in 0..3 {
                a[ch] += s * b[ch];
            }
        }
        for (a, b) in self.sh_rest.iter_mut().zip(&other.sh_rest) {
            for (x, y) in a.iter_mut().zip(b) {
                for ch in 0..3 {
                    x[ch] += s * y[ch];
                }
            }
        }
        for (a, b) in self.opacity_logit.iter_mut().zip(&other.opacity_logit) {
            *a += s * b;
        }
    }
}

/// Per-splat accumulators: `dL/dcolor` and `dL/dlogit`.
type Partial = ([f64; 3], f64);

/// Exact gradients of `L` given `dL/dC` (an RGB image), replaying the forward
/// blend with identical order and cutoffs.
pub fn render_backward(state: &ForwardState, camera: &CameraRig, grad_color: &FloatImage) -> Result<RenderGradients> {
    if camera != &state.camera {
        return Err(Error::invalid("camera differs from the one used in the forward pass"));
    }
    let (w, h) = (camera.width as usize, camera.height as usize);
    if grad_color.width != w || grad_color.height != h || grad_color.channels != 3 {
        return Err(Error::invalid(format!(
            "gradient image is {}x{}x{}, forward pass rendered {w}x{h}x3",
            grad_color.width, grad_color.height, grad_color.channels
        )));
    }
    let k = &state.options.constants;
    let bg = state.options.background;
    let ts = k.tile_size;
    if state.tiles_x != w.div_ceil(ts) || state.tiles_y != h.div_ceil(ts) {
        return Err(Error::invalid("forward state does not match the image size"));
    }

    let partials: Vec<Vec<Partial>> = (0..state.tile_lists.len())
        .into_par_iter()
        .map(|t| {
            let list = &state.tile_lists[t];
            let mut acc = vec![([0.0; 3], 0.0); list.len()];
            let (tx, ty) = (t % state.tiles_x, t / state.tiles_x);
            // (position in list, alpha, transmittance before, unclamped falloff)
            let mut used: Vec<(usize, f64, f64, Option<f64>)> = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(h) {
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let base = 3 * (y * w + x);
                    let g = [grad_color.data[base], grad_color.data[base + 1], grad_color.data[base + 2]];
                    if g == [0.0; 3] {
                        continue;
                    }
                    let (px, py) = (x as f64, y as f64);
                    used.clear();
                    let mut tr = 1.0;
                    for (pos, &r) in list.iter().enumerate() {
                        let s = &state.splats[r as usize];
                        let fall = s.falloff(px, py);
                        let raw = s.opacity * fall;
                        let a = raw.min(k.alpha_max);
                        if a < k.alpha_cull {
                            continue;
                        }
                        used.push((pos, a, tr, (raw < k.alpha_max).then_some(fall)));
                        tr *= 1.0 - a;
                        if tr < k.t_stop {
                            break;
                        }
                    }
                    // suffix of everything blended behind the current splat
                    let mut suffix = bg.map(|b| b * tr);
                    for &(pos, a, t_before, fall) in used.iter().rev() {
                        let s = &state.splats[list[pos] as usize];
                        let wgt = a * t_before;
                        let mut d_alpha = 0.0;
                        for ch in 0..3 {
                            acc[pos].0[ch] += g[ch] * wgt;
                            d_alpha += g[ch] * (s.color[ch] * t_before - suffix[ch] / (1.0 - a));
                            suffix[ch] += s.color[ch] * wgt;
                        }
                        if let Some(fall) = fall {
                            let sig = s.opacity;
                            acc[pos].1 += d_alpha * fall * sig * (1.0 - sig);
                        }
                    }
                }
            }
            acc
        })
        .collect();

    // fixed tile order keeps the sums independent of scheduling
    let mut per_rank = vec![([0.0; 3], 0.0); state.splats.len()];
    for (list, acc) in state.tile_lists.iter().zip(&partials) {
        for (&r, p) in list.iter().zip(acc) {
            let slot = &mut per_rank[r as usize];
            for ch in 0..3 {
                slot.0[ch] += p.0[ch];
            }
            slot.1 += p.1;
        }
    }

    let mut out = RenderGradients::zeros(state.n_gaussians);
    for (rank, (dc, dlogit)) in per_rank.iter().enumerate() {
        let i = state.splats[rank].source_index;
        let sh = &state.shading[rank];
        let d = [0, 1, 2].map(|ch| if sh.positive[ch] { dc[ch] } else { 0.0 });
        for ch in 0..3 {
            out.sh_dc[i][ch] = d[ch] * sh.basis[0];
            for kk in 1..SH_COEFFS {
                out.sh_rest[i][kk - 1][ch] = d[ch] * sh.basis[kk];
            }
        }
        out.opacity_logit[i] = *dlogit;
    }
    Ok(out)
}
