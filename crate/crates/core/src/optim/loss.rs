//! Masked L1 + structural-similarity image loss with exact gradients, and
//! the external loss hook.

use std::path::PathBuf;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{load_float_raster, save_float_raster, FloatImage, Mask};

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub hook: f64,
    /// λ of the anchor to the initial appearance.
    pub regularization: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 0.8,
            ssim: 0.2,
            hook: 0.0,
            regularization: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.l1, self.ssim, self.hook, self.regularization];
        if w.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("loss weights must be non-negative: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub l1: f64,
    /// `1 − SSIM` over masked pixels.
    pub dssim: f64,
    pub hook: f64,
}

/// External perceptual term: returns a loss and its gradient image.
pub trait LossHook: Send + Sync {
    fn evaluate(&self, rendered: &FloatImage, guidance: &FloatImage) -> Result<(f64, FloatImage)>;
}

/// Runs `program args.. rendered.raster guidance.raster grad_out.raster`.
/// The process prints the scalar loss on stdout and writes the gradient
/// as a float raster shaped like the rendered image.
#[derive(Debug, Clone)]
pub struct SubprocessHook {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl LossHook for SubprocessHook {
    fn evaluate(&self, rendered: &FloatImage, guidance: &FloatImage) -> Result<(f64, FloatImage)> {
        let dir = tempfile::tempdir().map_err(|e| Error::io("hook temp dir", e))?;
        let r = dir.path().join("rendered.raster");
        let g = dir.path().join("guidance.raster");
        let out = dir.path().join("grad_out.raster");
        save_float_raster(rendered, &r)?;
        save_float_raster(guidance, &g)?;
        let result = Command::new(&self.program)
            .args(&self.args)
            .arg(&r)
            .arg(&g)
            .arg(&out)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !result.status.success() {
            return Err(Error::invalid(format!(
                "loss hook exited with {}: {}",
                result.status,
                String::from_utf8_lossy(&result.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&result.stdout);
        let loss: f64 = stdout
            .trim()
            .parse()
            .map_err(|_| Error::parse("loss hook output", format!("expected a number, got '{}'", stdout.trim())))?;
        let grad = load_float_raster(&out)?;
        if !grad.same_shape(rendered) {
            return Err(Error::invalid("loss hook gradient has the wrong shape"));
        }
        Ok((loss, grad))
    }
}

/// Loss of a rendered RGB image against guidance under a per-pixel mask,
/// plus `dL/dC`.
pub fn compute_loss(
    rendered: &FloatImage,
    guidance: &FloatImage,
    mask: &Mask,
    weights: &LossWeights,
    hook: Option<&dyn LossHook>,
) -> Result<(LossTerms, FloatImage)> {
    if rendered.channels != 3 || !rendered.same_shape(guidance) {
        return Err(Error::invalid(format!(
            "rendered {}x{}x{} vs guidance {}x{}x{}",
            rendered.width, rendered.height, rendered.channels, guidance.width, guidance.height, guidance.channels
        )));
    }
    if mask.width != rendered.width || mask.height != rendered.height {
        return Err(Error::invalid(format!(
            "mask is {}x{}, image is {}x{}",
            mask.width, mask.height, rendered.width, rendered.height
        )));
    }
    let n = rendered.data.len() as f64;
    let mut grad = FloatImage::new(rendered.width, rendered.height, 3, 0.0);
    let mut terms = LossTerms::default();

    if weights.l1 > 0.0 {
        let mut sum = 0.0;
        for (i, (c, g)) in rendered.data.iter().zip(&guidance.data).enumerate() {
            if !mask.data[i / 3] {
                continue;
            }
            let d = c - g;
            sum += d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad.data[i] += weights.l1 * s / n;
        }
        terms.l1 = sum / n;
    }

    if weights.ssim > 0.0 {
        let (ssim, g) = masked_ssim(rendered, guidance, mask);
        terms.dssim = 1.0 - ssim;
        // d(1 − ssim) = −d ssim
        for (a, b) in grad.data.iter_mut().zip(&g.data) {
            *a -= weights.ssim * b;
        }
    }

    if let (Some(hook), true) = (hook, weights.hook > 0.0) {
        let (l, g) = hook.evaluate(rendered, guidance)?;
        if !l.is_finite() {
            return Err(Error::Numerical("loss hook returned a non-finite loss".into()));
        }
        terms.hook = l;
        for (a, b) in grad.data.iter_mut().zip(&g.data) {
            *a += weights.hook * b;
        }
    }
    terms.total = weights.l1 * terms.l1 + weights.ssim * terms.dssim + weights.hook * terms.hook;
    Ok((terms, grad))
}

fn gaussian_kernel() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut k = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - SSIM_RADIUS as f64;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "same" correlation with zero padding. The kernel is
/// symmetric, so this operator is self-adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yy = y as isize + t as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Mean SSIM over masked pixels (all channels) and its gradient with
/// respect to `x`. An empty mask gives SSIM 1 and a zero gradient.
pub fn masked_ssim(x: &FloatImage, y: &FloatImage, mask: &Mask) -> (f64, FloatImage) {
    let (w, h) = (x.width, x.height);
    let mut grad = FloatImage::new(w, h, 3, 0.0);
    let count = mask.count() * 3;
    if count == 0 {
        return (1.0, grad);
    }
    let k = gaussian_kernel();
    let m = count as f64;
    let mut total = 0.0;
    for ch in 0..3 {
        let xs: Vec<f64> = (0..w * h).map(|i| x.data[3 * i + ch]).collect();
        let ys: Vec<f64> = (0..w * h).map(|i| y.data[3 * i + ch]).collect();
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_x = blur(&xs, w, h, &k);
        let mu_y = blur(&ys, w, h, &k);
        let e_xx = blur(&sq(&xs, &xs), w, h, &k);
        let e_yy = blur(&sq(&ys, &ys), w, h, &k);
        let e_xy = blur(&sq(&xs, &ys), w, h, &k);

        let mut d_mu = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for p in 0..w * h {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * (e_xy[p] - mx * my) + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = (e_xx[p] - mx * mx) + (e_yy[p] - my * my) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            if !mask.data[p] {
                continue;
            }
            total += s;
            // dL/dS for L = mean masked S
            let d = 1.0 / m;
            // paired so that identical images give an exact zero
            d_mu[p] = d * s * ((2.0 * my / a1 - 2.0 * mx / b1) + (2.0 * mx / b2 - 2.0 * my / a2));
            d_exx[p] = -d * s / b2;
            d_exy[p] = d * s * 2.0 / a2;
        }
        let g_mu = blur(&d_mu, w, h, &k);
        let g_exx = blur(&d_exx, w, h, &k);
        let g_exy = blur(&d_exy, w, h, &k);
        for q in 0..w * h {
            grad.data[3 * q + ch] = g_mu[q] + 2.0 * xs[q] * g_exx[q] + ys[q] * g_exy[q];
        }
    }
    (total / m, grad)
}
