//! Appearance fitting of the bound head Gaussians to multi-view guidance.

mod adam;
mod guidance;
mod loss;

pub use adam::{adam_step, AdamState};
pub use guidance::{GuidanceRecord, GuidanceSet, Provenance};
pub use loss::{compute_loss, masked_ssim, LossHook, LossTerms, LossWeights, SubprocessHook};

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::animate::HeadRig;
use crate::error::{Error, Result};
use crate::math::SH_COEFFS;
use crate::raster::{render_backward, render_with_state, RenderOptions};
use crate::scene::{GaussianCloud, Group};

const REST: usize = SH_COEFFS - 1;
/// Trainable scalars per Gaussian: DC, higher-order SH, opacity.
const PARAMS_PER_GAUSSIAN: usize = 3 + 3 * REST + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub opacity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            sh_dc: 0.0025,
            sh_rest: 0.0025 / 20.0,
            opacity: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Head Gaussians whose projection lands in the mask often enough.
    Vote,
    /// Every head Gaussian.
    AllHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rates: LearningRates,
    /// Base rates are divided by this.
    pub lr_reduction_factor: f64,
    /// Cosine decay ends at this fraction of the starting rate.
    pub final_lr_fraction: f64,
    pub iterations: usize,
    pub weights: LossWeights,
    pub mask_mode: MaskMode,
    /// Minimum in-mask fraction of in-frustum views for a Gaussian to train.
    pub trainable_fraction: f64,
    /// 0 disables snapshots.
    pub snapshot_interval: usize,
    pub seed: u64,
    /// Supplied by the engine configuration, not stored with the optimizer
    /// settings.
    #[serde(skip)]
    pub render: RenderOptions,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rates: LearningRates::default(),
            lr_reduction_factor: 10.0,
            final_lr_fraction: 0.1,
            iterations: 30_000,
            weights: LossWeights::default(),
            mask_mode: MaskMode::Vote,
            trainable_fraction: 0.5,
            snapshot_interval: 0,
            seed: 0,
            render: RenderOptions::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let lr = &self.learning_rates;
        if ![lr.sh_dc, lr.sh_rest, lr.opacity].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.lr_reduction_factor > 0.0) || !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::invalid("invalid learning-rate schedule"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be positive"));
        }
        if !(self.trainable_fraction > 0.0 && self.trainable_fraction <= 1.0) {
            return Err(Error::invalid("trainable_fraction must lie in (0, 1]"));
        }
        self.weights.validate()?;
        self.render.constants.validate()
    }

    /// Multiplier on the base rate at iteration `it`.
    pub fn lr_scale(&self, it: usize) -> f64 {
        let progress = it as f64 / self.iterations as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cos) / self.lr_reduction_factor
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub view: usize,
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub hook: f64,
    pub regularization: f64,
}

pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("iteration,view,total,l1,dssim,hook,regularization\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration, r.view, r.total, r.l1, r.dssim, r.hook, r.regularization
        );
    }
    out
}

pub fn write_loss_history(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, loss_history_csv(history)).map_err(|e| Error::io(path, e))
}

/// Which Gaussians may change. Only the bound head block of `group` head is
/// eligible.
pub fn select_trainable(
    cloud: &GaussianCloud,
    rig: &HeadRig,
    guidance: &GuidanceSet,
    mode: MaskMode,
    fraction: f64,
) -> Result<Vec<bool>> {
    if guidance.records.is_empty() {
        return Err(Error::invalid("trainable selection needs at least one view"));
    }
    let n_head = rig.binding.len().min(cloud.len());
    let eligible = |i: usize| i < n_head && cloud.group[i] == Group::Head;
    if mode == MaskMode::AllHead {
        return Ok((0..cloud.len()).map(eligible).collect());
    }
    let mut seen = vec![0usize; cloud.len()];
    let mut inside = vec![0usize; cloud.len()];
    let mut work = cloud.clone();
    for r in &guidance.records {
        rig.drive(&mut work, &r.params)?;
        for i in (0..n_head).filter(|&i| eligible(i)) {
            if let Some((x, y, _)) = r.camera.pixel_of(&work.positions[i]) {
                seen[i] += 1;
                if r.mask.get(x, y) {
                    inside[i] += 1;
                }
            }
        }
    }
    Ok((0..cloud.len())
        .map(|i| eligible(i) && seen[i] > 0 && inside[i] as f64 >= fraction * seen[i] as f64)
        .collect())
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub cloud: GaussianCloud,
    pub history: Vec<LossRecord>,
    pub trainable: Vec<bool>,
}

/// Flat views of the trainable attribute families.
struct Blocks {
    dc: Vec<f64>,
    rest: Vec<f64>,
    opacity: Vec<f64>,
}

impl Blocks {
    fn from_cloud(c: &GaussianCloud) -> Blocks {
        let mut b = Blocks {
            dc: Vec::with_capacity(3 * c.len()),
            rest: Vec::with_capacity(3 * REST * c.len()),
            opacity: c.opacity_logits.clone(),
        };
        for sh in &c.sh {
            b.dc.extend_from_slice(&sh.0[0]);
            for k in 1..SH_COEFFS {
                b.rest.extend_from_slice(&sh.0[k]);
            }
        }
        b
    }

    fn write_to(&self, c: &mut GaussianCloud, trainable: &[bool]) {
        for i in (0..c.len()).filter(|&i| trainable[i]) {
            c.sh[i].0[0].copy_from_slice(&self.dc[3 * i..3 * i + 3]);
            for k in 1..SH_COEFFS {
                let o = 3 * (REST * i + k - 1);
                c.sh[i].0[k].copy_from_slice(&self.rest[o..o + 3]);
            }
            c.opacity_logits[i] = self.opacity[i];
        }
    }
}

/// Observer invoked every `snapshot_interval` iterations with the current
/// appearance.
pub type SnapshotFn<'a> = dyn FnMut(usize, &GaussianCloud) -> Result<()> + 'a;

/// Fits SH and opacity of the trainable head Gaussians to the guidance.
/// Geometry is re-driven per record and restored in the result, so only
/// appearance of trainable Gaussians differs from the input.
pub fn optimize_appearance(
    cloud: &GaussianCloud,
    rig: &HeadRig,
    guidance: &GuidanceSet,
    config: &OptimConfig,
    hook: Option<&dyn LossHook>,
    mut snapshot: Option<&mut SnapshotFn>,
) -> Result<OptimResult> {
    config.validate()?;
    guidance.validate()?;
    cloud.validate()?;
    let trainable = select_trainable(cloud, rig, guidance, config.mask_mode, config.trainable_fraction)?;
    let n_train = trainable.iter().filter(|&&t| t).count();
    if n_train == 0 {
        return Err(Error::invalid("no trainable Gaussians: the masks select nothing"));
    }

    let initial = Blocks::from_cloud(cloud);
    let mut params = Blocks::from_cloud(cloud);
    let n = cloud.len();
    let mut adam = [AdamState::new(3 * n), AdamState::new(3 * REST * n), AdamState::new(n)];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut work = cloud.clone();
    let mut history = Vec::with_capacity(config.iterations);
    let reg_norm = (PARAMS_PER_GAUSSIAN * n_train) as f64;
    let lambda = config.weights.regularization;

    for it in 0..config.iterations {
        let view = rng.random_range(0..guidance.records.len());
        let rec = &guidance.records[view];
        rig.drive(&mut work, &rec.params)?;
        let (out, state) = render_with_state(&work, &rec.camera, &config.render)?;
        let (terms, grad_img) = compute_loss(&out.color, &rec.image, &rec.mask, &config.weights, hook)?;
        let g = render_backward(&state, &rec.camera, &grad_img)?;

        let mut g_dc = vec![0.0; 3 * n];
        let mut g_rest = vec![0.0; 3 * REST * n];
        let mut g_op = vec![0.0; n];
        let mut reg = 0.0;
        for i in (0..n).filter(|&i| trainable[i]) {
            for ch in 0..3 {
                let j = 3 * i + ch;
                let d = params.dc[j] - initial.dc[j];
                reg += d * d;
                g_dc[j] = g.sh_dc[i][ch] + 2.0 * lambda * d / reg_norm;
                for k in 0..REST {
                    let j = 3 * (REST * i + k) + ch;
                    let d = params.rest[j] - initial.rest[j];
                    reg += d * d;
                    g_rest[j] = g.sh_rest[i][k][ch] + 2.0 * lambda * d / reg_norm;
                }
            }
            let d = params.opacity[i] - initial.opacity[i];
            reg += d * d;
            g_op[i] = g.opacity_logit[i] + 2.0 * lambda * d / reg_norm;
        }
        let reg = lambda * reg / reg_norm;
        history.push(LossRecord {
            iteration: it,
            view,
            total: terms.total + reg,
            l1: terms.l1,
            dssim: terms.dssim,
            hook: terms.hook,
            regularization: reg,
        });

        let s = config.lr_scale(it);
        let lr = &config.learning_rates;
        let [a_dc, a_rest, a_op] = &mut adam;
        adam_step(&mut params.dc, &g_dc, a_dc, lr.sh_dc * s, "sh_dc")?;
        adam_step(&mut params.rest, &g_rest, a_rest, lr.sh_rest * s, "sh_rest")?;
        adam_step(&mut params.opacity, &g_op, a_op, lr.opacity * s, "opacity")?;
        params.write_to(&mut work, &trainable);

        if config.snapshot_interval > 0 && (it + 1) % config.snapshot_interval == 0 {
            if let Some(f) = snapshot.as_mut() {
                let mut snap = cloud.clone();
                params.write_to(&mut snap, &trainable);
                f(it + 1, &snap)?;
            }
        }
    }

    let mut result = cloud.clone();
    params.write_to(&mut result, &trainable);
    Ok(OptimResult {
        cloud: result,
        history,
        trainable,
    })
}
