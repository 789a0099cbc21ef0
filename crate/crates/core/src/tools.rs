//! Person labeling by multi-view mask voting, and removal.
//!
//! A Gaussian votes in a view when its projected mean lands in the image and
//! it is not hidden: its camera depth is at most the rendered expected depth
//! at that pixel plus a tolerance. It is flagged when enough views vote and a
//! large enough fraction of them see it inside the (dilated) mask.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::imageio::{load_mask, Mask};
use crate::raster::{render, RenderOptions};
use crate::scene::GaussianCloud;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskVoteConfig {
    /// Required in-mask fraction of visible views.
    pub tau: f64,
    pub min_views: usize,
    /// Occlusion tolerance in meters.
    pub depth_tolerance: f64,
    /// Square dilation radius applied to every mask, in pixels.
    pub dilation_radius: usize,
}

impl Default for MaskVoteConfig {
    fn default() -> Self {
        MaskVoteConfig {
            tau: 0.6,
            min_views: 1,
            depth_tolerance: 0.05,
            dilation_radius: 3,
        }
    }
}

impl MaskVoteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.depth_tolerance > 0.0 && self.depth_tolerance.is_finite()) {
            return Err(Error::invalid("depth_tolerance must be positive"));
        }
        if self.min_views == 0 {
            return Err(Error::invalid("min_views must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskView {
    pub id: String,
    pub camera: CameraRig,
    pub mask: Mask,
}

#[derive(Deserialize)]
struct ViewsFile {
    views: Vec<ViewEntry>,
}

#[derive(Deserialize)]
struct ViewEntry {
    id: String,
    #[serde(flatten)]
    camera: CameraRig,
}

/// Loads `<dir>/cameras.json` (`{"views":[{"id":..,<camera fields>}]}`) and
/// `<dir>/masks/<id>.png`.
pub fn load_mask_views(dir: impl AsRef<Path>) -> Result<Vec<MaskView>> {
    let dir = dir.as_ref();
    let p = dir.join("cameras.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let file: ViewsFile = serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e))?;
    file.views
        .into_iter()
        .map(|v| {
            v.camera.validate()?;
            let mask = load_mask(dir.join("masks").join(format!("{}.png", v.id)))?;
            Ok(MaskView {
                id: v.id,
                camera: v.camera,
                mask,
            })
        })
        .collect()
}

/// Per-Gaussian vote tallies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteCounts {
    pub visible: Vec<u32>,
    pub inside: Vec<u32>,
}

impl VoteCounts {
    pub fn flags(&self, config: &MaskVoteConfig) -> Vec<bool> {
        self.visible
            .iter()
            .zip(&self.inside)
            .map(|(&v, &m)| v as usize >= config.min_views && v > 0 && m as f64 >= config.tau * v as f64)
            .collect()
    }
}

/// Visibility and in-mask tallies over all views.
pub fn count_votes(
    cloud: &GaussianCloud,
    views: &[MaskView],
    config: &MaskVoteConfig,
    render_options: &RenderOptions,
) -> Result<VoteCounts> {
    config.validate()?;
    cloud.validate()?;
    if views.len() < config.min_views {
        return Err(Error::invalid(format!(
            "{} views given, min_views is {}",
            views.len(),
            config.min_views
        )));
    }
    let n = cloud.len();
    let mut counts = VoteCounts {
        visible: vec![0; n],
        inside: vec![0; n],
    };
    for v in views {
        let (w, h) = (v.camera.width as usize, v.camera.height as usize);
        if v.mask.width != w || v.mask.height != h {
            return Err(Error::invalid(format!(
                "mask for view '{}' is {}x{}, camera is {w}x{h}",
                v.id, v.mask.width, v.mask.height
            )));
        }
        let depth = render(cloud, &v.camera, render_options)?.depth;
        let mask = v.mask.dilate(config.dilation_radius);
        let votes: Vec<Option<bool>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (x, y, z) = v.camera.pixel_of(&cloud.positions[i])?;
                (z <= depth.get(x, y, 0) + config.depth_tolerance).then(|| mask.get(x, y))
            })
            .collect();
        for (i, vote) in votes.into_iter().enumerate() {
            if let Some(hit) = vote {
                counts.visible[i] += 1;
                counts.inside[i] += hit as u32;
            }
        }
    }
    if n > 0 && counts.visible.iter().all(|&c| c == 0) {
        return Err(Error::invalid("no Gaussian is visible in any view"));
    }
    Ok(counts)
}

pub fn label_person_gaussians(
    cloud: &GaussianCloud,
    views: &[MaskView],
    config: &MaskVoteConfig,
    render_options: &RenderOptions,
) -> Result<Vec<bool>> {
    Ok(count_votes(cloud, views, config, render_options)?.flags(config))
}

/// Drops flagged Gaussians, keeping the order of the rest.
pub fn remove_flagged(cloud: &GaussianCloud, flags: &[bool]) -> Result<GaussianCloud> {
    if flags.len() != cloud.len() {
        return Err(Error::invalid(format!("{} flags for {} Gaussians", flags.len(), cloud.len())));
    }
    Ok(cloud.filter(|i| !flags[i]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemovalCoverage {
    pub view: String,
    /// Fraction of pixels where the removed Gaussians alone reach alpha ≥ 0.5.
    pub removed_fraction: f64,
}

/// Screen coverage of the removed set per view, for auditing hole filling.
pub fn removal_report(
    cloud: &GaussianCloud,
    flags: &[bool],
    views: &[MaskView],
    render_options: &RenderOptions,
) -> Result<Vec<RemovalCoverage>> {
    if flags.len() != cloud.len() {
        return Err(Error::invalid(format!("{} flags for {} Gaussians", flags.len(), cloud.len())));
    }
    let removed = cloud.filter(|i| flags[i]);
    views
        .iter()
        .map(|v| {
            let alpha = render(&removed, &v.camera, render_options)?.alpha;
            let covered = alpha.data.iter().filter(|&&a| a >= 0.5).count();
            Ok(RemovalCoverage {
                view: v.id.clone(),
                removed_fraction: covered as f64 / alpha.data.len().max(1) as f64,
            })
        })
        .collect()
}

pub fn removal_report_csv(report: &[RemovalCoverage]) -> String {
    let mut out = String::from("view,removed_fraction\n");
    for r in report {
        let _ = writeln!(out, "{},{}", r.view, r.removed_fraction);
    }
    out
}
