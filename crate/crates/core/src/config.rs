//! Engine-wide configuration file (TOML). Every key is optional; absent keys
//! take the defaults below, and the resolved configuration written next to
//! outputs loads back to itself.
//!
//! ```toml
//! [render]            # background, [render.constants] tile_size, lowpass, ...
//! [optim]             # learning_rates, iterations, weights, mask_mode, seed, ...
//! [mask_vote]         # tau, min_views, depth_tolerance, dilation_radius
//! [service]           # bind, fps_cap, format = "raw" | "png"
//! [paths]             # output_dir, ui_dir
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimConfig;
use crate::raster::RenderOptions;
use crate::tools::MaskVoteConfig;

/// Name of the resolved configuration written alongside outputs.
pub const RESOLVED_CONFIG_NAME: &str = "resolved_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    #[default]
    Raw,
    Png,
}

impl FrameFormat {
    pub fn tag(self) -> u32 {
        match self {
            FrameFormat::Raw => 0,
            FrameFormat::Png => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<FrameFormat> {
        match tag {
            0 => Ok(FrameFormat::Raw),
            1 => Ok(FrameFormat::Png),
            t => Err(Error::invalid(format!("unknown frame format tag {t}"))),
        }
    }
}

impl std::str::FromStr for FrameFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<FrameFormat> {
        match s {
            "raw" => Ok(FrameFormat::Raw),
            "png" => Ok(FrameFormat::Png),
            _ => Err(Error::invalid(format!("unknown frame format '{s}' (raw | png)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Upper bound on rendered frames per second.
    pub fps_cap: f64,
    pub format: FrameFormat,
    /// Frames buffered per client before new ones are dropped.
    pub client_buffer: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1:8787".into(),
            fps_cap: 30.0,
            format: FrameFormat::Raw,
            client_buffer: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub output_dir: PathBuf,
    /// Static UI bundle served by `serve --ui` when no directory is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            output_dir: PathBuf::from("out"),
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub render: RenderOptions,
    pub optim: OptimConfig,
    pub mask_vote: MaskVoteConfig,
    pub service: ServiceConfig,
    pub paths: PathsConfig,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.render.constants.validate()?;
        if !self.render.background.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("render.background must be finite"));
        }
        self.optimizer().validate()?;
        self.mask_vote.validate()?;
        if !(self.service.fps_cap > 0.0) || self.service.client_buffer == 0 {
            return Err(Error::invalid("service.fps_cap and service.client_buffer must be positive"));
        }
        Ok(())
    }

    /// Optimizer settings with this configuration's render options.
    pub fn optimizer(&self) -> OptimConfig {
        OptimConfig {
            render: self.render,
            ..self.optim.clone()
        }
    }

    pub fn from_toml(text: &str, what: &str) -> Result<EngineConfig> {
        let c: EngineConfig = toml::from_str(text).map_err(|e| Error::parse(what, e.message()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("engine config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EngineConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Defaults, or the file when given.
    pub fn load_or_default(path: Option<&Path>) -> Result<EngineConfig> {
        path.map_or_else(|| Ok(EngineConfig::default()), Self::load)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(RESOLVED_CONFIG_NAME);
        self.save(&p)?;
        Ok(p)
    }
}
