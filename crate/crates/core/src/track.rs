//! Animation tracks: JSON `{"frames":[{"time":0.0,"params":{..},"camera":{..}?}, ...]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::head::{HeadModel, HeadParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    /// Seconds from the start of the track.
    pub time: f64,
    pub params: HeadParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraRig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnimationTrack {
    pub frames: Vec<TrackFrame>,
}

impl AnimationTrack {
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.frames.windows(2).enumerate() {
            if !(w[1].time > w[0].time) {
                return Err(Error::invariant(
                    "frames",
                    format!("timestamps must strictly increase (frame {} at {} after {})", i + 1, w[1].time, w[0].time),
                ));
            }
        }
        if let Some(f) = self.frames.iter().find(|f| !f.time.is_finite()) {
            return Err(Error::invariant("frames", format!("non-finite timestamp {}", f.time)));
        }
        for f in &self.frames {
            if let Some(c) = &f.camera {
                c.validate()?;
            }
        }
        Ok(())
    }

    /// Fills omitted parameter vectors with zeros and checks dimensions.
    pub fn conform(mut self, model: &HeadModel) -> Result<Self> {
        for f in &mut self.frames {
            f.params = std::mem::replace(&mut f.params, HeadParams::neutral(model)).conform(model)?;
        }
        Ok(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<AnimationTrack> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let track: AnimationTrack =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        track.validate()?;
        Ok(track)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse("track", e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// A smooth synthetic performance: jaw/neck motion and expression waves.
    pub fn demo(model: &HeadModel, frames: usize, fps: f64) -> AnimationTrack {
        let frames = (0..frames)
            .map(|k| {
                let t = k as f64 / fps;
                let mut p = HeadParams::neutral(model);
                for (i, e) in p.expression.iter_mut().enumerate() {
                    *e = 1.5 * (t * (1.0 + 0.3 * i as f64) * std::f64::consts::TAU * 0.5).sin();
                }
                for (j, a) in p.pose.iter_mut().enumerate() {
                    if j != model.root_joint_index {
                        a[0] = 0.15 * (t * std::f64::consts::TAU * 0.4 + j as f64).sin();
                    }
                }
                TrackFrame {
                    time: t,
                    params: p,
                    camera: None,
                }
            })
            .collect();
        AnimationTrack { frames }
    }
}
