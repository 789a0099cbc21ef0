//! Text messages (JSON objects tagged by `"type"`). Frames travel as binary
//! messages, see [`crate::frame`].

use headsplat_core::camera::CameraRig;
use headsplat_core::config::FrameFormat;
use headsplat_core::head::{HeadModel, HeadParams};
use headsplat_core::math::{serde_mat3, serde_vec3, Mat3, Vec3};
use headsplat_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Partial parameter update; absent fields keep their current value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamUpdate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_mat3")]
    pub global_rotation: Option<Mat3>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_vec3")]
    pub global_translation: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraRig>,
}

impl ParamUpdate {
    /// Checks dimensions against the model without needing the current state.
    pub fn validate(&self, model: &HeadModel) -> Result<()> {
        let check = |name: &str, got: Option<usize>, want: usize| match got {
            Some(n) if n != want => Err(Error::invalid(format!("{name} has {n} entries, model expects {want}"))),
            _ => Ok(()),
        };
        check("shape", self.shape.as_ref().map(Vec::len), model.n_shape)?;
        check("expression", self.expression.as_ref().map(Vec::len), model.n_expression)?;
        check("pose", self.pose.as_ref().map(Vec::len), model.n_joints())?;
        let finite = self
            .shape
            .iter()
            .chain(&self.expression)
            .flatten()
            .chain(self.pose.iter().flatten().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("parameters must be finite"));
        }
        if let Some(r) = &self.global_rotation {
            headsplat_core::math::check_rotation(r, "global_rotation")?;
        }
        if let Some(c) = &self.camera {
            c.validate()?;
        }
        Ok(())
    }

    pub fn apply(&self, params: &mut HeadParams, camera: &mut CameraRig) {
        if let Some(v) = &self.shape {
            params.shape.clone_from(v);
        }
        if let Some(v) = &self.expression {
            params.expression.clone_from(v);
        }
        if let Some(v) = &self.pose {
            params.pose.clone_from(v);
        }
        if let Some(r) = self.global_rotation {
            params.global_rotation = r;
        }
        if let Some(t) = self.global_translation {
            params.global_translation = t;
        }
        if let Some(c) = &self.camera {
            *camera = c.clone();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    SetParams(ParamUpdate),
    /// Track file on the server's filesystem.
    PlayTrack { path: String },
    GetStats,
    SetFormat { format: FrameFormat },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub frames_rendered: u64,
    /// Frames not delivered because a client's buffer was full.
    pub frames_dropped: u64,
    pub mean_frame_ms: f64,
    pub p95_frame_ms: f64,
    /// Frames rendered divided by the time since the first render started.
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        width: u32,
        height: u32,
        format: FrameFormat,
        n_shape: usize,
        n_expression: usize,
        n_joints: usize,
    },
    Stats(Stats),
    Error { message: String },
    FormatChanged { format: FrameFormat },
    TrackStarted { frames: usize },
    TrackFinished { frame_ids: Vec<u32> },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

mod opt_mat3 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Mat3>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match m {
            Some(m) => serde_mat3::serialize(m, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Mat3>, D::Error> {
        serde_mat3::deserialize(d).map(Some)
    }
}

mod opt_vec3 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec3>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(v) => serde_vec3::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec3>, D::Error> {
        serde_vec3::deserialize(d).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_client_messages() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"set_params","expression":[0.5,0.0]}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::SetParams(ParamUpdate {
                expression: Some(vec![0.5, 0.0]),
                ..Default::default()
            })
        );
        let m: ClientMessage = serde_json::from_str(r#"{"type":"set_format","format":"png"}"#).unwrap();
        assert_eq!(m, ClientMessage::SetFormat { format: FrameFormat::Png });
        let m: ClientMessage =
            serde_json::from_str(r#"{"type":"set_params","global_translation":[0,0,0.1]}"#).unwrap();
        assert!(matches!(m, ClientMessage::SetParams(u) if u.global_translation == Some(Vec3::new(0.0, 0.0, 0.1))));
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"set_params","bogus":1}"#).is_err());
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"dance"}"#).is_err());
    }

    #[test]
    fn server_messages_are_tagged() {
        let s = ServerMessage::Error { message: "x".into() }.to_json();
        assert_eq!(s, r#"{"type":"error","message":"x"}"#);
        let s = ServerMessage::Stats(Stats::default()).to_json();
        assert!(s.starts_with(r#"{"type":"stats","frames_rendered":0"#));
    }
}
