//! Guidance-set directories:
//!
//! ```text
//! cameras.json        {"views":[{"id":"000","provenance":"raw","width":..,"fx":..,"world_to_camera":[[..4x4..]],..}]}
//! images/<id>.png     RGB guidance image
//! masks/<id>.png      facial mask, nonzero = trainable region
//! params/<id>.json    HeadParams {"shape":[..],"expression":[..],"pose":[[..],..], ...}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::head::HeadParams;
use crate::imageio::{load_mask, load_png_rgb, save_mask, save_png, FloatImage, Mask};

/// Where a guidance image came from; bookkeeping only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Raw,
    Refined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRecord {
    pub id: String,
    pub image: FloatImage,
    pub mask: Mask,
    pub camera: CameraRig,
    pub params: HeadParams,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GuidanceSet {
    pub records: Vec<GuidanceRecord>,
}

#[derive(Serialize, Deserialize)]
struct CamerasFile {
    views: Vec<ViewEntry>,
}

#[derive(Serialize, Deserialize)]
struct ViewEntry {
    id: String,
    #[serde(default)]
    provenance: Provenance,
    #[serde(flatten)]
    camera: CameraRig,
}

impl GuidanceSet {
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::invalid("guidance set has no records"));
        }
        for r in &self.records {
            r.camera.validate()?;
            let (w, h) = (r.camera.width as usize, r.camera.height as usize);
            if r.image.width != w || r.image.height != h || r.image.channels != 3 {
                return Err(Error::invariant(
                    "images",
                    format!("view {}: image {}x{} but camera {w}x{h}", r.id, r.image.width, r.image.height),
                ));
            }
            if r.mask.width != w || r.mask.height != h {
                return Err(Error::invariant(
                    "masks",
                    format!("view {}: mask {}x{} but camera {w}x{h}", r.id, r.mask.width, r.mask.height),
                ));
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<GuidanceSet> {
        let dir = dir.as_ref();
        let cams_path = dir.join("cameras.json");
        let text = fs::read_to_string(&cams_path).map_err(|e| Error::io(&cams_path, e))?;
        let cams: CamerasFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(cams_path.display().to_string(), e))?;
        let mut records = Vec::with_capacity(cams.views.len());
        for v in cams.views {
            let params_path = dir.join("params").join(format!("{}.json", v.id));
            let text = fs::read_to_string(&params_path).map_err(|e| Error::io(&params_path, e))?;
            let params: HeadParams =
                serde_json::from_str(&text).map_err(|e| Error::parse(params_path.display().to_string(), e))?;
            records.push(GuidanceRecord {
                image: load_png_rgb(dir.join("images").join(format!("{}.png", v.id)))?,
                mask: load_mask(dir.join("masks").join(format!("{}.png", v.id)))?,
                id: v.id,
                camera: v.camera,
                params,
                provenance: v.provenance,
            });
        }
        let set = GuidanceSet { records };
        set.validate()?;
        Ok(set)
    }

    /// Writes the set; images are quantized to 8 bits.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for sub in ["images", "masks", "params"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let cams = CamerasFile {
            views: self
                .records
                .iter()
                .map(|r| ViewEntry {
                    id: r.id.clone(),
                    provenance: r.provenance,
                    camera: r.camera.clone(),
                })
                .collect(),
        };
        let p = dir.join("cameras.json");
        let text = serde_json::to_string_pretty(&cams).map_err(|e| Error::parse("cameras", e))?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        for r in &self.records {
            save_png(&r.image, dir.join("images").join(format!("{}.png", r.id)))?;
            save_mask(&r.mask, dir.join("masks").join(format!("{}.png", r.id)))?;
            let p = dir.join("params").join(format!("{}.json", r.id));
            let text = serde_json::to_string_pretty(&r.params).map_err(|e| Error::parse("params", e))?;
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
