//! Composed scenes on disk and the built-in synthetic fixture.
//!
//! ```text
//! <dir>/scene.toml          head_transform (4×4 row-major) + named cameras
//! <dir>/head.asset          head model
//! <dir>/head.ply            bound head Gaussians (+ head.labels.json)
//! <dir>/binding.json        triangle binding of head.ply
//! <dir>/background.ply      background Gaussians (+ background.labels.json)
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::animate::HeadRig;
use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::head::{load_head_asset, make_synthetic_head, pose_mesh, save_head_asset, HeadModel, HeadParams};
use crate::imageio::Mask;
use crate::math::{logit, Quat, RigidTransform, ShCoefficients, Vec3};
use crate::optim::{GuidanceRecord, GuidanceSet, Provenance};
use crate::raster::{render, RenderOptions};
use crate::scene::{
    bind_to_mesh_with, labels_path, load_labels, load_splat_file_as, merge_scenes, save_labels, save_splat_file,
    BindOptions, Gaussian, GaussianCloud, Group, TriangleBinding,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedCamera {
    pub id: String,
    #[serde(flatten)]
    pub camera: CameraRig,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    head_transform: RigidTransform,
    #[serde(default)]
    cameras: Vec<NamedCamera>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub model: HeadModel,
    /// Bound head Gaussians in head space (neutral pose).
    pub head: GaussianCloud,
    pub binding: TriangleBinding,
    pub background: GaussianCloud,
    /// Head space → background world.
    pub head_transform: RigidTransform,
    pub cameras: Vec<NamedCamera>,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.head.validate()?;
        self.background.validate()?;
        self.binding.validate()?;
        if self.binding.len() != self.head.len() {
            return Err(Error::invariant(
                "binding",
                format!("binds {} Gaussians, head cloud has {}", self.binding.len(), self.head.len()),
            ));
        }
        if self.binding.face_count != self.model.n_faces() {
            return Err(Error::invariant("binding", "face count differs from the head model"));
        }
        for c in &self.cameras {
            c.camera.validate()?;
        }
        Ok(())
    }

    pub fn rig(&self) -> HeadRig<'_> {
        HeadRig {
            model: &self.model,
            binding: &self.binding,
            placement: self.head_transform,
        }
    }

    pub fn camera(&self, id: &str) -> Result<&CameraRig> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .map(|c| &c.camera)
            .ok_or_else(|| {
                let known: Vec<&str> = self.cameras.iter().map(|c| c.id.as_str()).collect();
                Error::invalid(format!("unknown camera '{id}' (known: {})", known.join(", ")))
            })
    }

    /// Head block (transformed) followed by the background.
    pub fn composed(&self) -> GaussianCloud {
        merge_scenes(&self.head, &self.background, &self.head_transform)
    }

    /// Composed cloud with the head driven by `params`.
    pub fn posed(&self, params: &HeadParams) -> Result<GaussianCloud> {
        let mut cloud = self.composed();
        self.rig().drive(&mut cloud, params)?;
        Ok(cloud)
    }

    pub fn neutral_params(&self) -> HeadParams {
        HeadParams::neutral(&self.model)
    }

    /// Renders `cloud` (a composed cloud of this bundle, head first) from
    /// every named camera with the head driven by `params`. Masks cover
    /// pixels where the head alone reaches alpha ≥ 0.5.
    pub fn render_guidance(
        &self,
        cloud: &GaussianCloud,
        params: &HeadParams,
        options: &RenderOptions,
    ) -> Result<GuidanceSet> {
        let mut posed = cloud.clone();
        self.rig().drive(&mut posed, params)?;
        let head_only = posed.filter(|i| posed.group[i] == Group::Head);
        let mut records = Vec::with_capacity(self.cameras.len());
        for c in &self.cameras {
            let image = render(&posed, &c.camera, options)?.color;
            let alpha = render(&head_only, &c.camera, options)?.alpha;
            let mask = Mask {
                width: alpha.width,
                height: alpha.height,
                data: alpha.data.iter().map(|&a| a >= 0.5).collect(),
            };
            records.push(GuidanceRecord {
                id: c.id.clone(),
                image,
                mask,
                camera: c.camera.clone(),
                params: params.clone(),
                provenance: Provenance::Raw,
            });
        }
        Ok(GuidanceSet { records })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let scene = SceneFile {
            head_transform: self.head_transform,
            cameras: self.cameras.clone(),
        };
        let text = toml::to_string(&scene).map_err(|e| Error::parse("scene.toml", e))?;
        let p = dir.join("scene.toml");
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        save_head_asset(&self.model, dir.join("head.asset"))?;
        for (name, cloud) in [("head.ply", &self.head), ("background.ply", &self.background)] {
            let p = dir.join(name);
            save_splat_file(cloud, &p)?;
            save_labels(cloud, labels_path(&p))?;
        }
        self.binding.save(dir.join("binding.json"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<SceneBundle> {
        let dir = dir.as_ref();
        let p = dir.join("scene.toml");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let scene: SceneFile = toml::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e.message()))?;
        let load_cloud = |name: &str, group: Group| -> Result<GaussianCloud> {
            let p = dir.join(name);
            let mut c = load_splat_file_as(&p, group)?;
            let lp = labels_path(&p);
            if lp.exists() {
                load_labels(&mut c, &lp)?;
            }
            Ok(c)
        };
        let bundle = SceneBundle {
            model: load_head_asset(dir.join("head.asset"))?,
            head: load_cloud("head.ply", Group::Head)?,
            binding: TriangleBinding::load(dir.join("binding.json"))?,
            background: load_cloud("background.ply", Group::Background)?,
            head_transform: scene.head_transform,
            cameras: scene.cameras,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Deterministic synthetic scene: a 642-vertex head in front of a
    /// textured back wall, eight cameras on an arc (`cam0` frontal).
    pub fn fixture(seed: u64) -> Result<SceneBundle> {
        Self::fixture_sized(seed, 642, 128)
    }

    pub fn fixture_sized(seed: u64, n_vertices: usize, image_size: u32) -> Result<SceneBundle> {
        let model = make_synthetic_head(seed, n_vertices, 5, 8, 6)?;
        let neutral = pose_mesh(&model, &HeadParams::neutral(&model))?;
        let bound = bind_to_mesh_with(
            &neutral,
            &BindOptions {
                initial_opacity: 0.95,
                ..BindOptions::default()
            },
        )?;
        let mut head = bound.cloud;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for i in 0..head.len() {
            let p = head.positions[i];
            // skin-like base with smooth variation plus a little noise
            let t = 0.5 + 0.5 * (p.y * 18.0).sin() * (p.x * 14.0).cos();
            let rgb = [
                0.75 + 0.15 * t + rng.random_range(-0.03..0.03),
                0.55 + 0.12 * t + rng.random_range(-0.03..0.03),
                0.45 + 0.10 * (1.0 - t) + rng.random_range(-0.03..0.03),
            ];
            head.sh[i] = ShCoefficients::from_dc(ShCoefficients::dc_for_color(rgb));
        }

        let mut background = GaussianCloud::default();
        let n = 24;
        for iy in 0..n {
            for ix in 0..n {
                let x = -0.45 + 0.9 * ix as f64 / (n - 1) as f64;
                let y = -0.45 + 0.9 * iy as f64 / (n - 1) as f64;
                let check = ((ix / 4 + iy / 4) % 2) as f64;
                let rgb = [
                    0.2 + 0.5 * check + rng.random_range(0.0..0.1),
                    0.3 + 0.2 * (y + 0.5),
                    0.6 - 0.4 * check + rng.random_range(0.0..0.1),
                ];
                background.push(Gaussian {
                    position: Vec3::new(x, y, -0.35 + rng.random_range(-0.01..0.01)),
                    rotation: Quat::from_axis_angle(&Vec3::new(0.0, 0.0, rng.random_range(0.0..3.0))),
                    log_scale: Vec3::new(0.025f64.ln(), 0.02f64.ln(), 0.004f64.ln()),
                    opacity_logit: logit(0.9),
                    sh: ShCoefficients::from_dc(ShCoefficients::dc_for_color(rgb)),
                    group: Group::Background,
                });
            }
        }

        let mut cameras = Vec::new();
        for k in 0..8 {
            let az = (k as f64 - 3.5) * 0.12 + if k == 0 { 0.42 } else { 0.0 };
            let eye = Vec3::new(0.55 * az.sin(), 0.03, 0.55 * az.cos());
            let cam = CameraRig::look_at(eye, Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), image_size, image_size, 40.0)?;
            cameras.push(NamedCamera {
                id: format!("cam{k}"),
                camera: cam,
            });
        }
        let bundle = SceneBundle {
            model,
            head,
            binding: bound.binding,
            background,
            head_transform: RigidTransform::IDENTITY,
            cameras,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}
