//! Sidecar labels for splat files: `scene.ply` → `scene.labels.json`.
//!
//! ```json
//! {"version":1,"count":3,"points":[{"index":0,"group":"head","person":false}, ...]}
//! ```
//!
//! Points absent from the list keep their current labels.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GaussianCloud, Group};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct LabelFile {
    version: u32,
    count: usize,
    points: Vec<PointLabel>,
}

#[derive(Serialize, Deserialize)]
struct PointLabel {
    index: usize,
    group: Group,
    #[serde(default)]
    person: bool,
}

pub fn labels_path(splat_path: impl AsRef<Path>) -> PathBuf {
    splat_path.as_ref().with_extension("labels.json")
}

pub fn save_labels(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = LabelFile {
        version: 1,
        count: cloud.len(),
        points: (0..cloud.len())
            .map(|i| PointLabel {
                index: i,
                group: cloud.group[i],
                person: cloud.person[i],
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::parse("labels", e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_labels(cloud: &mut GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let what = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: LabelFile = serde_json::from_str(&text).map_err(|e| Error::parse(&what, e))?;
    if file.count != cloud.len() {
        return Err(Error::parse(
            "count",
            format!("labels describe {} points, cloud has {}", file.count, cloud.len()),
        ));
    }
    for p in file.points {
        if p.index >= cloud.len() {
            return Err(Error::parse("index", format!("{} out of range", p.index)));
        }
        cloud.group[p.index] = p.group;
        cloud.person[p.index] = p.person;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::tests::random_cloud;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = labels_path(dir.path().join("scene.ply"));
        assert!(p.to_string_lossy().ends_with("scene.labels.json"));
        let mut c = random_cloud(&mut ChaCha8Rng::seed_from_u64(1), 6, Group::Background);
        c.group[2] = Group::Head;
        c.person[4] = true;
        save_labels(&c, &p).unwrap();
        let mut d = c.clone();
        d.set_group(Group::Background);
        d.person.fill(false);
        load_labels(&mut d, &p).unwrap();
        assert_eq!(c, d);
        d.positions.pop();
        d.group.pop();
        assert!(load_labels(&mut d, &p).is_err());
    }
}
