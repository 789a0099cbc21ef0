//! Head asset container.
//!
//! ```text
//! HEADSPLAT-ASSET 1\n
//! {"root_joint_index":0,"fields":[{"name":..,"dtype":"f32","shape":[..],"offset":..,"nbytes":..},..]}\n
//! <little-endian blob>
//! ```
//!
//! Offsets are relative to the first blob byte. `kinematic_parents` is
//! stored as `u32` with `0xFFFFFFFF` marking the root.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HeadModel;
use crate::error::{Error, Result};

const MAGIC: &str = "HEADSPLAT-ASSET 1";
const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    root_joint_index: usize,
    fields: Vec<FieldHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    nbytes: usize,
}

enum Blob<'a> {
    F32(&'a [f32]),
    U32(Vec<u32>),
}

pub fn save_head_asset(model: &HeadModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_head_asset(path: impl AsRef<Path>) -> Result<HeadModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn encode(model: &HeadModel) -> Result<Vec<u8>> {
    model.validate()?;
    let (v, j) = (model.n_vertices(), model.n_joints());
    let faces: Vec<u32> = model.faces.as_flattened().to_vec();
    let parents: Vec<u32> = model
        .kinematic_parents
        .iter()
        .map(|&p| if p < 0 { NO_PARENT } else { p as u32 })
        .collect();
    let fields: Vec<(&str, Vec<usize>, Blob)> = vec![
        ("template_vertices", vec![v, 3], Blob::F32(model.template_vertices.as_flattened())),
        ("faces", vec![model.n_faces(), 3], Blob::U32(faces)),
        ("shape_basis", vec![v, 3, model.n_shape], Blob::F32(&model.shape_basis)),
        (
            "expression_basis",
            vec![v, 3, model.n_expression],
            Blob::F32(&model.expression_basis),
        ),
        ("pose_basis", vec![v, 3, model.n_pose_features()], Blob::F32(&model.pose_basis)),
        ("joint_regressor", vec![j, v], Blob::F32(&model.joint_regressor)),
        ("skinning_weights", vec![v, j], Blob::F32(&model.skinning_weights)),
        ("kinematic_parents", vec![j], Blob::U32(parents)),
    ];

    let mut blob = Vec::new();
    let mut headers = Vec::new();
    for (name, shape, data) in fields {
        let offset = blob.len();
        let dtype = match data {
            Blob::F32(xs) => {
                xs.iter().for_each(|x| blob.extend_from_slice(&x.to_le_bytes()));
                "f32"
            }
            Blob::U32(xs) => {
                xs.iter().for_each(|x| blob.extend_from_slice(&x.to_le_bytes()));
                "u32"
            }
        };
        headers.push(FieldHeader {
            name: name.to_string(),
            dtype: dtype.to_string(),
            shape,
            offset,
            nbytes: blob.len() - offset,
        });
    }
    let header = Header {
        root_joint_index: model.root_joint_index,
        fields: headers,
    };
    let mut out = format!("{MAGIC}\n").into_bytes();
    out.extend(serde_json::to_vec(&header).map_err(|e| Error::parse("head asset header", e))?);
    out.push(b'\n');
    out.extend(blob);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<HeadModel> {
    let what = "head asset";
    let (magic, rest) = split_line(bytes).ok_or_else(|| Error::parse(what, "missing magic line"))?;
    if magic != MAGIC.as_bytes() {
        return Err(Error::parse(what, "not a head asset (bad magic line)"));
    }
    let (header_bytes, blob) =
        split_line(rest).ok_or_else(|| Error::parse(what, "missing header line"))?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| Error::parse("head asset header", e))?;

    let field = |name: &str, dtype: &str| -> Result<(&FieldHeader, &[u8])> {
        let f = header
            .fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::parse(name, "field missing from head asset"))?;
        if f.dtype != dtype {
            return Err(Error::parse(name, format!("dtype {} (expected {dtype})", f.dtype)));
        }
        let count: usize = f.shape.iter().product();
        if f.nbytes != count * 4 {
            return Err(Error::parse(
                name,
                format!("byte length {} does not match shape {:?}", f.nbytes, f.shape),
            ));
        }
        let data = f
            .offset
            .checked_add(f.nbytes)
            .and_then(|end| blob.get(f.offset..end))
            .ok_or_else(|| Error::parse(name, "data range lies outside the file"))?;
        Ok((f, data))
    };
    let read_f32 = |name: &str| -> Result<(Vec<usize>, Vec<f32>)> {
        let (f, data) = field(name, "f32")?;
        let vals = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((f.shape.clone(), vals))
    };
    let read_u32 = |name: &str| -> Result<(Vec<usize>, Vec<u32>)> {
        let (f, data) = field(name, "u32")?;
        let vals = data
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((f.shape.clone(), vals))
    };
    let expect_shape = |name: &str, got: &[usize], want: &[usize]| -> Result<()> {
        if got == want {
            Ok(())
        } else {
            Err(Error::parse(name, format!("shape {got:?}, expected {want:?}")))
        }
    };

    let (tshape, template) = read_f32("template_vertices")?;
    if tshape.len() != 2 || tshape[1] != 3 {
        return Err(Error::parse("template_vertices", format!("shape {tshape:?}, expected [V, 3]")));
    }
    let v = tshape[0];
    let (pshape, parents) = read_u32("kinematic_parents")?;
    if pshape.len() != 1 {
        return Err(Error::parse("kinematic_parents", format!("shape {pshape:?}, expected [J]")));
    }
    let j = pshape[0];
    let (fshape, faces) = read_u32("faces")?;
    if fshape.len() != 2 || fshape[1] != 3 {
        return Err(Error::parse("faces", format!("shape {fshape:?}, expected [F, 3]")));
    }
    let basis = |name: &str| -> Result<(usize, Vec<f32>)> {
        let (shape, data) = read_f32(name)?;
        if shape.len() != 3 || shape[0] != v || shape[1] != 3 {
            return Err(Error::parse(name, format!("shape {shape:?}, expected [{v}, 3, K]")));
        }
        Ok((shape[2], data))
    };
    let (n_shape, shape_basis) = basis("shape_basis")?;
    let (n_expression, expression_basis) = basis("expression_basis")?;
    let (n_pose, pose_basis) = basis("pose_basis")?;
    expect_shape("pose_basis", &[n_pose], &[9 * j.saturating_sub(1)])?;
    let (rshape, joint_regressor) = read_f32("joint_regressor")?;
    expect_shape("joint_regressor", &rshape, &[j, v])?;
    let (wshape, skinning_weights) = read_f32("skinning_weights")?;
    expect_shape("skinning_weights", &wshape, &[v, j])?;

    let model = HeadModel {
        template_vertices: template.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        faces: faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        n_shape,
        n_expression,
        shape_basis,
        expression_basis,
        pose_basis,
        joint_regressor,
        skinning_weights,
        kinematic_parents: parents
            .iter()
            .map(|&p| if p == NO_PARENT { -1 } else { p as i32 })
            .collect(),
        root_joint_index: header.root_joint_index,
    };
    model.validate()?;
    Ok(model)
}

fn split_line(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((&bytes[..i], &bytes[i + 1..]))
}
