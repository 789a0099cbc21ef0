//! Splat point files: binary little-endian PLY with the usual per-point
//! float properties (`x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity
//! scale_0..2 rot_0..3`). `f_rest` is channel-major: all 15 higher-order
//! red coefficients, then green, then blue.

use std::fs;
use std::path::Path;

use super::{GaussianCloud, Group};
use crate::error::{Error, Result};
use crate::math::{Quat, ShCoefficients, Vec3, SH_COEFFS};

const REST: usize = SH_COEFFS - 1;

fn property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].map(String::from).to_vec();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * REST).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    count: usize,
    props: Vec<(String, Scalar, usize)>,
    stride: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], what: &str) -> Result<Header> {
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(what, "header is not terminated by end_header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| Error::parse(what, "header is not ASCII"))?
            .trim_end_matches('\r')
            .to_string();
        pos += end + 1;
        if line == "end_header" {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(Error::parse(what, "missing 'ply' magic"));
    }

    let mut format_ok = false;
    let mut count = None;
    let mut in_vertex = false;
    let mut seen_element = false;
    let mut props = Vec::new();
    let mut stride = 0;
    for line in &lines[1..] {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", fmt, _] => {
                return Err(Error::parse(what, format!("unsupported format '{fmt}'")));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                if *name == "vertex" {
                    if seen_element {
                        return Err(Error::parse(what, "the vertex element must come first"));
                    }
                    count = Some(
                        n.parse::<usize>()
                            .map_err(|_| Error::parse(what, format!("bad vertex count '{n}'")))?,
                    );
                    in_vertex = true;
                } else {
                    in_vertex = false;
                }
                seen_element = true;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::parse(what, "list properties on vertices are not supported"));
            }
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(*name, format!("unknown property type '{ty}'")))?;
                props.push((name.to_string(), s, stride));
                stride += s.size();
            }
            ["property", ..] => {}
            _ => return Err(Error::parse(what, format!("unrecognized header line '{line}'"))),
        }
    }
    if !format_ok {
        return Err(Error::parse(what, "missing format line"));
    }
    let count = count.ok_or_else(|| Error::parse("vertex", "no vertex element in header"))?;
    Ok(Header {
        count,
        props,
        stride,
        data_start: pos,
    })
}

/// Loads a splat file; every point is tagged `background`.
pub fn load_splat_file(path: impl AsRef<Path>) -> Result<GaussianCloud> {
    load_splat_file_as(path, Group::Background)
}

pub fn load_splat_file_as(path: impl AsRef<Path>, group: Group) -> Result<GaussianCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let what = path.display().to_string();
    decode(&bytes, &what, group)
}

fn decode(bytes: &[u8], what: &str, group: Group) -> Result<GaussianCloud> {
    let h = parse_header(bytes, what)?;
    let names = property_names();
    let mut cols = Vec::with_capacity(names.len());
    for name in &names {
        if name.starts_with('n') && name.len() == 2 {
            cols.push(None); // normals are optional and ignored
            continue;
        }
        let p = h
            .props
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::parse(name.as_str(), "required property missing"))?;
        cols.push(Some((p.1, p.2)));
    }
    let need = h.count * h.stride;
    let data = &bytes[h.data_start..];
    if data.len() < need {
        return Err(Error::parse(
            "vertex",
            format!(
                "header declares {} points ({need} bytes) but only {} bytes follow",
                h.count,
                data.len()
            ),
        ));
    }

    let mut cloud = GaussianCloud::with_capacity(h.count);
    let mut vals = vec![0.0; names.len()];
    for rec in data[..need].chunks_exact(h.stride) {
        for (v, c) in vals.iter_mut().zip(&cols) {
            *v = c.map_or(0.0, |(s, off)| s.read(&rec[off..]));
        }
        let mut sh = ShCoefficients::default();
        sh.0[0] = [vals[6], vals[7], vals[8]];
        for ch in 0..3 {
            for k in 1..SH_COEFFS {
                sh.0[k][ch] = vals[9 + ch * REST + (k - 1)];
            }
        }
        let o = 9 + 3 * REST;
        cloud.positions.push(Vec3::new(vals[0], vals[1], vals[2]));
        cloud.opacity_logits.push(vals[o]);
        cloud.log_scales.push(Vec3::new(vals[o + 1], vals[o + 2], vals[o + 3]));
        cloud.rotations.push(Quat::new(vals[o + 4], vals[o + 5], vals[o + 6], vals[o + 7]));
        cloud.sh.push(sh);
        cloud.group.push(group);
        cloud.person.push(false);
    }
    Ok(cloud)
}

/// Writes all float properties as `f32`; normals are written as zero.
pub fn save_splat_file(cloud: &GaussianCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    cloud.validate()?;
    fs::write(path, encode(cloud)).map_err(|e| Error::io(path, e))
}

fn encode(cloud: &GaussianCloud) -> Vec<u8> {
    let names = property_names();
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        cloud.len()
    );
    for n in &names {
        out.push_str(&format!("property float {n}\n"));
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    bytes.reserve(cloud.len() * names.len() * 4);
    let mut put = |v: f64| bytes.extend_from_slice(&(v as f32).to_le_bytes());
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let sh = &cloud.sh[i];
        [p.x, p.y, p.z, 0.0, 0.0, 0.0].into_iter().for_each(&mut put);
        sh.0[0].into_iter().for_each(&mut put);
        for ch in 0..3 {
            for k in 1..SH_COEFFS {
                put(sh.0[k][ch]);
            }
        }
        put(cloud.opacity_logits[i]);
        let s = cloud.log_scales[i];
        [s.x, s.y, s.z].into_iter().for_each(&mut put);
        let q = cloud.rotations[i];
        [q.w, q.x, q.y, q.z].into_iter().for_each(&mut put);
    }
    bytes
}
