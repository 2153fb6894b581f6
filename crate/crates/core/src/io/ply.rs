//! Binary little-endian PLY in the common 3DGS vertex layout.
//!
//! Properties are written in the usual order (`x y z nx ny nz f_dc_* f_rest_*
//! opacity scale_* rot_*`). Files produced here carry a
//! `comment scenesplat activation linear` line and store opacity and scale
//! directly; files without it are taken to use logit opacity and log scale,
//! as the reference trainer writes them.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::types::{sh_coeff_count, GaussianPrimitive, GaussianScene};

const LINEAR_MARKER: &str = "scenesplat activation linear";
const META_PREFIX: &str = "scenesplat meta ";

/// Storage precision of vertex properties.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PlyPrecision {
    #[default]
    Float,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

fn property_names(sh_degree: usize) -> Vec<String> {
    let rest = (sh_coeff_count(sh_degree) - 1) * 3;
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].map(String::from).to_vec();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

pub fn encode_ply(scene: &GaussianScene, precision: PlyPrecision) -> Result<Vec<u8>> {
    let degree = scene.sh_degree;
    let coeffs = sh_coeff_count(degree);
    let names = property_names(degree);
    let ty = match precision {
        PlyPrecision::Float => "float",
        PlyPrecision::Double => "double",
    };
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("comment {LINEAR_MARKER}\n"));
    for (k, v) in &scene.metadata {
        if k.contains(['\n', ' ', '=']) || v.contains('\n') {
            return Err(Error::invalid(format!("metadata entry {k:?} cannot be stored in a PLY comment")));
        }
        header.push_str(&format!("comment {META_PREFIX}{k}={v}\n"));
    }
    header.push_str(&format!("element vertex {}\n", scene.primitives.len()));
    for n in &names {
        header.push_str(&format!("property {ty} {n}\n"));
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    let mut put = |v: f64| match precision {
        PlyPrecision::Float => out.extend_from_slice(&(v as f32).to_le_bytes()),
        PlyPrecision::Double => out.extend_from_slice(&v.to_le_bytes()),
    };
    for (i, p) in scene.primitives.iter().enumerate() {
        if p.sh.len() != coeffs {
            return Err(Error::invalid(format!(
                "primitive {i} has {} SH coefficients, scene degree {degree} needs {coeffs}",
                p.sh.len()
            )));
        }
        p.position.iter().for_each(|&v| put(v));
        (0..3).for_each(|_| put(0.0));
        p.sh[0].iter().for_each(|&v| put(v));
        // f_rest is channel-major: all red coefficients, then green, then blue.
        for ch in 0..3 {
            for c in &p.sh[1..] {
                put(c[ch]);
            }
        }
        put(p.opacity);
        p.scale.iter().for_each(|&v| put(v));
        p.rotation.iter().for_each(|&v| put(v));
    }
    Ok(out)
}

struct Header {
    vertex_count: usize,
    properties: Vec<(String, ScalarType)>,
    linear: bool,
    metadata: Vec<(String, String)>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::parse("header", "missing end_header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::parse("header", "header is not UTF-8"))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse("header line 1", "missing `ply` magic")),
    }
    let mut header = Header {
        vertex_count: 0,
        properties: Vec::new(),
        linear: false,
        metadata: Vec::new(),
        body_offset: end + END.len(),
    };
    let mut saw_format = false;
    let mut saw_vertex = false;
    for (i, line) in lines {
        let loc = || format!("header line {}", i + 1);
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                if words.next() != Some("binary_little_endian") {
                    return Err(Error::parse(loc(), "only binary_little_endian is supported"));
                }
                saw_format = true;
            }
            Some("comment") => {
                let rest = line.trim_start()["comment".len()..].trim();
                if rest == LINEAR_MARKER {
                    header.linear = true;
                } else if let Some(kv) = rest.strip_prefix(META_PREFIX) {
                    if let Some((k, v)) = kv.split_once('=') {
                        header.metadata.push((k.to_string(), v.to_string()));
                    }
                }
            }
            Some("obj_info") | None => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| Error::parse(loc(), "element without name"))?;
                if name != "vertex" || saw_vertex {
                    return Err(Error::parse(loc(), format!("unsupported element `{name}`")));
                }
                header.vertex_count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::parse(loc(), "bad vertex count"))?;
                saw_vertex = true;
            }
            Some("property") => {
                if !saw_vertex {
                    return Err(Error::parse(loc(), "property before element"));
                }
                let ty = words.next().ok_or_else(|| Error::parse(loc(), "property without type"))?;
                if ty == "list" {
                    return Err(Error::parse(loc(), "list properties are not supported"));
                }
                let ty = ScalarType::parse(ty).ok_or_else(|| Error::parse(loc(), format!("unknown type `{ty}`")))?;
                let name = words.next().ok_or_else(|| Error::parse(loc(), "property without name"))?;
                if header.properties.iter().any(|(n, _)| n == name) {
                    return Err(Error::parse(loc(), format!("duplicate property `{name}`")));
                }
                header.properties.push((name.to_string(), ty));
            }
            Some(other) => return Err(Error::parse(loc(), format!("unexpected keyword `{other}`"))),
        }
    }
    if !saw_format {
        return Err(Error::parse("header", "missing format line"));
    }
    if !saw_vertex {
        return Err(Error::parse("header", "missing vertex element"));
    }
    Ok(header)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn decode_ply(bytes: &[u8]) -> Result<GaussianScene> {
    let header = parse_header(bytes)?;
    let find = |name: &str| header.properties.iter().position(|(n, _)| n == name);
    let required = |name: &str| find(name).ok_or_else(|| Error::parse("header", format!("missing property `{name}`")));

    let rest_count = header
        .properties
        .iter()
        .filter(|(n, _)| n.starts_with("f_rest_"))
        .count();
    let sh_degree = match rest_count {
        0 => 0,
        9 => 1,
        24 => 2,
        n => return Err(Error::parse("header", format!("{n} f_rest properties match no SH degree"))),
    };
    let coeffs = sh_coeff_count(sh_degree);

    let pos = [required("x")?, required("y")?, required("z")?];
    let dc = [required("f_dc_0")?, required("f_dc_1")?, required("f_dc_2")?];
    let rest: Vec<usize> = (0..rest_count)
        .map(|i| required(&format!("f_rest_{i}")))
        .collect::<Result<_>>()?;
    let opacity = required("opacity")?;
    let scale = [required("scale_0")?, required("scale_1")?, required("scale_2")?];
    let rot = [required("rot_0")?, required("rot_1")?, required("rot_2")?, required("rot_3")?];

    let mut offsets = Vec::with_capacity(header.properties.len());
    let mut stride = 0usize;
    for (_, ty) in &header.properties {
        offsets.push(stride);
        stride += ty.size();
    }
    let body = &bytes[header.body_offset..];
    let needed = header
        .vertex_count
        .checked_mul(stride)
        .ok_or_else(|| Error::parse("header", "vertex count overflows"))?;
    if body.len() < needed {
        return Err(Error::parse(
            "body",
            format!("expected {needed} bytes for {} vertices, found {}", header.vertex_count, body.len()),
        ));
    }

    let mut primitives = Vec::with_capacity(header.vertex_count);
    for v in 0..header.vertex_count {
        let row = &body[v * stride..(v + 1) * stride];
        let get = |idx: usize| header.properties[idx].1.read(&row[offsets[idx]..]);
        let mut sh = vec![[0.0; 3]; coeffs];
        sh[0] = dc.map(get);
        for ch in 0..3 {
            for c in 1..coeffs {
                sh[c][ch] = get(rest[ch * (coeffs - 1) + c - 1]);
            }
        }
        let (opacity, scale) = if header.linear {
            (get(opacity), Vector3::from(scale.map(get)))
        } else {
            (sigmoid(get(opacity)), Vector3::from(scale.map(|i| get(i).exp())))
        };
        primitives.push(GaussianPrimitive {
            position: Vector3::from(pos.map(get)),
            scale,
            rotation: rot.map(get),
            opacity,
            sh,
        });
    }
    let mut scene = GaussianScene::from_primitives(sh_degree, primitives);
    scene.metadata.extend(header.metadata);
    Ok(scene)
}

pub fn write_ply(path: &Path, scene: &GaussianScene, precision: PlyPrecision) -> Result<()> {
    let bytes = encode_ply(scene, precision)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(&bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_ply(path: &Path) -> Result<GaussianScene> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_ply(&bytes)
}
