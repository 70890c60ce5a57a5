//! PLY point-cloud reader/writer: ascii and binary-little-endian, vertex
//! x/y/z plus optional red/green/blue.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    /// Colors in [0, 1]; mid-gray when the file has no color properties.
    pub colors: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    F32,
    F64,
    U8,
    I32,
    U32,
    I16,
    U16,
    I8,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            "uchar" | "uint8" => ScalarType::U8,
            "char" | "int8" => ScalarType::I8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            _ => return None,
        })
    }

    fn size(&self) -> usize {
        match self {
            ScalarType::F64 => 8,
            ScalarType::F32 | ScalarType::I32 | ScalarType::U32 => 4,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::U8 | ScalarType::I8 => 1,
        }
    }

    fn read_binary(&self, bytes: &[u8]) -> f64 {
        match self {
            ScalarType::F32 => f32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(bytes[..8].try_into().unwrap()),
            ScalarType::U8 => bytes[0] as f64,
            ScalarType::I8 => bytes[0] as i8 as f64,
            ScalarType::I16 => i16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            ScalarType::U16 => u16::from_le_bytes(bytes[..2].try_into().unwrap()) as f64,
            ScalarType::I32 => i32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(bytes[..4].try_into().unwrap()) as f64,
        }
    }
}

#[derive(Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = File::open(path)
        .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };

    // Header.
    let mut line_no = 0usize;
    let mut read_line = |r: &mut BufReader<File>| -> Result<String> {
        let mut s = String::new();
        let n = r.read_line(&mut s)?;
        line_no += 1;
        if n == 0 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: line_no,
                msg: "unexpected end of header".into(),
            });
        }
        Ok(s.trim().to_string())
    };

    if read_line(&mut reader)? != "ply" {
        return Err(perr(1, "missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut vertex_count = None;
    let mut properties: Vec<(String, ScalarType)> = Vec::new();
    let mut in_vertex_element = false;
    let mut header_lines = 1;
    loop {
        let line = read_line(&mut reader)?;
        header_lines += 1;
        if line == "end_header" {
            break;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                format = match parts.next() {
                    Some("ascii") => Some(Format::Ascii),
                    Some("binary_little_endian") => Some(Format::BinaryLe),
                    other => {
                        return Err(perr(header_lines, format!("unsupported format {other:?}")))
                    }
                };
            }
            Some("element") => {
                let name = parts.next().unwrap_or("");
                let count: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| perr(header_lines, "bad element count".into()))?;
                if name == "vertex" {
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if in_vertex_element {
                        in_vertex_element = false;
                    }
                    if count != 0 {
                        return Err(perr(
                            header_lines,
                            format!("unsupported non-vertex element '{name}'"),
                        ));
                    }
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let ty = parts.next().unwrap_or("");
                if ty == "list" {
                    return Err(perr(header_lines, "list properties unsupported".into()));
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| perr(header_lines, format!("unknown type '{ty}'")))?;
                let name = parts.next().unwrap_or("").to_string();
                properties.push((name, ty));
            }
            Some(other) => {
                return Err(perr(
                    header_lines,
                    format!("unknown header token '{other}'"),
                ));
            }
        }
    }
    let format = format.ok_or_else(|| perr(header_lines, "missing format line".into()))?;
    let vertex_count =
        vertex_count.ok_or_else(|| perr(header_lines, "missing vertex element".into()))?;

    let find = |name: &str| properties.iter().position(|(n, _)| n == name);
    let (xi, yi, zi) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(perr(header_lines, "vertex element lacks x/y/z".into())),
    };
    let color_idx = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };
    let color_scale = |idx: usize, v: f64| -> f64 {
        match properties[idx].1 {
            ScalarType::U8 => v / 255.0,
            ScalarType::U16 => v / 65535.0,
            _ => v,
        }
    };

    let mut positions = Vec::with_capacity(vertex_count);
    let mut colors = Vec::with_capacity(vertex_count);
    match format {
        Format::Ascii => {
            for v in 0..vertex_count {
                let mut s = String::new();
                if reader.read_line(&mut s)? == 0 {
                    return Err(perr(
                        header_lines + v + 1,
                        format!("file ends after {v} of {vertex_count} vertices"),
                    ));
                }
                let vals: Vec<f64> = s
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| perr(header_lines + v + 1, format!("bad number: {e}")))?;
                if vals.len() < properties.len() {
                    return Err(perr(
                        header_lines + v + 1,
                        format!("expected {} values, found {}", properties.len(), vals.len()),
                    ));
                }
                positions.push(Vector3::new(vals[xi], vals[yi], vals[zi]));
                colors.push(match color_idx {
                    Some((r, g, b)) => Vector3::new(
                        color_scale(r, vals[r]),
                        color_scale(g, vals[g]),
                        color_scale(b, vals[b]),
                    ),
                    None => Vector3::new(0.5, 0.5, 0.5),
                });
            }
        }
        Format::BinaryLe => {
            let stride: usize = properties.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; stride * vertex_count];
            reader.read_exact(&mut buf).map_err(|_| {
                Error::invalid(format!(
                    "{}: binary payload truncated (need {} bytes)",
                    path.display(),
                    stride * vertex_count
                ))
            })?;
            let offsets: Vec<usize> = properties
                .iter()
                .scan(0usize, |acc, (_, t)| {
                    let o = *acc;
                    *acc += t.size();
                    Some(o)
                })
                .collect();
            for v in 0..vertex_count {
                let rec = &buf[v * stride..(v + 1) * stride];
                let get = |i: usize| properties[i].1.read_binary(&rec[offsets[i]..]);
                positions.push(Vector3::new(get(xi), get(yi), get(zi)));
                colors.push(match color_idx {
                    Some((r, g, b)) => Vector3::new(
                        color_scale(r, get(r)),
                        color_scale(g, get(g)),
                        color_scale(b, get(b)),
                    ),
                    None => Vector3::new(0.5, 0.5, 0.5),
                });
            }
        }
    }
    Ok(PointCloud { positions, colors })
}

/// Writes binary-little-endian with float positions and uchar colors.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    if cloud.positions.len() != cloud.colors.len() {
        return Err(Error::invalid("positions/colors length mismatch"));
    }
    let mut f = std::io::BufWriter::new(File::create(path)?);
    write!(
        f,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.positions.len()
    )?;
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        for k in 0..3 {
            f.write_all(&(p[k] as f32).to_le_bytes())?;
        }
        for k in 0..3 {
            f.write_all(&[(c[k].clamp(0.0, 1.0) * 255.0).round() as u8])?;
        }
    }
    Ok(())
}
