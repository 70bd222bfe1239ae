//! File formats: depth maps (PFM, CSV), intrinsics and primitive lists (JSON),
//! sampling weight maps, OBJ meshes and PGM masks.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::camera::{DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::Cuboid;
use crate::robust::WeightMaps;

/// Coarse weight maps are stored at this fraction of the image resolution.
pub const WEIGHT_MAP_SUBSAMPLING: usize = 8;
const WEIGHT_MAGIC: &[u8; 4] = b"CWM1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DepthFormat {
    Pfm,
    Csv,
}

impl DepthFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("pfm") => Ok(DepthFormat::Pfm),
            Some("csv") => Ok(DepthFormat::Csv),
            _ => Err(Error::InvalidInput(format!(
                "cannot infer depth format of {} (expected .pfm or .csv)",
                path.display()
            ))),
        }
    }
}

pub fn load_depth(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path)?;
    match DepthFormat::from_path(path)? {
        DepthFormat::Pfm => parse_pfm(&bytes),
        DepthFormat::Csv => parse_csv_depth(&String::from_utf8_lossy(&bytes)),
    }
}

pub fn save_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    let bytes = match DepthFormat::from_path(path)? {
        DepthFormat::Pfm => encode_pfm(depth),
        DepthFormat::Csv => encode_csv_depth(depth).into_bytes(),
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// Single-channel little-endian PFM; rows are stored bottom to top.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    out.reserve(4 * depth.values.len());
    for row in (0..depth.height).rev() {
        for &z in &depth.values[row * depth.width..(row + 1) * depth.width] {
            out.extend_from_slice(&(z as f32).to_le_bytes());
        }
    }
    out
}

/// Reads one whitespace-delimited header token starting at `*pos`.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse {
            offset: start,
            message: "unexpected end of PFM header".into(),
        });
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Parse {
        offset: start,
        message: "PFM header is not ASCII".into(),
    })
}

pub fn parse_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != "Pf" {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected single-channel PFM magic \"Pf\", found {magic:?}"),
        });
    }
    let mut next = || -> Result<(usize, String)> {
        let at = pos;
        Ok((at, header_token(bytes, &mut pos)?.to_string()))
    };
    let (w_at, w) = next()?;
    let (h_at, h) = next()?;
    let (s_at, s) = next()?;
    let dim = |tok: &str, at: usize| {
        tok.parse::<usize>().map_err(|_| Error::Parse {
            offset: at,
            message: format!("invalid PFM dimension {tok:?}"),
        })
    };
    let width = dim(&w, w_at)?;
    let height = dim(&h, h_at)?;
    let scale: f64 = s.parse().map_err(|_| Error::Parse {
        offset: s_at,
        message: format!("invalid PFM scale {s:?}"),
    })?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Parse {
            offset: s_at,
            message: "PFM scale must be nonzero".into(),
        });
    }
    let little_endian = scale < 0.0;
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let needed = width * height * 4;
    let available = bytes.len().saturating_sub(pos);
    if available < needed {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("PFM raster truncated: need {needed} bytes after offset {pos}, found {available}"),
        });
    }
    let mut values = vec![0.0; width * height];
    for (k, chunk) in bytes[pos..pos + needed].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let z = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row, col) = (height - 1 - k / width, k % width);
        values[row * width + col] = z as f64;
    }
    DepthMap::new(width, height, values)
}

/// Header line `w,h`, then one comma-separated row per image row. Invalid pixels
/// may be written as `nan`.
pub fn encode_csv_depth(depth: &DepthMap) -> String {
    let mut out = format!("{},{}\n", depth.width, depth.height);
    for row in depth.values.chunks(depth.width.max(1)) {
        let cells: Vec<String> = row
            .iter()
            .map(|z| if z.is_nan() { "nan".to_string() } else { format!("{z}") })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_csv_depth(text: &str) -> Result<DepthMap> {
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n').filter_map(|l| {
        let at = offset;
        offset += l.len();
        let t = l.trim();
        (!t.is_empty()).then_some((at, t))
    });
    let (_, header) = lines.next().ok_or(Error::Parse {
        offset: 0,
        message: "empty CSV depth file".into(),
    })?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            offset: 0,
            message: format!("expected \"width,height\" header, found {header:?}"),
        })?;
    let [width, height] = dims[..] else {
        return Err(Error::Parse {
            offset: 0,
            message: format!("expected \"width,height\" header, found {header:?}"),
        });
    };
    let mut values = Vec::with_capacity(width * height);
    for (at, line) in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().to_ascii_lowercase().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                offset: at,
                message: "invalid depth value".into(),
            })?;
        if row.len() != width {
            return Err(Error::Parse {
                offset: at,
                message: format!("row has {} values, expected {width}", row.len()),
            });
        }
        values.extend(row);
    }
    if values.len() != width * height {
        return Err(Error::Parse {
            offset: text.len(),
            message: format!("expected {height} rows, found {}", values.len() / width.max(1)),
        });
    }
    DepthMap::new(width, height, values)
}

pub fn load_intrinsics(path: &Path) -> Result<Intrinsics> {
    let k: Intrinsics = serde_json::from_slice(&fs::read(path)?)?;
    k.validate()?;
    Ok(k)
}

/// Rounds every float in a JSON tree to 9 significant digits.
fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().expect("f64 number");
            let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
            *v = Value::from(if rounded == 0.0 { 0.0 } else { rounded });
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// JSON tree with sorted keys and floats rounded to 9 significant digits.
pub fn canonical_value<T: Serialize + ?Sized>(value: &T) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    round_floats(&mut v);
    Ok(v)
}

/// Deterministic JSON: sorted keys, floats at 9 significant digits, pretty-printed.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = canonical_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Binary weight-map file: magic `CWM1`, then little-endian `u32` map count `Q`,
/// width and height, `Q` `f32` selection weights and `Q·width·height` `f32` map
/// values (row-major, map after map). Maps are stored at full image resolution or
/// at 1/8 resolution (dimensions rounded up).
pub fn encode_weight_maps(maps: &[Vec<f32>], selection: &[f32], width: usize, height: usize) -> Result<Vec<u8>> {
    if maps.len() != selection.len() || maps.iter().any(|m| m.len() != width * height) {
        return Err(Error::InvalidInput("weight map dimensions are inconsistent".into()));
    }
    let mut out = WEIGHT_MAGIC.to_vec();
    for n in [maps.len(), width, height] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for x in selection.iter().chain(maps.iter().flatten()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Per-point weights for points at linear pixel indices `pixels` of a
/// `width × height` image. Selection weights are normalised to sum to one.
pub fn parse_weight_maps(bytes: &[u8], width: usize, height: usize, pixels: &[usize]) -> Result<WeightMaps> {
    let truncated = |offset: usize| Error::Parse {
        offset,
        message: "weight map file truncated".into(),
    };
    if bytes.len() < 16 {
        return Err(truncated(bytes.len()));
    }
    if &bytes[..4] != WEIGHT_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "missing CWM1 magic".into(),
        });
    }
    let word = |i: usize| u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize;
    let (q, mw, mh) = (word(4), word(8), word(12));
    let coarse = (width.div_ceil(WEIGHT_MAP_SUBSAMPLING), height.div_ceil(WEIGHT_MAP_SUBSAMPLING));
    let factor = if (mw, mh) == (width, height) {
        1
    } else if (mw, mh) == coarse {
        WEIGHT_MAP_SUBSAMPLING
    } else {
        return Err(Error::InvalidInput(format!(
            "weight maps are {mw}x{mh}, expected {width}x{height} or {}x{}",
            coarse.0, coarse.1
        )));
    };
    if q == 0 {
        return Err(Error::InvalidInput("weight map file declares no maps".into()));
    }
    let needed = 16 + 4 * (q + q * mw * mh);
    if bytes.len() < needed {
        return Err(truncated(bytes.len()));
    }
    let float = |i: usize| f32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as f64;
    let selection: Vec<f64> = (0..q).map(|j| float(16 + 4 * j)).collect();
    let base = 16 + 4 * q;
    let mut maps = Vec::with_capacity(q);
    for j in 0..q {
        let map_base = base + 4 * j * mw * mh;
        let mut per_point = Vec::with_capacity(pixels.len());
        for &p in pixels {
            if p >= width * height {
                return Err(Error::InvalidInput(format!("pixel index {p} outside the image")));
            }
            let (u, v) = (p % width / factor, p / width / factor);
            per_point.push(float(map_base + 4 * (v * mw + u)));
        }
        maps.push(per_point);
    }
    if selection.iter().chain(maps.iter().flatten()).any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let total: f64 = selection.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("selection weights sum to zero".into()));
    }
    WeightMaps::new(maps, selection.iter().map(|s| s / total).collect())
}

pub fn load_weight_maps(path: &Path, width: usize, height: usize, pixels: &[usize]) -> Result<WeightMaps> {
    parse_weight_maps(&fs::read(path)?, width, height, pixels)
}

/// Corner triples of the 12 triangles, counter-clockwise seen from outside, for
/// the corner order of [`Cuboid::corners`].
const BOX_TRIANGLES: [[usize; 3]; 12] = [
    [4, 6, 7],
    [4, 7, 5],
    [0, 1, 3],
    [0, 3, 2],
    [2, 3, 7],
    [2, 7, 6],
    [0, 4, 5],
    [0, 5, 1],
    [1, 5, 7],
    [1, 7, 3],
    [0, 2, 6],
    [0, 6, 4],
];

pub fn encode_obj(cuboids: &[Cuboid]) -> String {
    let mut out = String::from("# cuboids\n");
    for (i, h) in cuboids.iter().enumerate() {
        out.push_str(&format!("o cuboid_{i}\n"));
        for c in h.corners() {
            out.push_str(&format!("v {} {} {}\n", c.x, c.y, c.z));
        }
        for t in BOX_TRIANGLES {
            let base = 8 * i + 1;
            out.push_str(&format!("f {} {} {}\n", base + t[0], base + t[1], base + t[2]));
        }
    }
    out
}

pub fn export_obj(cuboids: &[Cuboid], path: &Path) -> Result<()> {
    fs::write(path, encode_obj(cuboids))?;
    Ok(())
}

/// Binary PGM, 255 where `mask` is set.
pub fn write_pgm(path: &Path, mask: &[bool], width: usize, height: usize) -> Result<()> {
    if mask.len() != width * height {
        return Err(Error::InvalidInput("mask size does not match image dimensions".into()));
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(&mask.iter().map(|&m| if m { 255u8 } else { 0 }).collect::<Vec<_>>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn sample_depth() -> DepthMap {
        DepthMap::new(3, 2, vec![1.5, f64::NAN, 0.0, 2.25, 1e-3, 7.125]).unwrap()
    }

    #[test]
    fn pfm_round_trip_is_bit_exact() {
        let d = sample_depth();
        let bytes = encode_pfm(&d);
        let back = parse_pfm(&bytes).unwrap();
        assert_eq!(encode_pfm(&back), bytes);
        assert_eq!(back.get(0, 0), 1.5);
        assert!(back.get(1, 0).is_nan());
        assert_eq!(back.get(2, 1), 7.125);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let bytes = encode_pfm(&sample_depth());
        let header = b"Pf\n3 2\n-1.0\n".len();
        let first = f32::from_le_bytes(bytes[header..header + 4].try_into().unwrap());
        assert_eq!(first, 2.25);
    }

    #[test]
    fn truncated_pfm_reports_offset() {
        let bytes = encode_pfm(&sample_depth());
        let err = parse_pfm(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, bytes.len() - 3),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(matches!(parse_pfm(b"PF\n1 1\n-1\n0000"), Err(Error::Parse { .. })));
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&3.5f32.to_be_bytes());
        assert_eq!(parse_pfm(&bytes).unwrap().values, vec![3.5]);
    }

    #[test]
    fn csv_round_trip_and_nan() {
        let d = DepthMap::new(2, 2, vec![0.1, 2.0 / 3.0, 5.0, 1e-7]).unwrap();
        assert_eq!(parse_csv_depth(&encode_csv_depth(&d)).unwrap(), d);
        let parsed = parse_csv_depth("2,1\nnan,1.5\n").unwrap();
        assert!(!parsed.is_valid(0, 0));
        assert!(parsed.is_valid(1, 0));
        assert!(parse_csv_depth("2,2\n1,2\n").is_err());
        assert!(parse_csv_depth("2,1\n1,x\n").is_err());
    }

    #[test]
    fn weight_maps_full_and_coarse() {
        let (w, h) = (16, 9);
        let pixels: Vec<usize> = (0..w * h).collect();
        let full: Vec<f32> = (0..w * h).map(|i| i as f32).collect();
        let bytes = encode_weight_maps(&[full.clone(), full], &[2.0, 2.0], w, h).unwrap();
        let maps = parse_weight_maps(&bytes, w, h, &pixels).unwrap();
        assert_eq!(maps.selection(), &[0.5, 0.5]);
        assert_eq!(maps.maps()[0][17], 17.0);

        let coarse: Vec<f32> = vec![1.0, 2.0, 3.0, 4.0];
        let bytes = encode_weight_maps(&[coarse], &[1.0], 2, 2).unwrap();
        let maps = parse_weight_maps(&bytes, w, h, &pixels).unwrap();
        let m = &maps.maps()[0];
        assert_eq!(m[0], 1.0);
        assert_eq!(m[7], 1.0);
        assert_eq!(m[8], 2.0);
        assert_eq!(m[8 * w], 3.0);
        assert_eq!(m[8 * w + 15], 4.0);

        let bad = encode_weight_maps(&[vec![1.0; 6]], &[1.0], 3, 2).unwrap();
        assert!(parse_weight_maps(&bad, w, h, &pixels).is_err());
        let negative = encode_weight_maps(&[vec![-1.0; 4]], &[1.0], 2, 2).unwrap();
        assert!(parse_weight_maps(&negative, w, h, &pixels).is_err());
    }

    #[test]
    fn obj_export_has_outward_faces() {
        let h = Cuboid::from_axis_angle(Vector3::new(0.5, 1.0, 0.25), Vector3::new(0.2, 0.7, -0.1), Vector3::new(1.0, 0.0, 3.0));
        let obj = encode_obj(&[h.clone()]);
        let verts: Vec<Vector3<f64>> = obj
            .lines()
            .filter(|l| l.starts_with("v "))
            .map(|l| {
                let c: Vec<f64> = l[2..].split(' ').map(|t| t.parse().unwrap()).collect();
                Vector3::new(c[0], c[1], c[2])
            })
            .collect();
        assert_eq!(verts.len(), 8);
        let faces: Vec<[usize; 3]> = obj
            .lines()
            .filter(|l| l.starts_with("f "))
            .map(|l| {
                let f: Vec<usize> = l[2..].split(' ').map(|t| t.parse::<usize>().unwrap() - 1).collect();
                [f[0], f[1], f[2]]
            })
            .collect();
        assert_eq!(faces.len(), 12);
        for f in faces {
            let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
            let normal = (b - a).cross(&(c - a));
            let centroid = (a + b + c) / 3.0;
            assert!(normal.dot(&(centroid - h.translation)) > 0.0);
        }
        assert_eq!(encode_obj(&[]).lines().filter(|l| l.starts_with('v') || l.starts_with('f')).count(), 0);
    }

    #[test]
    fn canonical_json_is_sorted_and_rounded() {
        let v = serde_json::json!({"b": 1.0 / 3.0, "a": [2.0, 1e-12]});
        let s = to_canonical_json(&v).unwrap();
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
        assert!(s.contains("0.333333333"));
        assert!(!s.contains("0.3333333333"));
    }
}
