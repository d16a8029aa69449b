//! On-disk formats: `key=value` calibration text, 16-bit binary PGM depth
//! (millimeters, big-endian), 8-bit binary PPM color and `x y z` point text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CameraIntrinsics, DepthImage, PointCloud};
use crate::error::{Error, Result};

/// Largest depth the 16-bit millimeter encoding can hold.
pub const MAX_ENCODABLE_DEPTH_M: f64 = 65.535;

/// Planar `3 × H × W` color image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn format_calibration(k: &CameraIntrinsics) -> String {
    format!(
        "fx={}\nfy={}\ncx={}\ncy={}\nwidth={}\nheight={}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    )
}

pub fn parse_calibration(text: &str, path: &Path) -> Result<CameraIntrinsics> {
    let mut vals: [Option<f64>; 6] = [None; 6];
    const KEYS: [&str; 6] = ["fx", "fy", "cx", "cy", "width", "height"];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(path, format!("line {}: expected key=value", lineno + 1))
        })?;
        let slot = KEYS
            .iter()
            .position(|k| *k == key.trim())
            .ok_or_else(|| Error::format(path, format!("unknown key `{}`", key.trim())))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::format(path, format!("bad number for `{}`", KEYS[slot])))?;
        vals[slot] = Some(v);
    }
    let get = |i: usize| vals[i].ok_or_else(|| Error::format(path, format!("missing `{}`", KEYS[i])));
    let extent = |i: usize| -> Result<usize> {
        let v = get(i)?;
        if v.fract() != 0.0 || v <= 0.0 {
            return Err(Error::format(path, format!("`{}` must be a positive integer", KEYS[i])));
        }
        Ok(v as usize)
    };
    CameraIntrinsics::new(get(0)?, get(1)?, get(2)?, get(3)?, extent(4)?, extent(5)?)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_calibration(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    write(path, format_calibration(k).as_bytes())
}

pub fn read_calibration(path: &Path) -> Result<CameraIntrinsics> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
    parse_calibration(&text, path)
}

/// Parses a binary netpbm header, returning `(width, height, maxval, payload offset)`.
fn parse_netpbm_header(bytes: &[u8], magic: &[u8; 2], path: &Path) -> Result<(usize, usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            path,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated or malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "header number out of range"))?;
    }
    // exactly one whitespace byte separates header and payload
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "missing whitespace after header"));
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::format(path, "zero image extent"));
    }
    Ok((w, h, maxval, pos + 1))
}

fn depth_to_mm(d: f64) -> Result<u16> {
    let mm = (d * 1000.0).round();
    if !(0.0..=65535.0).contains(&mm) {
        return Err(Error::Range {
            value: d,
            message: format!("depth exceeds the 16-bit millimeter range (max {MAX_ENCODABLE_DEPTH_M} m)"),
        });
    }
    Ok(mm as u16)
}

pub fn encode_depth_pgm(depth: &DepthImage) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width(), depth.height()).into_bytes();
    out.reserve(depth.values().len() * 2);
    for &d in depth.values() {
        out.extend_from_slice(&depth_to_mm(d)?.to_be_bytes());
    }
    Ok(out)
}

pub fn decode_depth_pgm(bytes: &[u8], path: &Path) -> Result<DepthImage> {
    let (w, h, maxval, off) = parse_netpbm_header(bytes, b"P5", path)?;
    if maxval != 65535 {
        return Err(Error::format(path, format!("expected maxval 65535, got {maxval}")));
    }
    let expected = w * h * 2;
    let actual = bytes.len() - off;
    if actual != expected {
        return Err(Error::PayloadLength {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    let values = bytes[off..]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 1000.0)
        .collect();
    DepthImage::new(w, h, values)
}

pub fn write_depth_pgm(path: &Path, depth: &DepthImage) -> Result<()> {
    write(path, &encode_depth_pgm(depth)?)
}

pub fn read_depth_pgm(path: &Path) -> Result<DepthImage> {
    decode_depth_pgm(&read(path)?, path)
}

pub fn encode_rgb_ppm(img: &RgbImage) -> Vec<u8> {
    let n = img.width * img.height;
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for i in 0..n {
        for c in 0..3 {
            let v = (img.data[c * n + i].clamp(0.0, 1.0) * 255.0).round();
            out.push(v as u8);
        }
    }
    out
}

pub fn decode_rgb_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let (w, h, maxval, off) = parse_netpbm_header(bytes, b"P6", path)?;
    if maxval != 255 {
        return Err(Error::format(path, format!("expected maxval 255, got {maxval}")));
    }
    let n = w * h;
    let actual = bytes.len() - off;
    if actual != 3 * n {
        return Err(Error::PayloadLength {
            path: path.to_path_buf(),
            expected: 3 * n,
            actual,
        });
    }
    let mut data = vec![0.0; 3 * n];
    for (i, px) in bytes[off..].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f64 / 255.0;
        }
    }
    Ok(RgbImage {
        width: w,
        height: h,
        data,
    })
}

pub fn write_rgb_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write(path, &encode_rgb_ppm(img))
}

pub fn read_rgb_ppm(path: &Path) -> Result<RgbImage> {
    decode_rgb_ppm(&read(path)?, path)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut s = String::with_capacity(cloud.len() * 40);
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }
    write(path, s.as_bytes())
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "not UTF-8"))?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let xyz: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| Error::format(path, format!("line {}: bad number", lineno + 1)))?;
        if xyz.len() != 3 {
            return Err(Error::format(path, format!("line {}: expected `x y z`", lineno + 1)));
        }
        points.push([xyz[0], xyz[1], xyz[2]]);
    }
    Ok(PointCloud::new(points))
}
