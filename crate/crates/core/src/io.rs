//! File formats.
//!
//! - Point clouds: ASCII, one `x y z` line per point, six decimals.
//! - Depth maps: binary PGM (`P5`, maxval 65535, big-endian samples).
//!   Valid depths map linearly from `[near, far]` onto `[1, 65535]`; 0 marks
//!   background. A header comment `# mvcn view=<i> near=<n> far=<f>` makes
//!   the file self-describing.
//! - Normalization records: `center = x y z` and `scale_factor = s`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, DepthRange, NormalizationRecord, PointCloud, Vec3};
use crate::kv::KeyValues;

pub const PGM_MAXVAL: u16 = 65535;
const LEVELS: f64 = (PGM_MAXVAL - 1) as f64;

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 30);
    for p in cloud.iter() {
        writeln!(out, "{:.6} {:.6} {:.6}", p.x, p.y, p.z).unwrap();
    }
    out
}

pub fn parse_cloud(text: &str, source: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: source.to_string(),
            line: n + 1,
            message,
        };
        let mut coords = [0.0; 3];
        let mut fields = line.split_whitespace();
        for c in &mut coords {
            let field = fields.next().ok_or_else(|| err("expected three coordinates".into()))?;
            *c = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("invalid coordinate `{field}`")))?;
        }
        if fields.next().is_some() {
            return Err(err("trailing fields after three coordinates".into()));
        }
        points.push(Vec3::new(coords[0], coords[1], coords[2]));
    }
    Ok(PointCloud::new(points))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, &path.display().to_string())
}

/// 16-bit code of a depth: 0 for background, `[1, 65535]` otherwise.
pub fn quantize(depth: f64, range: &DepthRange) -> u16 {
    let f = range.fraction(depth).clamp(0.0, 1.0);
    1 + (f * LEVELS).round() as u16
}

pub fn dequantize(code: u16, range: &DepthRange) -> f64 {
    debug_assert!(code > 0);
    range.near + (code - 1) as f64 / LEVELS * range.span()
}

/// One quantization step in world units.
pub fn quantization_step(range: &DepthRange) -> f64 {
    range.span() / LEVELS
}

pub fn quantize_map(map: &DepthMap) -> Vec<u16> {
    map.depth
        .iter()
        .zip(&map.valid)
        .map(|(d, v)| if *v { quantize(*d, &map.range) } else { 0 })
        .collect()
}

/// Rounds every valid depth to its 16-bit representable value.
pub fn quantized_copy(map: &DepthMap) -> DepthMap {
    let mut out = map.clone();
    for (d, q) in out.depth.iter_mut().zip(quantize_map(map)) {
        if q > 0 {
            *d = dequantize(q, &map.range);
        }
    }
    out
}

pub fn encode_pgm(map: &DepthMap) -> Vec<u8> {
    let header = format!(
        "P5\n# mvcn view={} near={:?} far={:?}\n{} {}\n{}\n",
        map.view_index, map.range.near, map.range.far, map.width, map.height, PGM_MAXVAL
    );
    let mut out = header.into_bytes();
    out.reserve(map.depth.len() * 2);
    for q in quantize_map(map) {
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Raw 16-bit PGM contents plus any metadata found in header comments.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm16 {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u16>,
    pub view_index: Option<usize>,
    pub range: Option<DepthRange>,
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
    comments: Vec<String>,
}

impl HeaderCursor<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.source.to_string(),
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    let start = self.pos + 1;
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                    self.comments
                        .push(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned());
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| self.error(format!("{what} out of range")))
    }
}

fn parse_metadata(comments: &[String]) -> (Option<usize>, Option<DepthRange>) {
    let mut view = None;
    let (mut near, mut far) = (None, None);
    for c in comments {
        let mut words = c.split_whitespace();
        if words.next() != Some("mvcn") {
            continue;
        }
        for w in words {
            match w.split_once('=') {
                Some(("view", v)) => view = v.parse().ok(),
                Some(("near", v)) => near = v.parse().ok(),
                Some(("far", v)) => far = v.parse().ok(),
                _ => {}
            }
        }
    }
    let range = near.zip(far).map(|(near, far)| DepthRange { near, far });
    (view, range)
}

pub fn decode_pgm(bytes: &[u8], source: &str) -> Result<Pgm16> {
    let mut cur = HeaderCursor {
        bytes,
        pos: 0,
        source,
        comments: Vec::new(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(cur.error("missing P5 magic"));
    }
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != PGM_MAXVAL as usize {
        return Err(cur.error(format!("maxval {maxval}, expected {PGM_MAXVAL}")));
    }
    if width == 0 || height == 0 {
        return Err(cur.error("zero image dimension"));
    }
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(cur.error("expected single whitespace before raster"));
    }
    cur.pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| cur.error("image dimensions overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        cur.pos += raster.len();
        return Err(cur.error(format!(
            "truncated raster: {} of {need} bytes",
            raster.len()
        )));
    }
    let samples = raster[..need]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    let (view_index, range) = parse_metadata(&cur.comments);
    Ok(Pgm16 {
        width,
        height,
        samples,
        view_index,
        range,
    })
}

impl Pgm16 {
    /// Converts to a depth map. Header metadata wins over the fallbacks.
    pub fn into_depth_map(self, range: Option<DepthRange>, view_index: usize) -> Result<DepthMap> {
        let range = self
            .range
            .or(range)
            .ok_or_else(|| Error::InvalidParameter("depth range unknown for PGM".into()))?;
        let mut map = DepthMap::empty(self.width, self.height, self.view_index.unwrap_or(view_index), range);
        for (i, q) in self.samples.into_iter().enumerate() {
            if q > 0 {
                map.depth[i] = dequantize(q, &range);
                map.valid[i] = true;
            }
        }
        Ok(map)
    }
}

pub fn write_depth_map(path: &Path, map: &DepthMap) -> Result<()> {
    fs::write(path, encode_pgm(map)).map_err(|e| Error::io(path, e))
}

/// Reads a 16-bit PGM depth map; `range` and `view_index` are used only if
/// the file does not carry its own metadata.
pub fn read_depth_map(path: &Path, range: Option<DepthRange>, view_index: usize) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())?.into_depth_map(range, view_index)
}

pub fn format_normalization(rec: &NormalizationRecord) -> String {
    format!(
        "center = {:?} {:?} {:?}\nscale_factor = {:?}\n",
        rec.center.x, rec.center.y, rec.center.z, rec.scale_factor
    )
}

pub fn parse_normalization(text: &str, source: &str) -> Result<NormalizationRecord> {
    let kv = KeyValues::parse(text, source)?;
    kv.check_known(&["center", "scale_factor"])?;
    let bad = |message: &str| Error::Parse {
        path: source.to_string(),
        line: 0,
        message: message.to_string(),
    };
    let center: Vec<f64> = kv
        .raw("center")
        .ok_or_else(|| bad("missing center"))?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| bad("invalid center coordinate")))
        .collect::<Result<_>>()?;
    if center.len() != 3 {
        return Err(bad("center needs three coordinates"));
    }
    let scale_factor: f64 = kv
        .raw("scale_factor")
        .ok_or_else(|| bad("missing scale_factor"))?
        .parse()
        .map_err(|_| bad("invalid scale_factor"))?;
    if !(scale_factor > 0.0) {
        return Err(bad("scale_factor must be positive"));
    }
    Ok(NormalizationRecord {
        center: Vec3::new(center[0], center[1], center[2]),
        scale_factor,
    })
}

pub fn write_normalization(path: &Path, rec: &NormalizationRecord) -> Result<()> {
    fs::write(path, format_normalization(rec)).map_err(|e| Error::io(path, e))
}

pub fn read_normalization(path: &Path) -> Result<NormalizationRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_normalization(&text, &path.display().to_string())
}
