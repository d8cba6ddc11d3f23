//! Hyperspectral cube and label-raster I/O.
//!
//! Cubes live in a small text-header raster format: a `key = value` header
//! file (`.hdr`) next to a raw little-endian payload. Cubes are 32-bit
//! float, band-interleaved-by-pixel; label rasters are 16-bit signed with a
//! JSON sidecar mapping label values to class names. Anything else is
//! rejected with a message saying why.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::segment::UnionFind;

#[derive(Debug, thiserror::Error)]
pub enum CubeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: missing header field `{field}`")]
    MissingField { path: PathBuf, field: &'static str },
    #[error("{path}: bad header field `{field}`: {detail}")]
    BadField {
        path: PathBuf,
        field: &'static str,
        detail: String,
    },
    #[error("{path}: unsupported format: {detail}")]
    Unsupported { path: PathBuf, detail: String },
    #[error("{path}: raw payload holds {actual} bytes, header implies {expected}")]
    PayloadSize {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("no raw payload found next to {header} (tried .raw, .img and the bare stem)")]
    MissingPayload { header: PathBuf },
    #[error("non-finite value at pixel {pixel}, band {band}")]
    NonFinite { pixel: usize, band: usize },
    #[error("wavelengths must be strictly increasing and finite (band {band})")]
    BadWavelengths { band: usize },
    #[error("data length {actual} does not match height x width x bands = {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("standardization needs at least 2 valid pixels, found {found}")]
    TooFewValidPixels { found: usize },
    #[error("requested wavelength {requested} nm is farther than half the spectral range from every band")]
    WavelengthOutOfRange { requested: f64 },
    #[error("label raster is {actual_h}x{actual_w}, cube is {cube_h}x{cube_w}")]
    GridMismatch {
        cube_h: usize,
        cube_w: usize,
        actual_h: usize,
        actual_w: usize,
    },
    #[error("label value {label} is missing from the class table {path}")]
    LabelNotInClassTable { label: i16, path: PathBuf },
    #[error("label raster contains negative value {label} at row {row}, col {col}")]
    NegativeLabel { label: i16, row: usize, col: usize },
    #[error("ground-truth region {region} covers background pixels, e.g. {coords:?}")]
    RegionOnBackground {
        region: u32,
        coords: Vec<(usize, usize)>,
    },
    #[error("ground-truth regions overlap at row {row}, col {col}")]
    RegionsOverlap { row: usize, col: usize },
    #[error("{path}: invalid class table: {detail}")]
    BadClassTable { path: PathBuf, detail: String },
    #[error("label raster value {value} exceeds the 16-bit signed range")]
    LabelOverflow { value: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> CubeError {
    CubeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A reflectance raster: `height x width` pixels of `bands` channels,
/// band-interleaved-by-pixel. Pixels whose spectrum is exactly all-zero are
/// background and carry `mask = false`.
#[derive(Debug, Clone)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    wavelengths: Vec<f64>,
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl HsiCube {
    /// Validates the invariants and derives the background mask.
    pub fn new(
        height: usize,
        width: usize,
        wavelengths: Vec<f64>,
        data: Vec<f32>,
    ) -> Result<Self, CubeError> {
        let bands = wavelengths.len();
        for (b, w) in wavelengths.iter().enumerate() {
            if !w.is_finite() || (b > 0 && wavelengths[b - 1] >= *w) {
                return Err(CubeError::BadWavelengths { band: b });
            }
        }
        let expected = height * width * bands;
        if data.len() != expected {
            return Err(CubeError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(CubeError::NonFinite {
                    pixel: i / bands.max(1),
                    band: i % bands.max(1),
                });
            }
        }
        let mask = data
            .chunks(bands)
            .map(|px| px.iter().any(|&v| v != 0.0))
            .collect();
        Ok(Self {
            height,
            width,
            bands,
            wavelengths,
            data,
            mask,
        })
    }

    /// Same payload, caller-provided mask. Used when a transform (e.g.
    /// standardization) must preserve which pixels are background.
    fn with_mask(
        height: usize,
        width: usize,
        wavelengths: Vec<f64>,
        data: Vec<f32>,
        mask: Vec<bool>,
    ) -> Self {
        debug_assert_eq!(data.len(), height * width * wavelengths.len());
        debug_assert_eq!(mask.len(), height * width);
        Self {
            height,
            width,
            bands: wavelengths.len(),
            wavelengths,
            data,
            mask,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.bands;
        &self.data[i..i + self.bands]
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn valid_pixel_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Per-band mean and standard deviation over valid pixels. Zero-variance
/// bands are listed in `degenerate_bands` and carry `std = 1` so that
/// applying the stats maps them to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub degenerate_bands: Vec<usize>,
}

impl BandStats {
    /// Applies `(x - mean) / std` per band; background pixels become zero.
    pub fn apply(&self, cube: &HsiCube) -> HsiCube {
        let bands = cube.bands;
        let mut out = vec![0f32; cube.data.len()];
        for (p, px) in cube.data.chunks(bands).enumerate() {
            if !cube.mask[p] {
                continue;
            }
            for (b, &v) in px.iter().enumerate() {
                out[p * bands + b] = ((v as f64 - self.mean[b]) / self.std[b]) as f32;
            }
        }
        HsiCube::with_mask(
            cube.height,
            cube.width,
            cube.wavelengths.clone(),
            out,
            cube.mask.clone(),
        )
    }

    /// Inverse of [`BandStats::apply`] for a single value.
    pub fn destandardize(&self, band: usize, value: f64) -> f64 {
        value * self.std[band] + self.mean[band]
    }
}

/// Per-band standardization over valid pixels: output has mean 0 and
/// standard deviation 1 on every non-degenerate band.
pub fn standardize(cube: &HsiCube) -> Result<(HsiCube, BandStats), CubeError> {
    let n = cube.valid_pixel_count();
    if n < 2 {
        return Err(CubeError::TooFewValidPixels { found: n });
    }
    let bands = cube.bands;
    let mut mean = vec![0f64; bands];
    for (p, px) in cube.data.chunks(bands).enumerate() {
        if cube.mask[p] {
            for (b, &v) in px.iter().enumerate() {
                mean[b] += v as f64;
            }
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0f64; bands];
    for (p, px) in cube.data.chunks(bands).enumerate() {
        if cube.mask[p] {
            for (b, &v) in px.iter().enumerate() {
                let d = v as f64 - mean[b];
                var[b] += d * d;
            }
        }
    }
    let mut std = vec![0f64; bands];
    let mut degenerate = Vec::new();
    for b in 0..bands {
        let v = var[b] / n as f64;
        if v > 0.0 {
            std[b] = v.sqrt();
        } else {
            std[b] = 1.0;
            degenerate.push(b);
        }
    }
    let stats = BandStats {
        mean,
        std,
        degenerate_bands: degenerate,
    };
    Ok((stats.apply(cube), stats))
}

// ---------------------------------------------------------------------------
// Header + raw payload I/O
// ---------------------------------------------------------------------------

const DTYPE_F32: u32 = 4;
const DTYPE_I16: u32 = 2;

struct Header {
    samples: usize,
    lines: usize,
    bands: usize,
    data_type: u32,
    wavelengths: Option<Vec<f64>>,
}

fn parse_header(path: &Path, expect_dtype: u32) -> Result<Header, CubeError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut pending_key: Option<String> = None;
    let mut pending_val = String::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.eq_ignore_ascii_case("envi") {
            continue;
        }
        if let Some(key) = pending_key.take() {
            // continuation of a brace-wrapped value
            pending_val.push(' ');
            pending_val.push_str(line);
            if pending_val.contains('}') {
                fields.insert(key, pending_val.clone());
                pending_val.clear();
            } else {
                pending_key = Some(key);
            }
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            let key = key.trim().to_ascii_lowercase();
            let value = value.trim().to_string();
            if value.contains('{') && !value.contains('}') {
                pending_key = Some(key);
                pending_val = value;
            } else {
                fields.insert(key, value);
            }
        }
    }

    let get = |field: &'static str| -> Result<&String, CubeError> {
        fields.get(field).ok_or(CubeError::MissingField {
            path: path.to_path_buf(),
            field,
        })
    };
    let parse_usize = |field: &'static str| -> Result<usize, CubeError> {
        get(field)?.parse().map_err(|_| CubeError::BadField {
            path: path.to_path_buf(),
            field,
            detail: format!("`{}` is not a count", fields[field]),
        })
    };

    let samples = parse_usize("samples")?;
    let lines = parse_usize("lines")?;
    let bands = parse_usize("bands")?;

    let interleave = get("interleave")?;
    if !interleave.eq_ignore_ascii_case("bip") {
        return Err(CubeError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("interleave `{interleave}` (only bip is supported)"),
        });
    }
    let data_type: u32 = get("data type")?.parse().map_err(|_| CubeError::BadField {
        path: path.to_path_buf(),
        field: "data type",
        detail: format!("`{}` is not a number", fields["data type"]),
    })?;
    if data_type != expect_dtype {
        return Err(CubeError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("data type {data_type} (expected {expect_dtype})"),
        });
    }
    let byte_order: u32 = get("byte order")?
        .parse()
        .map_err(|_| CubeError::BadField {
            path: path.to_path_buf(),
            field: "byte order",
            detail: format!("`{}` is not a number", fields["byte order"]),
        })?;
    if byte_order != 0 {
        return Err(CubeError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("byte order {byte_order} (only little-endian 0 is supported)"),
        });
    }

    let wavelengths = match fields.get("wavelength") {
        Some(raw) => {
            let inner = raw
                .trim()
                .strip_prefix('{')
                .and_then(|s| s.strip_suffix('}'))
                .ok_or_else(|| CubeError::BadField {
                    path: path.to_path_buf(),
                    field: "wavelength",
                    detail: "expected `{ w1, w2, ... }`".to_string(),
                })?;
            let values: Result<Vec<f64>, _> =
                inner.split(',').map(|s| s.trim().parse::<f64>()).collect();
            Some(values.map_err(|e| CubeError::BadField {
                path: path.to_path_buf(),
                field: "wavelength",
                detail: e.to_string(),
            })?)
        }
        None => None,
    };
    if let Some(w) = &wavelengths {
        if w.len() != bands {
            return Err(CubeError::BadField {
                path: path.to_path_buf(),
                field: "wavelength",
                detail: format!("{} entries for {} bands", w.len(), bands),
            });
        }
    }

    Ok(Header {
        samples,
        lines,
        bands,
        data_type,
        wavelengths,
    })
}

/// `name.hdr` -> first existing of `name.raw`, `name.img`, `name`.
fn raw_path(header: &Path) -> Result<PathBuf, CubeError> {
    let stem = header.with_extension("");
    for candidate in [stem.with_extension("raw"), stem.with_extension("img"), stem] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(CubeError::MissingPayload {
        header: header.to_path_buf(),
    })
}

fn read_payload(header: &Path, expected_bytes: usize) -> Result<Vec<u8>, CubeError> {
    let path = raw_path(header)?;
    let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
    if bytes.len() != expected_bytes {
        return Err(CubeError::PayloadSize {
            path,
            expected: expected_bytes,
            actual: bytes.len(),
        });
    }
    Ok(bytes)
}

/// Loads a cube from its header file; the raw payload sits next to it.
pub fn load_cube(header_path: &Path) -> Result<HsiCube, CubeError> {
    let header = parse_header(header_path, DTYPE_F32)?;
    let wavelengths = header.wavelengths.ok_or(CubeError::MissingField {
        path: header_path.to_path_buf(),
        field: "wavelength",
    })?;
    let count = header.lines * header.samples * header.bands;
    let bytes = read_payload(header_path, count * 4)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    HsiCube::new(header.lines, header.samples, wavelengths, data)
}

/// Writes `name.hdr` and `name.raw`.
pub fn save_cube(cube: &HsiCube, header_path: &Path) -> Result<(), CubeError> {
    let mut hdr = String::from("ENVI\n");
    let _ = writeln!(hdr, "samples = {}", cube.width);
    let _ = writeln!(hdr, "lines = {}", cube.height);
    let _ = writeln!(hdr, "bands = {}", cube.bands);
    hdr.push_str("interleave = bip\ndata type = 4\nbyte order = 0\n");
    let ws: Vec<String> = cube.wavelengths.iter().map(|w| w.to_string()).collect();
    let _ = writeln!(hdr, "wavelength = {{ {} }}", ws.join(", "));
    std::fs::write(header_path, hdr).map_err(|e| io_err(header_path, e))?;

    let raw = header_path.with_extension("raw");
    let mut bytes = Vec::with_capacity(cube.data.len() * 4);
    for v in &cube.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&raw, bytes).map_err(|e| io_err(&raw, e))
}

/// A 16-bit label grid; 0 means unlabeled.
#[derive(Debug, Clone)]
pub struct LabelRaster {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<i16>,
}

impl LabelRaster {
    pub fn label(&self, row: usize, col: usize) -> i16 {
        self.labels[row * self.width + col]
    }
}

pub fn load_label_raster(header_path: &Path) -> Result<LabelRaster, CubeError> {
    let header = parse_header(header_path, DTYPE_I16)?;
    let count = header.lines * header.samples * header.bands;
    if header.bands != 1 {
        return Err(CubeError::Unsupported {
            path: header_path.to_path_buf(),
            detail: format!("label raster must have 1 band, found {}", header.bands),
        });
    }
    let bytes = read_payload(header_path, count * 2)?;
    let labels: Vec<i16> = bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 {
            return Err(CubeError::NegativeLabel {
                label: l,
                row: i / header.samples,
                col: i % header.samples,
            });
        }
    }
    let _ = header.data_type;
    Ok(LabelRaster {
        height: header.lines,
        width: header.samples,
        labels,
    })
}

/// Writes a label raster plus, when given, its class-table sidecar
/// `name.classes.json`.
pub fn save_label_raster(
    raster: &LabelRaster,
    header_path: &Path,
    classes: Option<&BTreeMap<i16, String>>,
) -> Result<(), CubeError> {
    let mut hdr = String::from("ENVI\n");
    let _ = writeln!(hdr, "samples = {}", raster.width);
    let _ = writeln!(hdr, "lines = {}", raster.height);
    hdr.push_str("bands = 1\ninterleave = bip\ndata type = 2\nbyte order = 0\n");
    std::fs::write(header_path, hdr).map_err(|e| io_err(header_path, e))?;

    let raw = header_path.with_extension("raw");
    let mut bytes = Vec::with_capacity(raster.labels.len() * 2);
    for v in &raster.labels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&raw, bytes).map_err(|e| io_err(&raw, e))?;

    if let Some(classes) = classes {
        let table: BTreeMap<String, String> = classes
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        let json = serde_json::to_string_pretty(&table).expect("class table serializes");
        let sidecar = class_table_path(header_path);
        std::fs::write(&sidecar, json).map_err(|e| io_err(&sidecar, e))?;
    }
    Ok(())
}

/// `name.hdr` -> `name.classes.json`.
pub fn class_table_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("classes.json")
}

pub fn load_class_table(path: &Path) -> Result<BTreeMap<i16, String>, CubeError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let raw: BTreeMap<String, String> =
        serde_json::from_str(&text).map_err(|e| CubeError::BadClassTable {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    let mut table = BTreeMap::new();
    for (k, v) in raw {
        let label: i16 = k.parse().map_err(|_| CubeError::BadClassTable {
            path: path.to_path_buf(),
            detail: format!("key `{k}` is not a 16-bit label value"),
        })?;
        table.insert(label, v);
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// One annotated region: a 4-connected set of same-label pixels.
#[derive(Debug, Clone)]
pub struct GtRegion {
    pub id: u32,
    pub class_name: String,
    /// (row, col) pairs in raster order.
    pub pixels: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub height: usize,
    pub width: usize,
    pub regions: Vec<GtRegion>,
}

impl GroundTruth {
    /// Checks disjointness and bounds; used for programmatically built truth.
    pub fn validate(&self) -> Result<(), CubeError> {
        let mut seen = HashSet::new();
        for region in &self.regions {
            for &(r, c) in &region.pixels {
                if r >= self.height || c >= self.width {
                    return Err(CubeError::GridMismatch {
                        cube_h: self.height,
                        cube_w: self.width,
                        actual_h: r + 1,
                        actual_w: c + 1,
                    });
                }
                if !seen.insert((r, c)) {
                    return Err(CubeError::RegionsOverlap { row: r, col: c });
                }
            }
        }
        Ok(())
    }
}

/// Splits a label raster into maximal 4-connected regions of equal nonzero
/// label, numbered in raster-scan discovery order starting at 1.
pub fn regions_from_raster(
    raster: &LabelRaster,
    classes: &BTreeMap<i16, String>,
    class_table_origin: &Path,
) -> Result<GroundTruth, CubeError> {
    let (h, w) = (raster.height, raster.width);
    let mut uf = UnionFind::new(h * w);
    for r in 0..h {
        for c in 0..w {
            let l = raster.label(r, c);
            if l == 0 {
                continue;
            }
            if c > 0 && raster.label(r, c - 1) == l {
                uf.union(r * w + c, r * w + c - 1);
            }
            if r > 0 && raster.label(r - 1, c) == l {
                uf.union(r * w + c, (r - 1) * w + c);
            }
        }
    }
    let mut region_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut regions: Vec<GtRegion> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let l = raster.label(r, c);
            if l == 0 {
                continue;
            }
            let root = uf.find(r * w + c);
            if let std::collections::btree_map::Entry::Vacant(e) = region_of_root.entry(root) {
                let class_name =
                    classes
                        .get(&l)
                        .cloned()
                        .ok_or_else(|| CubeError::LabelNotInClassTable {
                            label: l,
                            path: class_table_origin.to_path_buf(),
                        })?;
                e.insert(regions.len());
                regions.push(GtRegion {
                    id: regions.len() as u32 + 1,
                    class_name,
                    pixels: Vec::new(),
                });
            }
            let idx = region_of_root[&root];
            regions[idx].pixels.push((r, c));
        }
    }
    Ok(GroundTruth {
        height: h,
        width: w,
        regions,
    })
}

/// Loads ground truth for `cube` from a label raster and its class sidecar,
/// rejecting rasters of the wrong shape or regions touching background.
pub fn load_ground_truth(header_path: &Path, cube: &HsiCube) -> Result<GroundTruth, CubeError> {
    let raster = load_label_raster(header_path)?;
    if raster.height != cube.height || raster.width != cube.width {
        return Err(CubeError::GridMismatch {
            cube_h: cube.height,
            cube_w: cube.width,
            actual_h: raster.height,
            actual_w: raster.width,
        });
    }
    let sidecar = class_table_path(header_path);
    let classes = load_class_table(&sidecar)?;
    for &l in &raster.labels {
        if l != 0 && !classes.contains_key(&l) {
            return Err(CubeError::LabelNotInClassTable {
                label: l,
                path: sidecar,
            });
        }
    }
    let gt = regions_from_raster(&raster, &classes, &sidecar)?;
    for region in &gt.regions {
        let offenders: Vec<(usize, usize)> = region
            .pixels
            .iter()
            .filter(|&&(r, c)| !cube.is_valid(r, c))
            .take(8)
            .copied()
            .collect();
        if !offenders.is_empty() {
            return Err(CubeError::RegionOnBackground {
                region: region.id,
                coords: offenders,
            });
        }
    }
    Ok(gt)
}

// ---------------------------------------------------------------------------
// Pseudocolor rendering
// ---------------------------------------------------------------------------

/// Index of the band nearest `nm`; ties go to the lower index. Errors when
/// the request is farther than half the spectral range from every band.
pub fn nearest_band(cube: &HsiCube, nm: f64) -> Result<usize, CubeError> {
    let ws = &cube.wavelengths;
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (b, &w) in ws.iter().enumerate() {
        let d = (w - nm).abs();
        if d < best_dist {
            best_dist = d;
            best = b;
        }
    }
    let half_range = (ws[ws.len() - 1] - ws[0]) / 2.0;
    if best_dist > half_range {
        return Err(CubeError::WavelengthOutOfRange { requested: nm });
    }
    Ok(best)
}

/// Min-max scales the bands nearest the three requested wavelengths into an
/// 8-bit RGB image; background pixels render black.
pub fn render_pseudocolor(
    cube: &HsiCube,
    red_nm: f64,
    green_nm: f64,
    blue_nm: f64,
) -> Result<image::RgbImage, CubeError> {
    let channels = [
        nearest_band(cube, red_nm)?,
        nearest_band(cube, green_nm)?,
        nearest_band(cube, blue_nm)?,
    ];
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for (p, px) in cube.data.chunks(cube.bands).enumerate() {
        if !cube.mask[p] {
            continue;
        }
        for (ch, &b) in channels.iter().enumerate() {
            lo[ch] = lo[ch].min(px[b]);
            hi[ch] = hi[ch].max(px[b]);
        }
    }
    let mut img = image::RgbImage::new(cube.width as u32, cube.height as u32);
    for r in 0..cube.height {
        for c in 0..cube.width {
            let p = r * cube.width + c;
            let mut rgb = [0u8; 3];
            if cube.mask[p] {
                for (ch, &b) in channels.iter().enumerate() {
                    let v = cube.data[p * cube.bands + b];
                    let span = hi[ch] - lo[ch];
                    rgb[ch] = if span > 0.0 {
                        (((v - lo[ch]) / span) * 255.0).round().clamp(0.0, 255.0) as u8
                    } else {
                        0
                    };
                }
            }
            img.put_pixel(c as u32, r as u32, image::Rgb(rgb));
        }
    }
    Ok(img)
}
