//! File formats: raw volumes with a plain-text header, the model manifest,
//! and slice export.
//!
//! A volume on disk is a pair of files: a text header using MetaImage field
//! names (`DimSize`, `ElementSpacing`, `Offset`, `ElementType`,
//! `ElementDataFile`, ...) and a little-endian raw payload next to it.
//! Supported element types are scalar `MET_FLOAT` (intensities),
//! `MET_INT` (labels) and 3-channel `MET_FLOAT` (vector fields). Headers
//! round-trip losslessly: spacing and origin print in shortest-round-trip
//! decimal form.
//!
//! A model directory holds `manifest.json` plus three volumes (template and
//! the two transported fields). The manifest stores the temporal curve and
//! ages at full precision, so a saved-and-reloaded model synthesizes
//! bit-identical volumes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gamma::GammaCurve;
use crate::grid::{GridSpec, LabelVolume, ScalarVolume, VelocityField};
use crate::model::{AgingModel, Provenance};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed header: {reason}")]
    MalformedHeader {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}: unknown element type {found:?}")]
    UnknownElementType { path: PathBuf, found: String },
    #[error("{path}: payload size mismatch: expected {expected_bytes} bytes, found {actual_bytes}")]
    SizeMismatch {
        path: PathBuf,
        expected_bytes: u64,
        actual_bytes: u64,
    },
    #[error("{path}: invalid data: {reason}")]
    InvalidData { path: PathBuf, reason: String },
    #[error("manifest version {found} is not supported (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("missing model component: {path}")]
    MissingComponent { path: PathBuf },
    #[error("{path}: manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A typed volume as stored on disk.
#[derive(Debug, Clone)]
pub enum Volume {
    Scalar(ScalarVolume),
    Vector(VelocityField),
    Label(LabelVolume),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElementKind {
    Float1,
    Float3,
    Int1,
}

impl ElementKind {
    fn bytes_per_voxel(self) -> u64 {
        match self {
            ElementKind::Float1 | ElementKind::Int1 => 4,
            ElementKind::Float3 => 12,
        }
    }
}

fn format_triplet_f64(v: [f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn write_header(
    path: &Path,
    grid: &GridSpec,
    kind: ElementKind,
    data_name: &str,
) -> Result<(), IoError> {
    let (etype, channels) = match kind {
        ElementKind::Float1 => ("MET_FLOAT", 1),
        ElementKind::Float3 => ("MET_FLOAT", 3),
        ElementKind::Int1 => ("MET_INT", 1),
    };
    let header = format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         DimSize = {} {} {}\n\
         ElementSpacing = {}\n\
         Offset = {}\n\
         ElementType = {}\n\
         ElementNumberOfChannels = {}\n\
         ElementByteOrderMSB = False\n\
         ElementDataFile = {}\n",
        grid.dims[0],
        grid.dims[1],
        grid.dims[2],
        format_triplet_f64(grid.spacing),
        format_triplet_f64(grid.origin),
        etype,
        channels,
        data_name,
    );
    fs::write(path, header).map_err(io_err(path))
}

fn data_path_for(header_path: &Path) -> (PathBuf, String) {
    let stem = header_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "volume".to_string());
    let name = format!("{stem}.raw");
    (header_path.with_file_name(&name), name)
}

/// Write any supported volume; the payload lands next to the header with a
/// `.raw` extension.
pub fn write_volume(volume: &Volume, header_path: &Path) -> Result<(), IoError> {
    match volume {
        Volume::Scalar(v) => write_scalar_volume(v, header_path),
        Volume::Vector(v) => write_vector_volume(v, header_path),
        Volume::Label(v) => write_label_volume(v, header_path),
    }
}

pub fn write_scalar_volume(vol: &ScalarVolume, header_path: &Path) -> Result<(), IoError> {
    let (data_path, data_name) = data_path_for(header_path);
    write_header(header_path, &vol.grid, ElementKind::Float1, &data_name)?;
    let mut bytes = Vec::with_capacity(vol.data.len() * 4);
    for v in &vol.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&data_path, bytes).map_err(io_err(&data_path))
}

pub fn write_vector_volume(vol: &VelocityField, header_path: &Path) -> Result<(), IoError> {
    let (data_path, data_name) = data_path_for(header_path);
    write_header(header_path, &vol.grid, ElementKind::Float3, &data_name)?;
    let mut bytes = Vec::with_capacity(vol.vectors.len() * 12);
    for v in &vol.vectors {
        for c in v {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    fs::write(&data_path, bytes).map_err(io_err(&data_path))
}

pub fn write_label_volume(vol: &LabelVolume, header_path: &Path) -> Result<(), IoError> {
    let (data_path, data_name) = data_path_for(header_path);
    write_header(header_path, &vol.grid, ElementKind::Int1, &data_name)?;
    let mut bytes = Vec::with_capacity(vol.labels.len() * 4);
    for v in &vol.labels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&data_path, bytes).map_err(io_err(&data_path))
}

struct ParsedHeader {
    grid: GridSpec,
    kind: ElementKind,
    data_file: String,
}

fn parse_triplet<T: std::str::FromStr>(
    value: &str,
    path: &Path,
    line: usize,
) -> Result<[T; 3], IoError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(IoError::MalformedHeader {
            path: path.to_path_buf(),
            line,
            reason: format!("expected three values, got {value:?}"),
        });
    }
    let mut out: Vec<T> = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| IoError::MalformedHeader {
            path: path.to_path_buf(),
            line,
            reason: format!("cannot parse {p:?}"),
        })?);
    }
    Ok(out.try_into().map_err(|_| unreachable!()).unwrap())
}

fn parse_header(path: &Path, text: &str) -> Result<ParsedHeader, IoError> {
    let mut dims: Option<[usize; 3]> = None;
    let mut spacing: Option<[f64; 3]> = None;
    let mut origin: Option<[f64; 3]> = None;
    let mut etype: Option<String> = None;
    let mut channels: usize = 1;
    let mut data_file: Option<String> = None;
    let malformed = |line: usize, reason: String| IoError::MalformedHeader {
        path: path.to_path_buf(),
        line,
        reason,
    };
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| malformed(line_no, format!("expected `key = value`, got {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "ObjectType" => {
                if value != "Image" {
                    return Err(malformed(line_no, format!("unsupported ObjectType {value:?}")));
                }
            }
            "NDims" => {
                if value != "3" {
                    return Err(malformed(line_no, format!("only NDims = 3 is supported, got {value:?}")));
                }
            }
            "DimSize" => dims = Some(parse_triplet::<usize>(value, path, line_no)?),
            "ElementSpacing" => spacing = Some(parse_triplet::<f64>(value, path, line_no)?),
            "Offset" => origin = Some(parse_triplet::<f64>(value, path, line_no)?),
            "ElementType" => etype = Some(value.to_string()),
            "ElementNumberOfChannels" => {
                channels = value
                    .parse()
                    .map_err(|_| malformed(line_no, format!("bad channel count {value:?}")))?;
            }
            "ElementByteOrderMSB" => {
                if value != "False" {
                    return Err(malformed(
                        line_no,
                        "only little-endian payloads are supported".to_string(),
                    ));
                }
            }
            "ElementDataFile" => data_file = Some(value.to_string()),
            _ => {
                return Err(malformed(line_no, format!("unknown key {key:?}")));
            }
        }
    }
    let dims = dims.ok_or_else(|| malformed(0, "missing DimSize".into()))?;
    let spacing = spacing.unwrap_or([1.0, 1.0, 1.0]);
    let origin = origin.unwrap_or([0.0, 0.0, 0.0]);
    let grid = GridSpec::new(dims, spacing, origin).map_err(|e| IoError::MalformedHeader {
        path: path.to_path_buf(),
        line: 0,
        reason: e.to_string(),
    })?;
    let etype = etype.ok_or_else(|| malformed(0, "missing ElementType".into()))?;
    let kind = match (etype.as_str(), channels) {
        ("MET_FLOAT", 1) => ElementKind::Float1,
        ("MET_FLOAT", 3) => ElementKind::Float3,
        ("MET_INT", 1) => ElementKind::Int1,
        _ => {
            return Err(IoError::UnknownElementType {
                path: path.to_path_buf(),
                found: format!("{etype} x{channels}"),
            })
        }
    };
    let data_file = data_file.ok_or_else(|| malformed(0, "missing ElementDataFile".into()))?;
    Ok(ParsedHeader {
        grid,
        kind,
        data_file,
    })
}

/// Read a typed volume from its header file.
pub fn read_volume(header_path: &Path) -> Result<Volume, IoError> {
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    let header = parse_header(header_path, &text)?;
    let data_path = header_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&header.data_file);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let expected = header.grid.voxel_count() as u64 * header.kind.bytes_per_voxel();
    if bytes.len() as u64 != expected {
        return Err(IoError::SizeMismatch {
            path: data_path,
            expected_bytes: expected,
            actual_bytes: bytes.len() as u64,
        });
    }
    let invalid = |reason: String| IoError::InvalidData {
        path: data_path.clone(),
        reason,
    };
    match header.kind {
        ElementKind::Float1 => {
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!("non-finite value at voxel {i}")));
            }
            Ok(Volume::Scalar(ScalarVolume {
                grid: header.grid,
                data,
            }))
        }
        ElementKind::Float3 => {
            let flat: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!("non-finite component at index {i}")));
            }
            let vectors: Vec<[f32; 3]> = flat
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect();
            Ok(Volume::Vector(VelocityField {
                grid: header.grid,
                vectors,
            }))
        }
        ElementKind::Int1 => {
            let labels: Vec<i32> = bytes
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(i) = labels.iter().position(|l| *l < 0) {
                return Err(invalid(format!("negative label at voxel {i}")));
            }
            Ok(Volume::Label(LabelVolume {
                grid: header.grid,
                labels,
            }))
        }
    }
}

pub fn read_scalar_volume(path: &Path) -> Result<ScalarVolume, IoError> {
    match read_volume(path)? {
        Volume::Scalar(v) => Ok(v),
        _ => Err(IoError::InvalidData {
            path: path.to_path_buf(),
            reason: "expected a scalar volume".into(),
        }),
    }
}

pub fn read_vector_volume(path: &Path) -> Result<VelocityField, IoError> {
    match read_volume(path)? {
        Volume::Vector(v) => Ok(v),
        _ => Err(IoError::InvalidData {
            path: path.to_path_buf(),
            reason: "expected a vector volume".into(),
        }),
    }
}

pub fn read_label_volume(path: &Path) -> Result<LabelVolume, IoError> {
    match read_volume(path)? {
        Volume::Label(v) => Ok(v),
        _ => Err(IoError::InvalidData {
            path: path.to_path_buf(),
            reason: "expected a label volume".into(),
        }),
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    format_version: u32,
    global_template: String,
    forward_field: String,
    backward_field: String,
    ages: Vec<f64>,
    reference_index: usize,
    reference_age: f64,
    gamma: GammaCurve,
    provenance: Provenance,
}

/// Write the model directory: manifest plus three volumes.
pub fn save_model(model: &AgingModel, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_scalar_volume(&model.template, &dir.join("global_template.mhd"))?;
    write_vector_volume(&model.forward, &dir.join("forward_field.mhd"))?;
    write_vector_volume(&model.backward, &dir.join("backward_field.mhd"))?;
    let doc = ManifestDoc {
        format_version: MANIFEST_VERSION,
        global_template: "global_template.mhd".into(),
        forward_field: "forward_field.mhd".into(),
        backward_field: "backward_field.mhd".into(),
        ages: model.ages.clone(),
        reference_index: model.reference_index,
        reference_age: model.reference_age,
        gamma: model.gamma.clone(),
        provenance: model.provenance.clone(),
    };
    let manifest_path = dir.join(MANIFEST_NAME);
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| IoError::Manifest {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))
}

fn load_component<T>(
    dir: &Path,
    name: &str,
    read: impl Fn(&Path) -> Result<T, IoError>,
) -> Result<T, IoError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(IoError::MissingComponent { path });
    }
    read(&path)
}

/// Load a model directory, validating version and grid consistency.
pub fn load_model(dir: &Path) -> Result<AgingModel, IoError> {
    let manifest_path = dir.join(MANIFEST_NAME);
    if !manifest_path.exists() {
        return Err(IoError::MissingComponent {
            path: manifest_path,
        });
    }
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| IoError::Manifest {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    if doc.format_version != MANIFEST_VERSION {
        return Err(IoError::UnsupportedVersion {
            found: doc.format_version,
            supported: MANIFEST_VERSION,
        });
    }
    let template = load_component(dir, &doc.global_template, read_scalar_volume)?;
    let forward = load_component(dir, &doc.forward_field, read_vector_volume)?;
    let backward = load_component(dir, &doc.backward_field, read_vector_volume)?;
    for (name, grid) in [("forward", forward.grid), ("backward", backward.grid)] {
        if !grid.compatible(&template.grid) {
            return Err(IoError::InvalidData {
                path: dir.to_path_buf(),
                reason: format!("{name} field grid does not match the template grid"),
            });
        }
    }
    if doc.reference_index >= doc.ages.len() {
        return Err(IoError::Manifest {
            path: manifest_path,
            reason: "reference index out of range".into(),
        });
    }
    Ok(AgingModel {
        template,
        forward,
        backward,
        gamma: doc.gamma,
        reference_index: doc.reference_index,
        reference_age: doc.reference_age,
        ages: doc.ages,
        provenance: doc.provenance,
    })
}

/// Export the middle z-slice as a binary PGM, intensities rescaled to 0-255.
pub fn write_middle_slice_pgm(vol: &ScalarVolume, path: &Path) -> Result<(), IoError> {
    let g = vol.grid;
    let z = g.dims[2] / 2;
    let (lo, hi) = vol.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(g.dims[0] * g.dims[1] + 64);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", g.dims[0], g.dims[1]).as_bytes());
    for y in 0..g.dims[1] {
        for x in 0..g.dims[0] {
            let v = (vol.at(x, y, z) as f64 - lo) / span;
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))
}
