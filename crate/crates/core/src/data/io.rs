//! Volume and mask files: NIfTI-1 (`.nii`, `.nii.gz`) and a raw
//! little-endian payload with a plain-text sidecar header (`<file>.hdr`).
//!
//! Raw payload voxels are stored with `W` varying fastest, matching NIfTI
//! ordering. Intensities are `f32`, masks `u8`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, ShapeBuilder};
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};

use crate::data::volume::{Mask, Volume, DEFAULT_SPACING};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    Nifti,
    Raw,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_ascii_lowercase();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            Ok(FileFormat::Nifti)
        } else if name.ends_with(".raw") {
            Ok(FileFormat::Raw)
        } else {
            Err(Error::format(path, "unsupported extension (expected .nii, .nii.gz or .raw)"))
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            FileFormat::Nifti => "nii.gz",
            FileFormat::Raw => "raw",
        }
    }
}

/// Case identifier derived from a file name (`case_001.nii.gz` -> `case_001`).
pub fn stem_id(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("volume");
    for ext in [".nii.gz", ".nii", ".raw"] {
        if let Some(s) = name.strip_suffix(ext) {
            return s.to_string();
        }
    }
    name.to_string()
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    let mut s = raw.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RawType {
    F32,
    U8,
}

struct RawHeader {
    shape: Vec<usize>,
    spacing: [f32; 3],
    dtype: RawType,
}

fn parse_sidecar(path: &Path) -> Result<RawHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut shape = None;
    let mut spacing = DEFAULT_SPACING;
    let mut dtype = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("malformed header line `{line}`")))?;
        let value = value.trim();
        match key.trim() {
            "shape" => {
                let dims: std::result::Result<Vec<usize>, _> = value.split_whitespace().map(str::parse).collect();
                shape = Some(dims.map_err(|_| Error::format(path, format!("bad shape `{value}`")))?);
            }
            "spacing" => {
                let s: std::result::Result<Vec<f32>, _> = value.split_whitespace().map(str::parse).collect();
                let s = s.map_err(|_| Error::format(path, format!("bad spacing `{value}`")))?;
                spacing = s
                    .try_into()
                    .map_err(|_| Error::format(path, "spacing needs three values"))?;
            }
            "dtype" => {
                dtype = Some(match value {
                    "f32" | "float32" => RawType::F32,
                    "u8" | "uint8" => RawType::U8,
                    other => return Err(Error::format(path, format!("unsupported dtype `{other}`"))),
                })
            }
            other => return Err(Error::format(path, format!("unknown header key `{other}`"))),
        }
    }
    let shape = shape.ok_or_else(|| Error::format(path, "missing `shape`"))?;
    let dtype = dtype.ok_or_else(|| Error::format(path, "missing `dtype`"))?;
    Ok(RawHeader { shape, spacing, dtype })
}

fn require_3d(path: &Path, shape: &[usize]) -> Result<[usize; 3]> {
    let mut dims = shape.to_vec();
    // trailing singleton axes are tolerated
    while dims.len() > 3 && dims.last() == Some(&1) {
        dims.pop();
    }
    match dims[..] {
        [w, h, l] => Ok([w, h, l]),
        _ => Err(Error::format(path, format!("expected a 3-d grid, found shape {:?}", shape))),
    }
}

/// Voxel values in `(W, H, L)` row-major order plus spacing.
fn read_grid(path: &Path) -> Result<(Array3<f32>, [f32; 3])> {
    match FileFormat::from_path(path)? {
        FileFormat::Raw => {
            let header = parse_sidecar(&sidecar_path(path))?;
            let [w, h, l] = require_3d(path, &header.shape)?;
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            let n = w * h * l;
            let values: Vec<f32> = match header.dtype {
                RawType::F32 => {
                    if bytes.len() != 4 * n {
                        return Err(Error::format(path, format!("expected {} bytes of f32 payload, found {}", 4 * n, bytes.len())));
                    }
                    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
                }
                RawType::U8 => {
                    if bytes.len() != n {
                        return Err(Error::format(path, format!("expected {} bytes of u8 payload, found {}", n, bytes.len())));
                    }
                    bytes.iter().map(|&b| b as f32).collect()
                }
            };
            let grid = Array3::from_shape_vec((w, h, l).f(), values).map_err(|e| Error::format(path, e.to_string()))?;
            Ok((grid.as_standard_layout().into_owned(), header.spacing))
        }
        FileFormat::Nifti => {
            if !path.exists() {
                return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
            }
            let obj = ReaderOptions::new()
                .read_file(path)
                .map_err(|e| Error::format(path, format!("cannot read NIfTI: {e}")))?;
            let pix = obj.header().pixdim;
            let spacing = if pix[1..4].iter().all(|&p| p > 0.0 && p.is_finite()) {
                [pix[1], pix[2], pix[3]]
            } else {
                DEFAULT_SPACING
            };
            let arr = obj
                .into_volume()
                .into_ndarray::<f32>()
                .map_err(|e| Error::format(path, format!("cannot decode NIfTI voxels: {e}")))?;
            let [w, h, l] = require_3d(path, arr.shape())?;
            let arr = arr
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((w, h, l))
                .map_err(|e| Error::format(path, e.to_string()))?;
            Ok((arr, spacing))
        }
    }
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let (grid, spacing) = read_grid(path)?;
    Volume::new(stem_id(path), grid, spacing).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let (grid, spacing) = read_grid(path)?;
    if grid.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::format(path, "mask contains values other than 0 and 1"));
    }
    Ok(Mask { data: grid.mapv(|v| v as u8), spacing })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn write_sidecar(path: &Path, shape: [usize; 3], spacing: [f32; 3], dtype: &str) -> Result<()> {
    let text = format!(
        "# raw volume header; payload is little-endian with W varying fastest\nshape = {} {} {}\nspacing = {} {} {}\ndtype = {}\n",
        shape[0], shape[1], shape[2], spacing[0], spacing[1], spacing[2], dtype
    );
    let side = sidecar_path(path);
    fs::write(&side, text).map_err(|e| Error::io(side, e))
}

fn nifti_header(spacing: [f32; 3]) -> NiftiHeader {
    NiftiHeader {
        pixdim: [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0],
        xyzt_units: 2, // millimetres
        ..NiftiHeader::default()
    }
}

fn fortran_order<T: Copy>(a: &Array3<T>) -> impl Iterator<Item = T> + '_ {
    a.t().into_iter().copied()
}

pub fn save_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    match FileFormat::from_path(path)? {
        FileFormat::Raw => {
            let bytes: Vec<u8> = fortran_order(&v.data).flat_map(f32::to_le_bytes).collect();
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
            write_sidecar(path, v.shape(), v.spacing, "f32")
        }
        FileFormat::Nifti => {
            let header = nifti_header(v.spacing);
            nifti::writer::WriterOptions::new(path)
                .reference_header(&header)
                .write_nifti(&v.data)
                .map_err(|e| Error::format(path, format!("cannot write NIfTI: {e}")))
        }
    }
}

pub fn save_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    match FileFormat::from_path(path)? {
        FileFormat::Raw => {
            let bytes: Vec<u8> = fortran_order(&m.data).collect();
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
            write_sidecar(path, m.shape(), m.spacing, "u8")
        }
        FileFormat::Nifti => {
            let header = nifti_header(m.spacing);
            nifti::writer::WriterOptions::new(path)
                .reference_header(&header)
                .write_nifti(&m.data)
                .map_err(|e| Error::format(path, format!("cannot write NIfTI: {e}")))
        }
    }
}
