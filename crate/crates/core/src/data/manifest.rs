//! Dataset manifest CSV (`case_id,volume_path,mask_path[,fold]`) and k-fold
//! partitioning.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    pub volume_path: PathBuf,
    pub mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Unique ids; folds either on every entry or on none.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.case_id.as_str()) {
                return Err(Error::Argument(format!("duplicate case id `{}` in manifest", e.case_id)));
            }
        }
        let with_fold = self.entries.iter().filter(|e| e.fold.is_some()).count();
        if with_fold != 0 && with_fold != self.entries.len() {
            return Err(Error::Argument("fold column must be set for every case or for none".into()));
        }
        Ok(())
    }

    pub fn has_folds(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.fold.is_some())
    }

    pub fn num_folds(&self) -> usize {
        self.entries.iter().filter_map(|e| e.fold).max().map_or(0, |m| m + 1)
    }

    /// `(train, test)` entries for one fold.
    pub fn split(&self, fold: usize) -> (Vec<ManifestEntry>, Vec<ManifestEntry>) {
        self.entries.iter().cloned().partition(|e| e.fold != Some(fold))
    }

    /// Reads a manifest; relative paths resolve against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers()?.clone();
        let expected = ["case_id", "volume_path", "mask_path"];
        if headers.len() < 3 || headers.iter().take(3).ne(expected) || (headers.len() == 4 && &headers[3] != "fold") || headers.len() > 4 {
            return Err(Error::format(path, format!("manifest header must be `case_id,volume_path,mask_path[,fold]`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut entries = Vec::new();
        for rec in reader.deserialize() {
            let mut e: ManifestEntry = rec?;
            for p in [&mut e.volume_path, &mut e.mask_path] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            entries.push(e);
        }
        Self::new(entries)
    }

    /// Fails with an I/O error naming the first referenced file that is missing.
    pub fn check_files(&self) -> Result<()> {
        for e in &self.entries {
            for p in [&e.volume_path, &e.mask_path] {
                if !p.exists() {
                    return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, format!("referenced by case `{}`", e.case_id))));
                }
            }
        }
        Ok(())
    }

    /// Writes the manifest; paths inside the manifest's directory are stored relative.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let folds = self.has_folds();
        if folds {
            w.write_record(["case_id", "volume_path", "mask_path", "fold"])?;
        } else {
            w.write_record(["case_id", "volume_path", "mask_path"])?;
        }
        let rel = |p: &Path| p.strip_prefix(&base).unwrap_or(p).to_string_lossy().into_owned();
        for e in &self.entries {
            let mut rec = vec![e.case_id.clone(), rel(&e.volume_path), rel(&e.mask_path)];
            if folds {
                rec.push(e.fold.unwrap_or_default().to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Assigns every case to one of `k` folds. Cases are shuffled with `seed`
/// and dealt round-robin, so fold sizes differ by at most one.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<DatasetManifest> {
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    if manifest.len() < k {
        return Err(Error::Argument(format!("{} cases cannot fill {} folds", manifest.len(), k)));
    }
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive_str(seed, "folds", &[k as u64])));
    let mut entries = manifest.entries.clone();
    for (pos, &idx) in order.iter().enumerate() {
        entries[idx].fold = Some(pos % k);
    }
    DatasetManifest::new(entries)
}
