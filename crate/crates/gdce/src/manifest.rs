//! Dataset manifests: one JSON document listing every image with its label,
//! scanner and fold. Image paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use gdce_core::image::{Normalization, Plane, RawImage};
use gdce_core::train::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::io;

pub const FOLDS: usize = gdce_core::synth::FOLDS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub path: PathBuf,
    pub label: usize,
    pub scanner: String,
    pub fold: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub entries: Vec<Entry>,
}

impl DatasetManifest {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self, path: &Path) -> Result<()> {
        let bad = |reason: String| DataError::Manifest { path: path.to_owned(), reason };
        if self.entries.is_empty() {
            return Err(DataError::EmptyManifest(path.to_owned()));
        }
        if self.class_names.len() < 2 {
            return Err(bad("at least two class names are required".into()));
        }
        for e in &self.entries {
            if e.label >= self.classes() {
                return Err(bad(format!(
                    "{}: label {} out of range for {} classes",
                    e.path.display(),
                    e.label,
                    self.classes()
                )));
            }
            if e.fold >= FOLDS {
                return Err(bad(format!("{}: fold {} outside 0..{FOLDS}", e.path.display(), e.fold)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| DataError::Manifest { path: path.to_owned(), reason: e.to_string() })?;
        m.validate(path)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate(path)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| DataError::io(path, e))
    }

    /// Keep entries whose label is not listed.
    pub fn without_classes(&self, drop: &[usize]) -> Self {
        Self {
            class_names: self.class_names.clone(),
            entries: self.entries.iter().filter(|e| !drop.contains(&e.label)).cloned().collect(),
        }
    }
}

/// A manifest with every image loaded.
#[derive(Debug, Clone)]
pub struct LoadedSet {
    pub manifest: DatasetManifest,
    pub images: Vec<RawImage>,
    pub dir: PathBuf,
}

impl LoadedSet {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(path)?;
        let dir = path.parent().unwrap_or(Path::new("")).to_owned();
        let images = manifest
            .entries
            .iter()
            .map(|e| {
                let mut img = io::load_image(&dir.join(&e.path))?;
                img.label = Some(e.label);
                img.scanner_id = e.scanner.clone();
                if let Some((c, w)) = e.window {
                    let win = gdce_core::Window::new(c, w).map_err(|err| DataError::Image(e.path.clone(), err))?;
                    img = img.with_window(win);
                }
                Ok(img)
            })
            .collect::<Result<_>>()?;
        Ok(Self { manifest, images, dir })
    }

    pub fn planes(&self, norm: Normalization) -> Result<Vec<Plane>> {
        self.images
            .iter()
            .zip(&self.manifest.entries)
            .map(|(img, e)| norm.apply(img).map_err(|err| DataError::Image(e.path.clone(), err)))
            .collect()
    }

    /// Normalized dataset restricted to entries passing `keep`.
    pub fn dataset(&self, norm: Normalization, keep: impl Fn(&Entry) -> bool) -> Result<Dataset> {
        let planes = self.planes(norm)?;
        let (images, labels): (Vec<Plane>, Vec<usize>) =
            planes.into_iter().zip(&self.manifest.entries).filter(|(_, e)| keep(e)).map(|(p, e)| (p, e.label)).unzip();
        Dataset::new(images, labels).map_err(|e| DataError::Image(self.dir.clone(), e))
    }

    pub fn image_size(&self) -> Result<usize> {
        let first = self.images.first().ok_or_else(|| DataError::EmptyManifest(self.dir.clone()))?;
        if first.width() != first.height() {
            return Err(DataError::Manifest {
                path: self.dir.clone(),
                reason: format!("images must be square, got {}x{}", first.width(), first.height()),
            });
        }
        Ok(first.width())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(label: usize) -> DatasetManifest {
        DatasetManifest {
            class_names: vec!["A".into(), "B".into()],
            entries: vec![Entry { path: "x.pgm".into(), label, scanner: "s".into(), fold: 0, window: None }],
        }
    }

    #[test]
    fn label_out_of_range() {
        let err = manifest(2).validate(Path::new("m.json")).unwrap_err();
        assert!(err.to_string().contains("label 2 out of range"), "{err}");
    }

    #[test]
    fn empty_manifest() {
        let mut m = manifest(0);
        m.entries.clear();
        let err = m.validate(Path::new("m.json")).unwrap_err();
        assert!(err.to_string().contains("no entries"));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = manifest(1);
        m.save(&p).unwrap();
        assert_eq!(DatasetManifest::load(&p).unwrap(), m);
    }
}
