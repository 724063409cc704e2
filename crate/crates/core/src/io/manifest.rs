//! Project manifest tying the input files and stage outputs of one dataset together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, FORMAT_VERSION};
use crate::geometry::SamplingConfig;
use crate::{Error, Result};

/// Paths are stored relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub format_version: u32,
    pub panoramas: PathBuf,
    pub matches: Vec<PathBuf>,
    #[serde(default)]
    pub query_matches: Option<PathBuf>,
    #[serde(default)]
    pub masks: Option<PathBuf>,
    #[serde(default)]
    pub road_labels: Option<PathBuf>,
    #[serde(default)]
    pub marks: Option<PathBuf>,
    #[serde(default)]
    pub tracks: Option<PathBuf>,
    #[serde(default)]
    pub trap: Option<PathBuf>,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    pub sampling: SamplingConfig,
    /// Query image `[width, height]`.
    #[serde(default)]
    pub query_size: Option<[u32; 2]>,
    /// Stage name to output file.
    #[serde(default)]
    pub outputs: BTreeMap<String, PathBuf>,
}

impl ProjectManifest {
    pub fn new(panoramas: impl Into<PathBuf>, sampling: SamplingConfig) -> Self {
        ProjectManifest {
            format_version: FORMAT_VERSION,
            panoramas: panoramas.into(),
            matches: Vec::new(),
            query_matches: None,
            masks: None,
            road_labels: None,
            marks: None,
            tracks: None,
            trap: None,
            truth: None,
            sampling,
            query_size: None,
            outputs: BTreeMap::new(),
        }
    }

    fn referenced(&self) -> Vec<&PathBuf> {
        let mut v = vec![&self.panoramas];
        v.extend(&self.matches);
        v.extend(
            [&self.query_matches, &self.masks, &self.road_labels, &self.marks, &self.tracks, &self.trap, &self.truth]
                .into_iter()
                .flatten(),
        );
        v.extend(self.outputs.values());
        v
    }

    /// Absolute path of a manifest entry.
    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// Loads a manifest and checks that every referenced file exists.
pub fn read_manifest(path: &Path) -> Result<ProjectManifest> {
    let m: ProjectManifest = read_json(path)?;
    m.sampling.validate()?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in m.referenced() {
        let full = ProjectManifest::resolve(base, p);
        if !full.is_file() {
            return Err(Error::validation(format!(
                "manifest {} references missing file {}",
                path.display(),
                full.display()
            )));
        }
    }
    Ok(m)
}

pub fn write_manifest(path: &Path, m: &ProjectManifest) -> Result<()> {
    write_json(path, m)
}

/// Records a stage output in an existing manifest, if there is one.
pub fn register_output(manifest: &Path, stage: &str, output: &Path) -> Result<bool> {
    if !manifest.is_file() {
        return Ok(false);
    }
    let mut m: ProjectManifest = read_json(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    let rel = output.strip_prefix(base).unwrap_or(output).to_path_buf();
    m.outputs.insert(stage.to_string(), rel);
    write_manifest(manifest, &m)?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_reference_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("manifest.json");
        let mut m = ProjectManifest::new("panoramas.json", SamplingConfig::default());
        write_manifest(&mp, &m).unwrap();
        assert!(read_manifest(&mp).unwrap_err().to_string().contains("panoramas.json"));
        std::fs::write(dir.path().join("panoramas.json"), "{}").unwrap();
        assert_eq!(read_manifest(&mp).unwrap(), m);

        std::fs::write(dir.path().join("recon.json"), "{}").unwrap();
        assert!(register_output(&mp, "reconstruct", &dir.path().join("recon.json")).unwrap());
        m.outputs.insert("reconstruct".into(), "recon.json".into());
        assert_eq!(read_manifest(&mp).unwrap(), m);
        assert!(!register_output(&dir.path().join("none.json"), "x", &mp).unwrap());
    }
}
