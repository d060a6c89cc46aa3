//! Directory of versioned model files plus a `current` pointer.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::{AblationReport, TrainedModel};

const CURRENT: &str = "current";
const ABLATION: &str = "ablation.json";

#[derive(Debug, Clone)]
pub struct Registry {
    dir: PathBuf,
}

impl Registry {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn versions(&self) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(v) = name
                .strip_prefix("model-v")
                .and_then(|s| s.strip_suffix(".json"))
                .and_then(|s| s.parse().ok())
            {
                out.push(v);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Writes the model as the next version and points `current` at it.
    /// Returns the file name.
    pub fn save(&self, model: &TrainedModel) -> Result<String> {
        let next = self.versions()?.last().map_or(1, |v| v + 1);
        let name = format!("model-v{next:04}.json");
        write_atomic(&self.dir.join(&name), model.to_json()?.as_bytes())?;
        write_atomic(&self.dir.join(CURRENT), name.as_bytes())?;
        Ok(name)
    }

    /// The model named by `current`, if any.
    pub fn load_current(&self) -> Result<Option<(String, TrainedModel)>> {
        let pointer = self.dir.join(CURRENT);
        if !pointer.exists() {
            return Ok(None);
        }
        let name = fs::read_to_string(pointer)?.trim().to_string();
        if name.contains('/') || name.contains('\\') || name.is_empty() {
            return Err(Error::Model(format!("bad current pointer {name:?}")));
        }
        let model = TrainedModel::load(self.dir.join(&name))?;
        Ok(Some((name, model)))
    }

    pub fn save_ablation(&self, report: &AblationReport) -> Result<()> {
        write_atomic(&self.dir.join(ABLATION), serde_json::to_string(report)?.as_bytes())
    }

    pub fn load_ablation(&self) -> Result<Option<AblationReport>> {
        let path = self.dir.join(ABLATION);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
