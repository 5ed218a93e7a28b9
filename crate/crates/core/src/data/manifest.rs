//! Tab-separated dataset listings: `id<TAB>image<TAB>mask`, optionally
//! followed by a prediction path. Relative paths are resolved against the
//! manifest's directory. Blank lines and lines
//! starting with `#` are skipped.

use std::fs;
use std::path::{Path, PathBuf};

use super::{load_mask, load_pgm, Sample};
use crate::error::{data_err, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub prediction: Option<PathBuf>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| data_err!("cannot read manifest {}: {e}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(data_err!(
                "{}:{}: expected id, image and mask separated by tabs",
                path.display(),
                i + 1
            ));
        }
        out.push(ManifestEntry {
            id: fields[0].to_string(),
            image: base.join(fields[1]),
            mask: base.join(fields[2]),
            prediction: fields.get(3).filter(|f| !f.is_empty()).map(|f| base.join(f)),
        });
    }
    if out.is_empty() {
        return Err(data_err!("manifest {} lists no samples", path.display()));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = String::new();
    for e in entries {
        s.push_str(&format!("{}\t{}\t{}", e.id, e.image.display(), e.mask.display()));
        if let Some(p) = &e.prediction {
            s.push_str(&format!("\t{}", p.display()));
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn load_samples(entries: &[ManifestEntry]) -> Result<Vec<Sample>> {
    entries
        .iter()
        .map(|e| Sample::new(e.id.clone(), load_pgm(&e.image)?, load_mask(&e.mask)?))
        .collect()
}
