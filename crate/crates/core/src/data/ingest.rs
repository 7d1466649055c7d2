use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};

use super::{Dataset, Provenance, Sample};
use crate::error::{io, Error, Result};
use crate::label::{day_to_level, Level};

/// Files that were found but not ingested.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SkipReport {
    pub entries: Vec<(PathBuf, String)>,
}

impl SkipReport {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One `path<TAB>reason` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (path, reason) in &self.entries {
            let _ = writeln!(out, "{}\t{reason}", path.display());
        }
        out
    }
}

/// Reads an exclusion list: one relative path per line, `#` starts a comment.
pub fn read_exclusions(path: &Path) -> Result<BTreeSet<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(PathBuf::from)
        .collect())
}

/// Label implied by a directory name: `level_X` or `day_N`.
fn directory_label(name: &str) -> Option<Result<Level>> {
    if let Some(letter) = name.strip_prefix("level_") {
        return Some(letter.parse());
    }
    let day = name.strip_prefix("day_")?;
    Some(
        day.parse::<u32>()
            .map_err(|_| Error::Config(format!("bad day directory '{name}'")))
            .and_then(day_to_level),
    )
}

/// Loads a directory tree of `level_{A..D}/` or `day_{NN}/` folders.
///
/// Each image is decoded, converted to RGB and resized to `side x side` with a
/// bilinear filter. Undecodable files, out-of-range days and unlabeled
/// directories are reported rather than fatal; excluded files (paths relative
/// to `root`) are dropped silently.
pub fn ingest_real(root: &Path, exclusions: &BTreeSet<PathBuf>, side: u32) -> Result<(Dataset, SkipReport)> {
    if side == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut samples = Vec::new();
    let mut report = SkipReport::default();
    for dir in dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let label = match directory_label(&name) {
            None => continue,
            Some(Ok(label)) => label,
            Some(Err(e)) => {
                report.entries.push((dir.clone(), e.to_string()));
                continue;
            }
        };
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .filter(|p| !p.file_name().and_then(|n| n.to_str()).unwrap_or(".").starts_with('.'))
            .collect();
        files.sort();
        for path in files {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_path_buf();
            if exclusions.contains(&rel) {
                continue;
            }
            match image::open(&path) {
                Ok(img) => {
                    let mut rgb = img.to_rgb8();
                    if rgb.width() != side || rgb.height() != side {
                        rgb = imageops::resize(&rgb, side, side, FilterType::Triangle);
                    }
                    samples.push(Sample {
                        image: rgb,
                        label,
                        provenance: Provenance::File(rel),
                    });
                }
                Err(e) => report.entries.push((rel, format!("undecodable: {e}"))),
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!("no usable images under {}", root.display())));
    }
    Ok((Dataset::new(samples), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn labels_from_directories() {
        assert_eq!(directory_label("level_C").unwrap().unwrap(), Level::C);
        assert_eq!(directory_label("day_07").unwrap().unwrap(), Level::B);
        assert!(directory_label("day_31").unwrap().is_err());
        assert!(directory_label("misc").is_none());
    }

    #[test]
    fn ingest_with_exclusion_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir(root.join("day_02")).unwrap();
        fs::create_dir(root.join("day_20")).unwrap();
        for (i, d) in ["day_02", "day_02", "day_20", "day_20"].iter().enumerate() {
            RgbImage::from_pixel(30, 20, Rgb([10 * i as u8, 0, 0]))
                .save(root.join(d).join(format!("{i}.png")))
                .unwrap();
        }
        fs::write(root.join("day_20").join("broken.png"), b"not a png").unwrap();
        let excl_path = root.join("exclude.txt");
        fs::write(&excl_path, "# blurry\nday_02/1.png\n\n").unwrap();
        let excl = read_exclusions(&excl_path).unwrap();

        let (ds, report) = ingest_real(root, &excl, 16).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.class_counts(), [1, 0, 2, 0]);
        assert_eq!(ds.image_side(), Some(16));
        assert_eq!(report.len(), 1);
        assert!(report.to_text().starts_with("day_20/broken.png\t"));

        let (ds, report) = ingest_real(root, &BTreeSet::new(), 16).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(report.len(), 1);
    }

    #[test]
    fn empty_tree_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest_real(dir.path(), &BTreeSet::new(), 16),
            Err(Error::EmptyDataset(_))
        ));
    }
}
