//! Pair directories as written by `synth`.
//!
//! `manifest.txt` lists one pair per line: `hazy clean A beta seed`, with
//! `#` comments. Without a manifest, `<stem>_hazy.<ext>` files are paired
//! with `<stem>_clean.<ext>`.

use std::fs;
use std::path::{Path, PathBuf};

use lpdh_core::hazesynth::HazeParams;
use lpdh_core::imageio::read_image;
use lpdh_core::{Error, Result, Tensor};

pub const MANIFEST: &str = "manifest.txt";
pub const MANIFEST_HEADER: &str = "# hazy clean A beta seed";

pub fn manifest_line(hazy: &str, clean: &str, p: &HazeParams) -> String {
    format!("{hazy} {clean} {:.9} {:.9} {}", p.a, p.beta, p.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFiles {
    pub name: String,
    pub hazy: PathBuf,
    pub clean: PathBuf,
}

fn from_manifest(dir: &Path, text: &str) -> Result<Vec<PairFiles>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(hazy), Some(clean)) = (parts.next(), parts.next()) else {
            return Err(Error::Format(format!(
                "{}:{}: expected `hazy clean A beta seed`",
                dir.join(MANIFEST).display(),
                no + 1
            )));
        };
        out.push(PairFiles {
            name: hazy.to_string(),
            hazy: dir.join(hazy),
            clean: dir.join(clean),
        });
    }
    Ok(out)
}

fn by_suffix(dir: &Path) -> Result<Vec<PairFiles>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    for name in names {
        let Some((stem, ext)) = name.rsplit_once('.') else {
            continue;
        };
        if let Some(base) = stem.strip_suffix("_hazy") {
            let clean = dir.join(format!("{base}_clean.{ext}"));
            if clean.exists() {
                out.push(PairFiles {
                    name: name.clone(),
                    hazy: dir.join(&name),
                    clean,
                });
            }
        }
    }
    Ok(out)
}

pub fn list_pairs(dir: &Path) -> Result<Vec<PairFiles>> {
    let manifest = dir.join(MANIFEST);
    let pairs = if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        from_manifest(dir, &text)?
    } else {
        by_suffix(dir)?
    };
    if pairs.is_empty() {
        return Err(Error::Contract(format!("no image pairs found in {}", dir.display())));
    }
    Ok(pairs)
}

pub fn read_pair(p: &PairFiles) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let hazy = read_image(&p.hazy)?;
    let clean = read_image(&p.clean)?;
    if hazy.shape() != clean.shape() {
        return Err(Error::Dimension(format!(
            "{}: hazy {:?} vs clean {:?}",
            p.name,
            hazy.shape(),
            clean.shape()
        )));
    }
    Ok((hazy, clean))
}

/// Image files in a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "pgm" | "png"))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Contract(format!("no images in {}", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parsing_skips_comments() {
        let text = format!("{MANIFEST_HEADER}\n\na_hazy.ppm a_clean.ppm 0.9 1.0 3\n");
        let pairs = from_manifest(Path::new("/d"), &text).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].clean, Path::new("/d/a_clean.ppm"));
        assert!(from_manifest(Path::new("/d"), "lonely\n").is_err());
    }
}
