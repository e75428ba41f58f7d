use std::path::{Path, PathBuf};

use fogadapt::formats;
use fogadapt::synth::{self, MANIFEST};
use fogadapt::tensor::{LabelMap, ProbVolume, RgbImage};
use fogadapt::{Error, Result};
use rayon::prelude::*;

use crate::commands::CliError;

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Image paths of a dataset directory (manifest order) or of a plain
/// directory of PNG files (name order).
pub fn image_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(MANIFEST).is_file() {
        let m = synth::read_manifest(dir)?;
        return Ok(m.images.iter().map(|p| dir.join(p)).collect());
    }
    formats::list_files(dir, "png")
}

pub fn load_images(dir: &Path) -> Result<(Vec<String>, Vec<RgbImage>)> {
    let paths = image_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!("no images in {}", dir.display())));
    }
    let images = paths.par_iter().map(|p| formats::read_rgb_png(p)).collect::<Result<Vec<_>>>()?;
    Ok((paths.iter().map(|p| stem(p)).collect(), images))
}

pub struct LabeledSet {
    pub images: Vec<RgbImage>,
    pub labels: Vec<LabelMap>,
}

/// A labeled dataset; with `translated`, images are read from that directory
/// under the same file names while labels stay with the dataset.
pub fn load_labeled(dir: &Path, translated: Option<&Path>) -> Result<LabeledSet> {
    let ds = synth::load_dataset(dir)?;
    if ds.is_empty() {
        return Err(Error::EmptyInput(format!("dataset {} is empty", dir.display())));
    }
    let names: Vec<String> = ds.manifest.images.iter().map(|p| stem(Path::new(p))).collect();
    let images = match translated {
        None => ds.images,
        Some(tdir) => {
            let imgs = ds
                .manifest
                .images
                .par_iter()
                .map(|p| {
                    let file = Path::new(p).file_name().unwrap_or_default();
                    formats::read_rgb_png(&tdir.join(file))
                })
                .collect::<Result<Vec<_>>>()?;
            for (i, (img, lab)) in imgs.iter().zip(&ds.labels).enumerate() {
                if (img.height(), img.width()) != (lab.height(), lab.width()) {
                    return Err(Error::Format(format!(
                        "translated image {} does not match its label size",
                        names[i]
                    )));
                }
            }
            imgs
        }
    };
    Ok(LabeledSet {
        images,
        labels: ds.labels,
    })
}

pub fn load_probs(dir: &Path) -> Result<(Vec<String>, Vec<ProbVolume>)> {
    let paths = formats::list_files(dir, "fprb")?;
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!("no .fprb files in {}", dir.display())));
    }
    let probs = paths.par_iter().map(|p| formats::read_fprb(p)).collect::<Result<Vec<_>>>()?;
    Ok((paths.iter().map(|p| stem(p)).collect(), probs))
}

pub fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{what}: cannot parse {s:?} as a number")))
        })
        .collect()
}

pub fn parse_indices(text: &str) -> Result<Vec<usize>, CliError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("cannot parse class index {s:?}")))
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    formats::write_bytes(path, text.as_bytes())
}
