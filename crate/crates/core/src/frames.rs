//! Loading collapsed frames named by a manifest into classifier inputs.
//!
//! A manifest entry `cat/x.bin` maps to `<frames>/cat/x.bmp`, falling back
//! to `<frames>/cat/x.pgm`. Colour frames are reduced to gray with the
//! 0.21/0.72/0.07 weighting; pixel values are scaled to `[0, 1]`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::collapse::{rgb_to_gray, PixelGrid8};
use crate::dataset::{DatasetManifest, Split};
use crate::imageio::{self, ImageError};
use crate::probe::{LabeledSet, Matrix};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("no frame for '{0}' (looked for .bmp and .pgm)")]
    Missing(String),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("decoding {path}: {source}")]
    Image { path: PathBuf, source: ImageError },
    #[error("frame {path} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    SizeMismatch {
        path: PathBuf,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("category '{0}' is not in the label set")]
    UnknownCategory(String),
}

/// Candidate image paths for a manifest entry.
pub fn frame_paths(frames_root: &Path, entry_path: &str) -> [PathBuf; 2] {
    let base = frames_root.join(entry_path);
    [base.with_extension("bmp"), base.with_extension("pgm")]
}

fn to_gray(grid: PixelGrid8) -> PixelGrid8 {
    if grid.channels == 3 {
        rgb_to_gray(&grid).expect("3-channel grid")
    } else {
        grid
    }
}

pub fn load_frame(frames_root: &Path, entry_path: &str) -> Result<(PathBuf, PixelGrid8), FrameError> {
    let path = frame_paths(frames_root, entry_path)
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| FrameError::Missing(entry_path.to_owned()))?;
    let bytes = fs::read(&path).map_err(|source| FrameError::Io {
        path: path.clone(),
        source,
    })?;
    let grid = imageio::read_image(&bytes).map_err(|source| FrameError::Image {
        path: path.clone(),
        source,
    })?;
    Ok((path, to_gray(grid)))
}

/// Builds a labelled set from the manifest entries in `split` (all entries
/// when `None`). Labels index into `categories`, which is normally
/// [`DatasetManifest::categories`]. All frames must share one size.
pub fn load_labeled(
    manifest: &DatasetManifest,
    frames_root: &Path,
    split: Option<Split>,
    categories: &[String],
) -> Result<(LabeledSet, Option<(u32, u32)>), FrameError> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dims: Option<(u32, u32)> = None;
    for e in manifest
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
    {
        let label = categories
            .iter()
            .position(|c| *c == e.category)
            .ok_or_else(|| FrameError::UnknownCategory(e.category.clone()))?;
        let (path, grid) = load_frame(frames_root, &e.path)?;
        match dims {
            None => dims = Some((grid.width, grid.height)),
            Some((w, h)) if (w, h) != (grid.width, grid.height) => {
                return Err(FrameError::SizeMismatch {
                    path,
                    got_w: grid.width,
                    got_h: grid.height,
                    want_w: w,
                    want_h: h,
                })
            }
            Some(_) => {}
        }
        data.extend(grid.data.iter().map(|&v| f64::from(v) / 255.0));
        labels.push(label);
    }
    let cols = dims.map_or(0, |(w, h)| w as usize * h as usize);
    let features = Matrix::from_vec(labels.len(), cols, data);
    let set = LabeledSet::new(features, labels).expect("one label per row");
    Ok((set, dims))
}
