use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imaging::{load_png, ImageTensor};

/// What to do with a PNG that fails to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnError {
    #[default]
    Abort,
    /// Log and skip the file.
    Continue,
}

#[derive(Debug, Clone)]
pub struct NamedImage {
    /// File stem, used to name artifacts.
    pub name: String,
    pub path: PathBuf,
    pub image: ImageTensor,
}

/// Crop applied to make an image fit the codec stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropInfo {
    pub original: (usize, usize),
    pub cropped: (usize, usize),
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// PNG files of `dir` in file-name order.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_png(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Loads every PNG in `dir`, sorted by file name.
pub fn load_dataset(dir: impl AsRef<Path>, on_error: OnError) -> Result<Vec<NamedImage>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for path in list_pngs(dir)? {
        match load_png(&path) {
            Ok(image) => out.push(NamedImage {
                name: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                path,
                image,
            }),
            Err(e) if on_error == OnError::Continue => warn!("skipping {}: {e}", path.display()),
            Err(e) => return Err(e),
        }
    }
    ensure!(!out.is_empty(), "no loadable PNG images in {}", dir.display());
    Ok(out)
}

/// Center-crops `img` to the largest size divisible by `stride`.
pub fn fit_to_stride(img: &ImageTensor, stride: usize) -> Result<(ImageTensor, Option<CropInfo>)> {
    ensure!(stride > 0, "stride must be positive");
    let (h, w) = (img.height(), img.width());
    let (ch, cw) = (h / stride * stride, w / stride * stride);
    if (ch, cw) == (h, w) {
        return Ok((img.clone(), None));
    }
    let cropped = img.center_crop(ch, cw)?;
    Ok((
        cropped,
        Some(CropInfo {
            original: (h, w),
            cropped: (ch, cw),
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::save_png;
    use ndarray::Array3;

    fn write(dir: &Path, name: &str) {
        let img = ImageTensor::new(Array3::from_elem((32, 40, 3), 0.5)).unwrap();
        save_png(&img, dir.join(name)).unwrap();
    }

    #[test]
    fn sorted_and_filtered() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["c.png", "a.png", "b.PNG"] {
            write(dir.path(), n);
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let set = load_dataset(dir.path(), OnError::Abort).unwrap();
        let names: Vec<_> = set.iter().map(|n| n.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
    }

    #[test]
    fn empty_and_broken() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path(), OnError::Abort).is_err());
        write(dir.path(), "good.png");
        std::fs::write(dir.path().join("bad.png"), b"nope").unwrap();
        assert!(load_dataset(dir.path(), OnError::Abort).is_err());
        assert_eq!(load_dataset(dir.path(), OnError::Continue).unwrap().len(), 1);
        assert!(load_dataset(dir.path().join("missing"), OnError::Continue).is_err());
    }

    #[test]
    fn stride_crop() {
        let img = ImageTensor::new(Array3::from_elem((50, 64, 1), 0.1)).unwrap();
        let (c, info) = fit_to_stride(&img, 16).unwrap();
        assert_eq!((c.height(), c.width()), (48, 64));
        assert_eq!(info.unwrap().original, (50, 64));
        let (_, none) = fit_to_stride(&c, 16).unwrap();
        assert!(none.is_none());
    }
}
