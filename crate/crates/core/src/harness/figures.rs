use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{s, Array3};

use super::font;
use super::report::QualityReport;
use crate::error::{ensure, Error, Result};
use crate::imaging::{load_png, save_png, ImageTensor};

/// Artifact files shown per row, left to right.
pub const COLUMNS: [&str; 5] = [
    "original.png",
    "reconstructed_original.png",
    "adversarial.png",
    "reconstructed_adversarial.png",
    "delta.png",
];

const GAP: usize = 4;
const CAPTION: usize = font::GLYPH_HEIGHT + 6;

/// `(δ − min) / (max − min)` over all pixels and channels of
/// `adversarial − original`, with a constant δ mapped to 0.5. Also returns
/// `(min, max)` in normalized units.
pub fn delta_visualization(original: &ImageTensor, adversarial: &ImageTensor) -> Result<(ImageTensor, f64, f64)> {
    ensure!(
        original.data().dim() == adversarial.data().dim(),
        "shape mismatch: {:?} vs {:?}",
        original.data().dim(),
        adversarial.data().dim()
    );
    let delta = adversarial.data() - original.data();
    let lo = delta.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let vis = if span > 0.0 {
        delta.mapv(|d| ((d - lo) / span).clamp(0.0, 1.0))
    } else {
        Array3::from_elem(delta.dim(), 0.5)
    };
    Ok((ImageTensor::new(vis)?, lo, hi))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FigureSummary {
    pub sheets: Vec<PathBuf>,
    /// Artifacts that could not be read; their rows are left out.
    pub missing: Vec<String>,
}

fn as_rgb(img: &ImageTensor) -> Array3<f64> {
    let d = img.data();
    if d.dim().2 == 3 {
        return d.clone();
    }
    let (h, w, _) = d.dim();
    Array3::from_shape_fn((h, w, 3), |(i, j, _)| d[[i, j, 0]])
}

struct SheetRow {
    tiles: Vec<Array3<f64>>,
    caption: String,
}

fn compose(rows: &[SheetRow]) -> Result<ImageTensor> {
    let tile_w = rows
        .iter()
        .flat_map(|r| r.tiles.iter().map(|t| t.dim().1))
        .max()
        .unwrap_or(0);
    let widest_caption = rows
        .iter()
        .map(|r| r.caption.chars().count() * font::ADVANCE)
        .max()
        .unwrap_or(0);
    let width = (COLUMNS.len() * (tile_w + GAP) + GAP).max(widest_caption + 2 * GAP);
    let heights: Vec<usize> = rows
        .iter()
        .map(|r| r.tiles.iter().map(|t| t.dim().0).max().unwrap_or(0))
        .collect();
    let height = GAP + heights.iter().map(|h| h + CAPTION + GAP).sum::<usize>();
    let mut canvas = Array3::from_elem((height, width, 3), 1.0);

    let mut top = GAP;
    for (row, h) in rows.iter().zip(heights) {
        for (k, tile) in row.tiles.iter().enumerate() {
            let (th, tw, _) = tile.dim();
            let left = GAP + k * (tile_w + GAP);
            canvas.slice_mut(s![top..top + th, left..left + tw, ..]).assign(tile);
        }
        let base = top + h + 3;
        font::render(&row.caption, |x, y| {
            let (cy, cx) = (base + y, GAP + x);
            if cy < height && cx < width {
                canvas.slice_mut(s![cy, cx, ..]).fill(0.0);
            }
        });
        top += h + CAPTION + GAP;
    }
    ImageTensor::new(canvas)
}

fn load_row(dir: &Path, name: &str, missing: &mut Vec<String>) -> Option<SheetRow> {
    let mut tiles = Vec::with_capacity(COLUMNS.len());
    let mut images = Vec::with_capacity(COLUMNS.len());
    for col in COLUMNS {
        let path = dir.join(col);
        match load_png(&path) {
            Ok(img) => {
                tiles.push(as_rgb(&img));
                images.push(img);
            }
            Err(e) => {
                warn!("{e}");
                missing.push(path.display().to_string());
                return None;
            }
        }
    }
    let caption = match delta_visualization(&images[0], &images[2]) {
        Ok((_, lo, hi)) => format!(
            "{name}  delta x255 in [{:.0}, {:.0}] mapped to [0, 1]",
            lo * 255.0,
            hi * 255.0
        ),
        Err(e) => {
            missing.push(format!("{}: {e}", dir.display()));
            return None;
        }
    };
    Some(SheetRow { tiles, caption })
}

/// Writes one contact sheet per (codec, ε, IC) group of `report` into `out`.
///
/// Rows are images; columns are original, its reconstruction, adversarial
/// example, its reconstruction and the rescaled perturbation. Artifact paths
/// are resolved against `artifacts_root`, the experiment output directory.
pub fn emit_figures(report: &QualityReport, artifacts_root: &Path, out: &Path) -> Result<FigureSummary> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut summary = FigureSummary::default();
    for agg in &report.aggregates {
        let mut rows = Vec::new();
        for r in report
            .rows
            .iter()
            .filter(|r| r.codec == agg.codec && r.epsilon == agg.epsilon && r.ic == agg.ic)
        {
            if let Some(row) = load_row(&artifacts_root.join(&r.artifacts), &r.image, &mut summary.missing) {
                rows.push(row);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let sheet = compose(&rows)?;
        let path = out.join(format!(
            "sheet_{}_eps{}_{}.png",
            agg.codec,
            agg.epsilon,
            if agg.ic { "ic" } else { "noic" }
        ));
        save_png(&sheet, &path)?;
        summary.sheets.push(path);
    }
    Ok(summary)
}
