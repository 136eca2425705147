use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::dataset::{fit_to_stride, load_dataset, CropInfo, NamedImage};
use super::figures::delta_visualization;
use super::report::{
    aggregate, CellFailure, CodecInfo, ExperimentSummary, IcTable, QualityReport, ReportRow, EVALUATION_NOTE,
    REPORT_SCHEMA_VERSION,
};
use crate::attack::{pgd_attack, AttackConfig, AttackMetrics, AttackResult, LossTerms};
use crate::codec::{Codec, CodecModel};
use crate::error::{ensure, Error, Result};
use crate::imaging::{load_png, save_png, ImageTensor};
use crate::seed::derive_seed;

const SIDECAR: &str = "cell.json";

/// Identifies the computation behind a cell; a sidecar is reused only when
/// its key matches exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub image: String,
    pub codec: String,
    pub codec_sha256: String,
    pub attack: AttackConfig,
}

/// Per-cell sidecar written next to the PNG artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: CellKey,
    pub crop: Option<CropInfo>,
    pub metrics: AttackMetrics,
    pub loss: LossTerms,
    pub best_step: usize,
    pub steps_executed: usize,
    /// Range of the exported perturbation on the 0–255 scale.
    pub delta_range_8bit: [f64; 2],
    pub trace: Vec<LossTerms>,
}

/// Writes the PNG artifacts of one attack into `dir` and returns the
/// perturbation range on the 0–255 scale.
pub fn write_attack_artifacts(dir: &Path, original: &ImageTensor, result: &AttackResult) -> Result<[f64; 2]> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ev = &result.evaluation;
    let original = original.quantize_8bit();
    save_png(&original, dir.join("original.png"))?;
    save_png(&ev.reconstructed_original, dir.join("reconstructed_original.png"))?;
    save_png(&ev.adversarial, dir.join("adversarial.png"))?;
    save_png(&ev.reconstructed_adversarial, dir.join("reconstructed_adversarial.png"))?;
    let (vis, lo, hi) = delta_visualization(&original, &ev.adversarial)?;
    save_png(&vis, dir.join("delta.png"))?;
    Ok([lo * 255.0, hi * 255.0])
}

/// Writes `value` as pretty JSON via a temporary file and rename.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Largest `|adversarial − original|` over the saved PNGs of a cell, on the
/// 0–255 scale. Fails when it exceeds `epsilon`.
pub fn check_feasibility(dir: &Path, epsilon: f64) -> Result<u8> {
    let a = load_png(dir.join("original.png"))?.to_u8();
    let b = load_png(dir.join("adversarial.png"))?.to_u8();
    ensure!(a.len() == b.len(), "artifact shapes differ in {}", dir.display());
    let worst = a.iter().zip(&b).map(|(&x, &y)| x.abs_diff(y)).max().unwrap_or(0);
    ensure!(
        f64::from(worst) <= epsilon + 1e-9,
        "saved adversarial example in {} moves a pixel by {worst} > ε = {epsilon}",
        dir.display()
    );
    Ok(worst)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct LoadedCodec {
    info: CodecInfo,
    model: CodecModel<f32>,
}

fn load_codecs(config: &ExperimentConfig) -> Result<Vec<LoadedCodec>> {
    config
        .codecs
        .iter()
        .map(|c| {
            let path = config.resolve(&c.checkpoint);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let model = CodecModel::<f32>::from_bytes(&bytes, &path)?;
            Ok(LoadedCodec {
                info: CodecInfo {
                    label: c.label.clone(),
                    checkpoint: c.checkpoint.display().to_string(),
                    sha256: sha256_hex(&bytes),
                    architecture: model.architecture().to_owned(),
                    lambda: model.lambda(),
                    stride: model.meta().stride(),
                },
                model,
            })
        })
        .collect()
}

struct Cell {
    image: usize,
    codec: usize,
    epsilon: f64,
    ic: bool,
    seed: u64,
    dir: PathBuf,
    relative: String,
}

fn cell_dir_name(label: &str, epsilon: f64, ic: bool, image: &str) -> String {
    format!(
        "cells/{label}/eps{epsilon}_{}/{image}",
        if ic { "ic" } else { "noic" }
    )
}

fn plan(config: &ExperimentConfig, images: &[NamedImage], out: &Path) -> Vec<Cell> {
    let per_image = config.codecs.len() * config.epsilons.len() * config.ic_variants.len();
    let mut cells = Vec::with_capacity(images.len() * per_image);
    for (ii, img) in images.iter().enumerate() {
        let mut index = 0u64;
        for (ci, codec) in config.codecs.iter().enumerate() {
            for &epsilon in &config.epsilons {
                for &ic in &config.ic_variants {
                    let relative = cell_dir_name(&codec.label, epsilon, ic, &img.name);
                    cells.push(Cell {
                        image: ii,
                        codec: ci,
                        epsilon,
                        ic,
                        seed: derive_seed(config.seed, &[ii as u64, index]),
                        dir: out.join(&relative),
                        relative,
                    });
                    index += 1;
                }
            }
        }
    }
    cells
}

fn read_record(dir: &Path) -> Option<CellRecord> {
    let text = std::fs::read_to_string(dir.join(SIDECAR)).ok()?;
    serde_json::from_str(&text).ok()
}

fn run_cell(cell: &Cell, key: CellKey, image: &ImageTensor, codec: &LoadedCodec) -> Result<()> {
    if read_record(&cell.dir).is_some_and(|r| r.key == key) {
        info!("{}: reusing sidecar", cell.relative);
        return Ok(());
    }
    let (x, crop) = fit_to_stride(image, codec.model.stride())?;
    let result = pgd_attack(&x, &codec.model, &key.attack)?;
    let delta_range_8bit = write_attack_artifacts(&cell.dir, &x, &result)?;
    let m = &result.evaluation.metrics;
    info!(
        "{}: ↓PSNR {:.2} dB, ↓MS-SSIM {:.4}, AE MS-SSIM {:.4}",
        cell.relative, m.degradation.psnr, m.degradation.ms_ssim, m.adversarial.ms_ssim
    );
    let record = CellRecord {
        key,
        crop,
        metrics: result.evaluation.metrics,
        loss: result.loss,
        best_step: result.best_step,
        steps_executed: result.steps_executed,
        delta_range_8bit,
        trace: result.trace,
    };
    write_json_atomic(&cell.dir.join(SIDECAR), &record)
}

fn collect_row(cell: &Cell, key: &CellKey) -> Result<ReportRow> {
    let record = read_record(&cell.dir)
        .filter(|r| &r.key == key)
        .ok_or_else(|| Error::invalid(format!("sidecar missing or stale in {}", cell.dir.display())))?;
    let linf_8bit = check_feasibility(&cell.dir, cell.epsilon)?;
    Ok(ReportRow {
        image: key.image.clone(),
        codec: key.codec.clone(),
        epsilon: cell.epsilon,
        ic: cell.ic,
        crop: record.crop,
        metrics: record.metrics,
        linf_8bit,
        final_loss: record.loss,
        best_step: record.best_step,
        steps_executed: record.steps_executed,
        artifacts: cell.relative.clone(),
    })
}

/// Runs every grid cell (skipping those with a matching sidecar) and writes
/// `report.{json,csv,md}` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<QualityReport> {
    config.validate()?;
    let out = config.output_dir();
    let mut images = load_dataset(config.resolve(&config.dataset), config.on_error)?;
    if let Some(n) = config.max_images {
        images.truncate(n);
    }
    let codecs = load_codecs(config)?;
    let cells = plan(config, &images, &out);
    let keys: Vec<CellKey> = cells
        .iter()
        .map(|c| {
            let codec = &codecs[c.codec];
            CellKey {
                image: images[c.image].name.clone(),
                codec: codec.info.label.clone(),
                codec_sha256: codec.info.sha256.clone(),
                attack: AttackConfig {
                    epsilon: c.epsilon,
                    ic_enabled: c.ic,
                    seed: c.seed,
                    ..config.attack.clone()
                },
            }
        })
        .collect();
    info!(
        "{} cells over {} images with {} worker(s)",
        cells.len(),
        images.len(),
        config.workers
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<()>> = pool.install(|| {
        cells
            .par_iter()
            .zip(keys.par_iter())
            .map(|(cell, key)| run_cell(cell, key.clone(), &images[cell.image].image, &codecs[cell.codec]))
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((cell, key), outcome) in cells.iter().zip(&keys).zip(outcomes) {
        match outcome.and_then(|()| collect_row(cell, key)) {
            Ok(row) => rows.push(row),
            Err(e) => {
                warn!("{} failed: {e}", cell.relative);
                failures.push(CellFailure {
                    image: key.image.clone(),
                    codec: key.codec.clone(),
                    epsilon: cell.epsilon,
                    ic: cell.ic,
                    reason: e.to_string(),
                });
            }
        }
    }

    let report = QualityReport {
        schema_version: REPORT_SCHEMA_VERSION,
        evaluation: EVALUATION_NOTE.to_owned(),
        experiment: ExperimentSummary {
            dataset: config.dataset.display().to_string(),
            images: images.iter().map(|i| i.name.clone()).collect(),
            codecs: codecs.into_iter().map(|c| c.info).collect(),
            epsilons: config.epsilons.clone(),
            ic_variants: config.ic_variants.clone(),
            seed: config.seed,
            attack_template: config.attack.clone(),
        },
        aggregates: aggregate(config, &rows),
        rows,
        failures,
    };
    report.write(&out)?;
    Ok(report)
}

/// Runs (or resumes) the experiment and tabulates MS-SSIM of the adversarial
/// examples with and without the imperceptibility term.
pub fn compare_ic(config: &ExperimentConfig) -> Result<IcTable> {
    for v in [true, false] {
        ensure!(
            config.ic_variants.contains(&v),
            "comparison needs both IC variants, config lists {:?}",
            config.ic_variants
        );
    }
    let report = run_experiment(config)?;
    let table = IcTable::from_report(&report)?;
    table.write(&config.output_dir())?;
    Ok(table)
}
