use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::dataset::CropInfo;
use crate::attack::{AttackConfig, AttackMetrics, LossTerms};
use crate::error::{Error, Result};
use crate::metrics::{Degradation, QualityScore};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// How report metrics were obtained.
pub const EVALUATION_NOTE: &str = "adversarial examples and reconstructions are clipped and rounded to 8 bits; \
reconstructions use hard rounding of the latent; MS-SSIM uses 5 scales when the shorter side exceeds 160";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecInfo {
    pub label: String,
    pub checkpoint: String,
    /// SHA-256 of the checkpoint file.
    pub sha256: String,
    pub architecture: String,
    pub lambda: f64,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub dataset: String,
    pub images: Vec<String>,
    pub codecs: Vec<CodecInfo>,
    pub epsilons: Vec<f64>,
    pub ic_variants: Vec<bool>,
    pub seed: u64,
    pub attack_template: AttackConfig,
}

/// One grid cell that finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image: String,
    pub codec: String,
    pub epsilon: f64,
    pub ic: bool,
    pub crop: Option<CropInfo>,
    pub metrics: AttackMetrics,
    /// Largest `|AE − original|` on the 0–255 scale, measured on the saved PNGs.
    pub linf_8bit: u8,
    pub final_loss: LossTerms,
    pub best_step: usize,
    pub steps_executed: usize,
    /// Artifact directory relative to the experiment output.
    pub artifacts: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub image: String,
    pub codec: String,
    pub epsilon: f64,
    pub ic: bool,
    pub reason: String,
}

/// Means over the successful rows of one (codec, ε, IC) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub codec: String,
    pub epsilon: f64,
    pub ic: bool,
    pub count: usize,
    pub reconstructed_original: QualityScore,
    pub adversarial: QualityScore,
    pub reconstructed_adversarial: QualityScore,
    pub degradation: Degradation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub schema_version: u32,
    pub evaluation: String,
    pub experiment: ExperimentSummary,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<CellFailure>,
    pub aggregates: Vec<Aggregate>,
}

fn mean_score(scores: &[QualityScore]) -> QualityScore {
    let n = scores.len() as f64;
    QualityScore {
        psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
        ms_ssim: scores.iter().map(|s| s.ms_ssim).sum::<f64>() / n,
    }
}

/// Group means in grid order (codec, ε, IC). Groups without rows are omitted.
pub fn aggregate(config: &ExperimentConfig, rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for codec in &config.codecs {
        for &epsilon in &config.epsilons {
            for &ic in &config.ic_variants {
                let group: Vec<&AttackMetrics> = rows
                    .iter()
                    .filter(|r| r.codec == codec.label && r.epsilon == epsilon && r.ic == ic)
                    .map(|r| &r.metrics)
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let pick = |f: fn(&AttackMetrics) -> QualityScore| {
                    mean_score(&group.iter().map(|m| f(m)).collect::<Vec<_>>())
                };
                let deg = mean_score(
                    &group
                        .iter()
                        .map(|m| QualityScore {
                            psnr: m.degradation.psnr,
                            ms_ssim: m.degradation.ms_ssim,
                        })
                        .collect::<Vec<_>>(),
                );
                out.push(Aggregate {
                    codec: codec.label.clone(),
                    epsilon,
                    ic,
                    count: group.len(),
                    reconstructed_original: pick(|m| m.reconstructed_original),
                    adversarial: pick(|m| m.adversarial),
                    reconstructed_adversarial: pick(|m| m.reconstructed_adversarial),
                    degradation: Degradation {
                        psnr: deg.psnr,
                        ms_ssim: deg.ms_ssim,
                    },
                });
            }
        }
    }
    out
}

fn ic_label(ic: bool) -> &'static str {
    if ic {
        "with IC"
    } else {
        "without IC"
    }
}

impl QualityReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: QualityReport = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema version {} not supported",
                report.schema_version
            )));
        }
        Ok(report)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// One line per row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "image,codec,epsilon,ic,rec_orig_psnr,rec_orig_msssim,ae_psnr,ae_msssim,\
rec_ae_psnr,rec_ae_msssim,delta_psnr,delta_msssim,linf_8bit,steps\n",
        );
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                s,
                "{},{},{},{},{:.4},{:.6},{:.4},{:.6},{:.4},{:.6},{:.4},{:.6},{},{}",
                r.image,
                r.codec,
                r.epsilon,
                r.ic,
                m.reconstructed_original.psnr,
                m.reconstructed_original.ms_ssim,
                m.adversarial.psnr,
                m.adversarial.ms_ssim,
                m.reconstructed_adversarial.psnr,
                m.reconstructed_adversarial.ms_ssim,
                m.degradation.psnr,
                m.degradation.ms_ssim,
                r.linf_8bit,
                r.steps_executed
            );
        }
        s
    }

    /// Group means laid out like a paper results table.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "| Codec | ε | IC | n | Rec. original PSNR | Rec. original MS-SSIM | AE PSNR | AE MS-SSIM \
| Rec. AE PSNR | Rec. AE MS-SSIM | ↓PSNR | ↓MS-SSIM |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|---|");
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {:.2} | {:.4} | {:.2} | {:.4} | {:.2} | {:.4} | {:.2} | {:.4} |",
                a.codec,
                a.epsilon,
                ic_label(a.ic),
                a.count,
                a.reconstructed_original.psnr,
                a.reconstructed_original.ms_ssim,
                a.adversarial.psnr,
                a.adversarial.ms_ssim,
                a.reconstructed_adversarial.psnr,
                a.reconstructed_adversarial.ms_ssim,
                a.degradation.psnr,
                a.degradation.ms_ssim
            );
        }
        if !self.failures.is_empty() {
            let _ = writeln!(s, "\n{} cell(s) failed:\n", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(
                    s,
                    "- {} / {} / ε={} / {}: {}",
                    f.image,
                    f.codec,
                    f.epsilon,
                    ic_label(f.ic),
                    f.reason
                );
            }
        }
        let _ = writeln!(s, "\n{EVALUATION_NOTE}.");
        s
    }

    /// Writes `report.json`, `report.csv` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("report.json", self.to_json()?),
            ("report.csv", self.to_csv()),
            ("report.md", self.to_markdown()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// One row of the imperceptibility comparison: MS-SSIM of the adversarial
/// example against the original, per codec and averaged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcRow {
    pub ic: bool,
    pub epsilon: f64,
    /// `(codec label, mean MS-SSIM)` in config order.
    pub per_codec: Vec<(String, f64)>,
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcTable {
    pub schema_version: u32,
    pub rows: Vec<IcRow>,
}

impl IcTable {
    /// Builds the table from a report whose grid holds both IC variants.
    pub fn from_report(report: &QualityReport) -> Result<Self> {
        let exp = &report.experiment;
        for v in [true, false] {
            if !exp.ic_variants.contains(&v) {
                return Err(Error::invalid(format!(
                    "comparison needs the {} variant",
                    ic_label(v)
                )));
            }
        }
        let mut rows = Vec::new();
        for ic in [true, false] {
            for &epsilon in &exp.epsilons {
                let mut per_codec = Vec::new();
                for codec in &exp.codecs {
                    if let Some(a) = report
                        .aggregates
                        .iter()
                        .find(|a| a.codec == codec.label && a.epsilon == epsilon && a.ic == ic)
                    {
                        per_codec.push((codec.label.clone(), a.adversarial.ms_ssim));
                    }
                }
                if per_codec.is_empty() {
                    continue;
                }
                let average = per_codec.iter().map(|p| p.1).sum::<f64>() / per_codec.len() as f64;
                rows.push(IcRow {
                    ic,
                    epsilon,
                    per_codec,
                    average,
                });
            }
        }
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            rows,
        })
    }

    /// Average for a given variant and budget.
    pub fn average(&self, ic: bool, epsilon: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.ic == ic && r.epsilon == epsilon)
            .map(|r| r.average)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let codecs: Vec<&str> = self
            .rows
            .first()
            .map(|r| r.per_codec.iter().map(|p| p.0.as_str()).collect())
            .unwrap_or_default();
        let _ = write!(s, "| Variant | ε |");
        for c in &codecs {
            let _ = write!(s, " {c} |");
        }
        let _ = writeln!(s, " Average |");
        let _ = writeln!(s, "|---|---|{}---|", "---|".repeat(codecs.len()));
        for r in &self.rows {
            let _ = write!(s, "| {} | {} |", ic_label(r.ic), r.epsilon);
            for (_, v) in &r.per_codec {
                let _ = write!(s, " {v:.4} |");
            }
            let _ = writeln!(s, " {:.4} |", r.average);
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("ic_comparison.json");
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        std::fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
        let md = dir.join("ic_comparison.md");
        std::fs::write(&md, self.to_markdown()).map_err(|e| Error::io(&md, e))
    }
}
