//! Directory-level evaluation and report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{perceptual_metric, psnr, ssim};
use crate::error::{Error, Result};
use crate::nn::extractor::FeatureExtractor;
use crate::uv::io::load_texture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub mean: MetricMeans,
    /// Files present in only one of the two directories.
    pub unmatched: Vec<String>,
    pub config: serde_json::Value,
}

impl MetricReport {
    pub fn from_rows(
        rows: Vec<MetricRow>,
        unmatched: Vec<String>,
        config: serde_json::Value,
    ) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = MetricMeans {
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            perceptual: rows.iter().map(|r| r.perceptual).sum::<f64>() / n,
        };
        Self {
            rows,
            mean,
            unmatched,
            config,
        }
    }

    /// Comma-separated table: a header, one row per sample, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,psnr_db,ssim,perceptual\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                r.id, r.psnr, r.ssim, r.perceptual
            ));
        }
        s.push_str(&format!(
            "mean,{:.6},{:.6},{:.6}\n",
            self.mean.psnr, self.mean.ssim, self.mean.perceptual
        ));
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("metrics.csv");
        let json = dir.join("metrics.json");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        std::fs::write(&json, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| Error::io(&json, e))?;
        Ok((csv, json))
    }
}

fn png_map(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), p.clone());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Fail when a file has no counterpart.
    pub strict: bool,
}

/// Compares every PNG of `pred_dir` with the same-named file in `gt_dir`.
/// Unmatched names are listed and skipped; in strict mode they are an error.
pub fn evaluate(
    pred_dir: &Path,
    gt_dir: &Path,
    cfg: &EvalConfig,
    extractor: &dyn FeatureExtractor,
) -> Result<MetricReport> {
    let pred = png_map(pred_dir)?;
    let gt = png_map(gt_dir)?;
    let unmatched: Vec<String> = pred
        .keys()
        .filter(|k| !gt.contains_key(*k))
        .map(|k| format!("pred/{k}"))
        .chain(
            gt.keys()
                .filter(|k| !pred.contains_key(*k))
                .map(|k| format!("gt/{k}")),
        )
        .collect();
    if cfg.strict && !unmatched.is_empty() {
        return Err(Error::Data(format!(
            "unmatched files: {}",
            unmatched.join(", ")
        )));
    }
    let mut rows = Vec::new();
    for (name, p) in &pred {
        let Some(g) = gt.get(name) else { continue };
        let a = load_texture(p)?;
        let b = load_texture(g)?;
        rows.push(MetricRow {
            id: name.trim_end_matches(".png").to_string(),
            psnr: psnr(&a, &b)?,
            ssim: ssim(&a, &b)?,
            perceptual: perceptual_metric(&a, &b, extractor)?,
        });
    }
    let config = serde_json::json!({
        "pred": pred_dir.display().to_string(),
        "gt": gt_dir.display().to_string(),
        "strict": cfg.strict,
    });
    Ok(MetricReport::from_rows(rows, unmatched, config))
}
