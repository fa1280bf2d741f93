//! Test-set metrics, optionally split by motion magnitude.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{collate, Dataset};
use crate::error::{invalid, Result};
use crate::losses::{psnr, ssim};
use crate::model::Model;
use crate::motion_model::FrameTensor;
use crate::nn::ParamStore;

/// One line of a metric report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub name: String,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub strata: Vec<Stratum>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>, stratify: bool) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("no samples to evaluate"));
        }
        let (mean_psnr, mean_ssim) = means(rows.iter());
        let strata = if stratify { stratify_rows(&rows)? } else { Vec::new() };
        Ok(EvalReport {
            rows,
            mean_psnr,
            mean_ssim,
            strata,
        })
    }

    /// One JSON object per sample (`id`, `psnr`, `ssim`).
    pub fn write_lines(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.rows {
            let line = serde_json::json!({ "id": r.id, "psnr": r.psnr, "ssim": r.ssim });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn means<'a>(rows: impl Iterator<Item = &'a EvalRow>) -> (f64, f64) {
    let (mut p, mut s, mut n) = (0.0, 0.0, 0usize);
    for r in rows {
        p += r.psnr;
        s += r.ssim;
        n += 1;
    }
    (p / n as f64, s / n as f64)
}

pub const STRATA: [&str; 3] = ["slow", "medium", "fast"];

/// Terciles of motion magnitude; ties are broken by id so the split does
/// not depend on row order.
fn stratify_rows(rows: &[EvalRow]) -> Result<Vec<Stratum>> {
    let mut keyed: Vec<(f64, &EvalRow)> = rows
        .iter()
        .map(|r| {
            r.magnitude
                .map(|m| (m, r))
                .ok_or_else(|| invalid(format!("sample {} has no motion magnitude", r.id)))
        })
        .collect::<Result<_>>()?;
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let n = keyed.len();
    Ok(STRATA
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let part = &keyed[k * n / 3..(k + 1) * n / 3];
            let (psnr, ssim) = if part.is_empty() { (f64::NAN, f64::NAN) } else { means(part.iter().map(|x| x.1)) };
            Stratum {
                name: name.to_string(),
                count: part.len(),
                psnr,
                ssim,
            }
        })
        .collect())
}

/// Mean absolute sampling offset of the model's reference motions, weighted
/// by kernel weight; the motion estimate used when no ground truth exists.
fn estimated_magnitude(model: &Model, params: &ParamStore<f32>, inputs: &[FrameTensor<f32>; 4]) -> Result<f64> {
    let mut g = jnmr_tensor::Graph::new();
    let p = params.bind(&mut g, false);
    let frames = inputs.clone().map(|f| g.constant(f.to_batch()));
    let out = model.forward(&mut g, &p, frames, Default::default())?;
    let mut total = 0.0;
    let mut count = 0.0;
    for r in [1, 2] {
        let m = &out.motions.motions[r];
        let (w, a, b) = (g.value(m.weights).data(), g.value(m.alpha).data(), g.value(m.beta).data());
        for i in 0..w.len() {
            total += (w[i] * (a[i] * a[i] + b[i] * b[i]).sqrt()) as f64;
        }
        count += (w.len() / (model.kernel_size() * model.kernel_size())) as f64;
    }
    Ok(total / count)
}

pub fn evaluate(model: &Model, params: &ParamStore<f32>, data: &Dataset, stratify: bool, batch_size: usize) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(batch_size.max(1)) {
        let batch = collate(chunk)?;
        let out = model.infer(params, &batch.inputs)?;
        for (i, s) in chunk.iter().enumerate() {
            let pred = FrameTensor::from_batch(&out, i)?;
            let magnitude = match (stratify, s.magnitude) {
                (_, Some(m)) => Some(m),
                (true, None) => Some(estimated_magnitude(model, params, &s.inputs)?),
                (false, None) => None,
            };
            rows.push(EvalRow {
                id: s.id.clone(),
                psnr: psnr(&pred, &s.target)?,
                ssim: ssim(&pred, &s.target)?,
                magnitude,
            });
        }
    }
    EvalReport::from_rows(rows, stratify)
}

/// Scores frames against references directly, without a model.
pub fn score_frames(pairs: &[(String, FrameTensor<f32>, FrameTensor<f32>)]) -> Result<EvalReport> {
    let rows = pairs
        .iter()
        .map(|(id, pred, target)| {
            Ok(EvalRow {
                id: id.clone(),
                psnr: psnr(pred, target)?,
                ssim: ssim(pred, target)?,
                magnitude: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_rows(rows, false)
}
