//! PSNR and SSIM, per frame and averaged per clip.
//!
//! Frames are `(h, w, 3)` row-major slices in `[0, 1]`. PSNR uses the mean
//! squared error over all three channels; SSIM works on luma
//! `Y = 0.299 R + 0.587 G + 0.114 B` with an 11×11 Gaussian window
//! (σ = 1.5), `C1 = 0.01²`, `C2 = 0.03²`, averaged over the window
//! positions that fit inside the frame.

use std::fmt;

use crate::data::ClipSample;
use crate::error::{Error, Result};
use crate::model::Generator;
use crate::tensor::{no_grad, Element};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(op, &[a.len()], &[b.len()]));
    }
    Ok(())
}

fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

/// `10·log10(max²/MSE)`; identical inputs give `+inf`.
pub fn psnr(pred: &[f64], target: &[f64], max_val: f64) -> Result<f64> {
    check_len("psnr", pred, target)?;
    if max_val.is_nan() || max_val <= 0.0 {
        return Err(Error::Domain {
            op: "psnr",
            detail: format!("max_val must be positive, got {max_val}"),
        });
    }
    let mse = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    Ok(psnr_from_mse(mse, max_val))
}

/// PSNR over the pixels whose mask value is 1; `mask` has one entry per
/// pixel, the images three.
pub fn masked_psnr(pred: &[f64], target: &[f64], mask: &[f64], max_val: f64) -> Result<f64> {
    check_len("masked_psnr", pred, target)?;
    if mask.len() * 3 != pred.len() {
        return Err(Error::shape("masked_psnr", &[pred.len()], &[mask.len(), 3]));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for ((p, t), &m) in pred.chunks(3).zip(target.chunks(3)).zip(mask) {
        if m == 1.0 {
            sum += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            count += 3;
        }
    }
    if count == 0 {
        return Err(Error::Domain {
            op: "masked_psnr",
            detail: "mask selects no pixels".into(),
        });
    }
    Ok(psnr_from_mse(sum / count as f64, max_val))
}

pub fn luma(rgb: &[f64]) -> Vec<f64> {
    rgb.chunks(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.map(|v| v / total)
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter(img: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * img[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `(h, w, 3)` frames.
pub fn ssim(pred: &[f64], target: &[f64], h: usize, w: usize) -> Result<f64> {
    check_len("ssim", pred, target)?;
    if pred.len() != h * w * 3 {
        return Err(Error::shape("ssim", &[pred.len()], &[h, w, 3]));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Domain {
            op: "ssim",
            detail: format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        });
    }
    let g = gaussian_window();
    let (x, y) = (luma(pred), luma(target));
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = filter(&x, h, w, &g);
    let my = filter(&y, h, w, &g);
    let sxx = filter(&sq(&x, &x), h, w, &g);
    let syy = filter(&sq(&y, &y), h, w, &g);
    let sxy = filter(&sq(&x, &y), h, w, &g);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// PSNR restricted to the hole, when the frame has one.
    pub masked_psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipMetrics {
    pub id: String,
    pub frames: Vec<FrameMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n.max(1) as f64
}

impl ClipMetrics {
    /// Scores `pred` against `target`, both `(t, h, w, 3)`, with hole masks
    /// `(t, h, w, 1)`.
    pub fn compute(id: &str, pred: &[f64], target: &[f64], masks: &[f64], h: usize, w: usize) -> Result<Self> {
        check_len("clip metrics", pred, target)?;
        let px = h * w;
        if !pred.len().is_multiple_of(px * 3) || masks.len() * 3 != pred.len() {
            return Err(Error::shape("clip metrics", &[pred.len()], &[masks.len(), h, w, 3]));
        }
        let frames = pred
            .chunks(px * 3)
            .zip(target.chunks(px * 3))
            .zip(masks.chunks(px))
            .enumerate()
            .map(|(i, ((p, t), m))| {
                let masked = if m.contains(&1.0) {
                    Some(masked_psnr(p, t, m, 1.0)?)
                } else {
                    None
                };
                Ok(FrameMetrics {
                    frame: i,
                    psnr: psnr(p, t, 1.0)?,
                    ssim: ssim(p, t, h, w)?,
                    masked_psnr: masked,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ClipMetrics {
            id: id.to_string(),
            frames,
        })
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.frames.iter().map(|f| f.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.frames.iter().map(|f| f.ssim))
    }

    pub fn mean_masked_psnr(&self) -> Option<f64> {
        let vals: Vec<f64> = self.frames.iter().filter_map(|f| f.masked_psnr).collect();
        (!vals.is_empty()).then(|| mean(vals.into_iter()))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
}

/// `inf` for the zero-error sentinel, four decimals otherwise.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for clip in &self.clips {
            for m in &clip.frames {
                writeln!(
                    f,
                    "clip={} frame={} psnr={} ssim={:.6}",
                    clip.id,
                    m.frame,
                    format_db(m.psnr),
                    m.ssim
                )?;
            }
            writeln!(
                f,
                "clip={} mean psnr={} ssim={:.6}",
                clip.id,
                format_db(clip.mean_psnr()),
                clip.mean_ssim()
            )?;
        }
        Ok(())
    }
}

/// Inpaints every clip (known pixels copied from the input) and scores it
/// against the ground truth.
pub fn evaluate<T: Element>(model: &Generator<T>, samples: &[ClipSample]) -> Result<MetricReport> {
    let mut clips = Vec::with_capacity(samples.len());
    for s in samples {
        let clip = s.clip.cast::<T>();
        let out = no_grad(|| model.inpaint(&clip)).map_err(|e| Error::dataset(s.id.as_str(), e))?;
        let (h, w) = s.clip.extents();
        clips.push(ClipMetrics::compute(
            &s.id,
            &out.to_f64_vec(),
            &s.clip.frames.to_vec(),
            &s.clip.masks.to_vec(),
            h,
            w,
        )?);
    }
    Ok(MetricReport { clips })
}
