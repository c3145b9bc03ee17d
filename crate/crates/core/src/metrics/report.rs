//! Per-pair scores and their aggregation into a results table.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{stable_mean, FidResult, MetricsError, MetricsResult};
use crate::generation::Target;

/// Scores for one generated frame against its ground truth. Similarities and
/// SSIM are ×100, D-CLIP is a percentage, PSNR is in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub clip: f64,
    pub m_clip: f64,
    pub d_clip: f64,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub psnr: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub clip: f64,
    pub m_clip: f64,
    pub d_clip: f64,
    pub fid: f64,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub psnr: f64,
    pub ssim: f64,
}

/// The same aggregates on their natural scales: cosines, fractions and SSIM
/// in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAggregates {
    pub clip_cosine: f64,
    pub m_clip_cosine: f64,
    pub d_clip_fraction: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub target: Target,
    pub method: String,
    pub metrics: Aggregates,
    pub n_pairs: usize,
    pub raw: RawAggregates,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Non-finite values are written as the strings `"inf"`, `"-inf"` or `"nan"`.
fn ser_inf<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn de_inf<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
        },
    }
}

/// Averages every pair metric. PSNR of identical pairs is infinite and is left
/// out of the mean (flagged); if every pair is identical the mean is infinite.
pub fn report(
    dataset: &str,
    target: Target,
    method: &str,
    pairs: &[PairScore],
    fid: FidResult,
) -> MetricsResult<MetricReport> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mean = |f: fn(&PairScore) -> f64| {
        stable_mean(&pairs.iter().map(f).collect::<Vec<_>>()).unwrap_or(f64::NAN)
    };
    let mut flags = Vec::new();
    let finite_psnr: Vec<f64> = pairs
        .iter()
        .map(|p| p.psnr)
        .filter(|v| v.is_finite())
        .collect();
    let psnr = match stable_mean(&finite_psnr) {
        Some(m) => m,
        None => f64::INFINITY,
    };
    if finite_psnr.len() < pairs.len() {
        flags.push(format!(
            "psnr_identical_pairs_excluded:{}",
            pairs.len() - finite_psnr.len()
        ));
    }
    if fid.regularized {
        flags.push("fid_covariance_regularized".to_string());
    }
    let fallbacks = pairs
        .iter()
        .filter(|p| p.flags.iter().any(|f| f == "m_clip_empty_mask"))
        .count();
    if fallbacks > 0 {
        flags.push(format!("m_clip_empty_mask_fallbacks:{fallbacks}"));
    }
    let metrics = Aggregates {
        clip: mean(|p| p.clip),
        m_clip: mean(|p| p.m_clip),
        d_clip: mean(|p| p.d_clip),
        fid: fid.value,
        psnr,
        ssim: mean(|p| p.ssim),
    };
    let raw = RawAggregates {
        clip_cosine: metrics.clip / 100.0,
        m_clip_cosine: metrics.m_clip / 100.0,
        d_clip_fraction: metrics.d_clip / 100.0,
        ssim: metrics.ssim / 100.0,
    };
    Ok(MetricReport {
        dataset: dataset.to_string(),
        target,
        method: method.to_string(),
        metrics,
        n_pairs: pairs.len(),
        raw,
        flags,
    })
}

/// Plain-text results table, one row per report.
pub fn render_table(reports: &[MetricReport]) -> String {
    let header = [
        "Dataset",
        "Target",
        "Method",
        "CLIP ↑",
        "M-CLIP ↑",
        "D-CLIP ↓",
        "FID ↓",
        "PSNR ↑",
        "SSIM ↑",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.dataset.clone(),
                r.target.to_string(),
                r.method.clone(),
                format!("{:.2}", m.clip),
                format!("{:.2}", m.m_clip),
                format!("{:.2}", m.d_clip),
                format!("{:.2}", m.fid),
                format!("{:.2}", m.psnr),
                format!("{:.2}", m.ssim),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.iter().map(|s| s.to_string()).collect());
    out.push_str(&format!(
        "|{}|\n",
        widths
            .iter()
            .map(|w| "-".repeat(w + 2))
            .collect::<Vec<_>>()
            .join("|")
    ));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}
