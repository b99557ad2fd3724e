//! Metric report text format.
//!
//! ```text
//! # orbit-splat metric report
//! # clip_similarity=out_of_scope
//! view=front azimuth_deg=0 psnr=31.2 ssim=0.97 lpips=0.04
//! ...
//! view=mean psnr=30.8 ssim=0.96 lpips=0.05
//! ```
//!
//! Lines starting with `#` are comments. Each row is whitespace-separated
//! `key=value` pairs; `lpips` is present only when an extractor was
//! configured, `azimuth_deg` only on per-view rows. Numbers are written in
//! shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub view: String,
    pub azimuth_deg: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

impl MetricRow {
    /// Arithmetic mean of `rows`, labelled `mean`. LPIPS is averaged only if
    /// every row has it.
    pub fn mean(rows: &[MetricRow]) -> MetricRow {
        let n = rows.len().max(1) as f64;
        let lpips =
            if !rows.is_empty() && rows.iter().all(|r| r.lpips.is_some()) { Some(rows.iter().map(|r| r.lpips.unwrap_or(0.0)).sum::<f64>() / n) } else { None };
        MetricRow {
            view: "mean".into(),
            azimuth_deg: None,
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            lpips,
        }
    }
}

/// Renders the per-view rows followed by their mean.
pub fn format_metric_report(rows: &[MetricRow]) -> String {
    let mut s = String::from("# orbit-splat metric report\n");
    s.push_str("# clip_similarity=out_of_scope (needs a pretrained vision-language model)\n");
    let mean = MetricRow::mean(rows);
    for r in rows.iter().chain(std::iter::once(&mean)) {
        let _ = write!(s, "view={}", r.view);
        if let Some(a) = r.azimuth_deg {
            let _ = write!(s, " azimuth_deg={a}");
        }
        let _ = write!(s, " psnr={} ssim={}", r.psnr, r.ssim);
        if let Some(l) = r.lpips {
            let _ = write!(s, " lpips={l}");
        }
        s.push('\n');
    }
    s
}

pub fn write_metric_report(path: &Path, rows: &[MetricRow]) -> Result<()> {
    Ok(std::fs::write(path, format_metric_report(rows))?)
}

/// Parses every row, including the trailing mean row.
pub fn parse_metric_report(text: &str) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| Error::Parse { path: "metric report".into(), line: n + 1, message: m };
        let mut row = MetricRow { view: String::new(), azimuth_deg: None, psnr: f64::NAN, ssim: f64::NAN, lpips: None };
        for pair in line.split_whitespace() {
            let (k, v) = pair.split_once('=').ok_or_else(|| bad(format!("expected key=value, got `{pair}`")))?;
            let num = || v.parse::<f64>().map_err(|_| bad(format!("`{k}` is not a number: `{v}`")));
            match k {
                "view" => row.view = v.to_string(),
                "azimuth_deg" => row.azimuth_deg = Some(num()?),
                "psnr" => row.psnr = num()?,
                "ssim" => row.ssim = num()?,
                "lpips" => row.lpips = Some(num()?),
                _ => return Err(bad(format!("unknown key `{k}`"))),
            }
        }
        if row.view.is_empty() || row.psnr.is_nan() || row.ssim.is_nan() {
            return Err(bad("row needs view, psnr and ssim".into()));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(view: &str, az: f64, psnr: f64) -> MetricRow {
        MetricRow { view: view.into(), azimuth_deg: Some(az), psnr, ssim: 0.9, lpips: Some(0.1) }
    }

    #[test]
    fn round_trip_with_mean() {
        let rows = vec![row("front", 0.0, 30.0), row("back", 180.0, 20.0), row("right", 90.0, 25.5), row("left", 270.0, 1.0 / 3.0)];
        let text = format_metric_report(&rows);
        assert!(text.contains("clip_similarity=out_of_scope"));
        let parsed = parse_metric_report(&text).unwrap();
        assert_eq!(parsed.len(), 5);
        assert_eq!(&parsed[..4], &rows[..]);
        assert_eq!(parsed[4].view, "mean");
        assert!((parsed[4].psnr - (30.0 + 20.0 + 25.5 + 1.0 / 3.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn lpips_column_is_optional() {
        let rows = vec![MetricRow { lpips: None, ..row("front", 0.0, 40.0) }];
        let text = format_metric_report(&rows);
        assert!(!text.contains("lpips"));
        assert_eq!(parse_metric_report(&text).unwrap()[1].lpips, None);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_metric_report("view=a psnr=x ssim=1").is_err());
        assert!(parse_metric_report("view=a ssim=1").is_err());
        assert!(parse_metric_report("view=a psnr=1 ssim=1 clip=2").is_err());
    }
}
