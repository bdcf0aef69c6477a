//! CSV tables and SVG line charts.
//!
//! All numbers are written in 6-decimal fixed point, inactive values as
//! `nan`, so identical records always produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{PanError, Result};
use crate::eval::EvalRecord;
use crate::training::EpochMetrics;

pub const METRICS_HEADER: &str = "epoch,bce,l_ds,l_dp,hybrid,ds_real_score,ds_fake_score,dp_real_score,dp_fake_score,test_dsc_mean";
pub const ABLATION_HEADER: &str = "variant,seed,mean_dsc,std_dsc,min_dsc,max_dsc";
pub const EVAL_HEADER: &str = "volume,dsc";

pub const LOSS_CHART: &str = "losses.svg";
pub const SCORE_CHART: &str = "scores.svg";
pub const DSC_CHART: &str = "test_dsc.svg";

pub fn fixed(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in rows {
        let v = m.values();
        out.push_str(&m.epoch.to_string());
        for x in &v[1..] {
            out.push(',');
            out.push_str(&fixed(*x));
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`metrics_csv`], up to the 6-decimal rounding.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => {
            return Err(PanError::ConfigLine {
                line: 1,
                detail: format!("expected header {METRICS_HEADER}"),
            })
        }
    }
    lines
        .map(|(i, l)| {
            let vals: Vec<f64> = l
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| PanError::ConfigLine {
                    line: i + 1,
                    detail: e.to_string(),
                })?;
            if vals.len() != EpochMetrics::COLUMNS.len() {
                return Err(PanError::ConfigLine {
                    line: i + 1,
                    detail: format!("{} fields, expected {}", vals.len(), EpochMetrics::COLUMNS.len()),
                });
            }
            Ok(EpochMetrics {
                epoch: vals[0] as usize,
                bce: vals[1],
                l_ds: vals[2],
                l_dp: vals[3],
                hybrid: vals[4],
                ds_real_score: vals[5],
                ds_fake_score: vals[6],
                dp_real_score: vals[7],
                dp_fake_score: vals[8],
                test_dsc_mean: vals[9],
            })
        })
        .collect()
}

pub fn eval_csv(record: &EvalRecord) -> String {
    let mut out = format!("{EVAL_HEADER}\n");
    for (id, d) in &record.per_volume {
        let _ = writeln!(out, "{id},{}", fixed(*d));
    }
    for (name, v) in [("mean", record.mean), ("std", record.std), ("min", record.min), ("max", record.max)] {
        let _ = writeln!(out, "{name},{}", fixed(v));
    }
    out
}

/// One cell of the ablation table. `None` marks a failed run.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    /// A seed, or `all` for the aggregate row.
    pub seed: String,
    pub summary: Option<[f64; 4]>,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        match r.summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.variant,
                    r.seed,
                    fixed(s[0]),
                    fixed(s[1]),
                    fixed(s[2]),
                    fixed(s[3])
                );
            }
            None => {
                let _ = writeln!(out, "{},{},failed,failed,failed,failed", r.variant, r.seed);
            }
        }
    }
    out
}

/// A named polyline. Non-finite points are left out.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 30.0, 40.0); // left, right, top, bottom

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Self-contained SVG line chart, one polyline per series with at least one
/// finite point.
pub fn line_chart_svg(title: &str, x_label: &str, series: &[Series]) -> String {
    let finite: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect())
        .collect();
    let all = finite.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = all.fold((f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY), |a, &(x, y)| {
        (a.0.min(x), a.1.max(x), a.2.min(y), a.3.max(y))
    });
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let (l, r, t, b) = MARGIN;
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (W - l - r);
    let py = |y: f64| H - b - (y - y0) / (y1 - y0) * (H - t - b);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<g stroke="black" fill="none"><line x1="{l}" y1="{}" x2="{}" y2="{}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{}"/></g>"#,
        H - b,
        W - r,
        H - b,
        H - b
    );
    for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, l - 4.0, y + 4.0, fixed(v));
    }
    for (v, x) in [(x0, px(x0)), (x1, px(x1))] {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{v}</text>"#, H - b + 14.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        H - 6.0,
        escape(x_label)
    );
    let mut legend = 0;
    for (i, (ser, pts)) in series.iter().zip(&finite).enumerate() {
        if pts.is_empty() {
            continue;
        }
        let colour = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-series="{}" fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            escape(ser.name),
            coords.join(" ")
        );
        let ly = t + 6.0 + 14.0 * legend as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{colour}">{}</text>"#, W - r - 120.0, escape(ser.name));
        legend += 1;
    }
    s.push_str("</svg>\n");
    s
}

fn column(rows: &[EpochMetrics], f: impl Fn(&EpochMetrics) -> f64) -> Vec<(f64, f64)> {
    rows.iter().map(|m| (m.epoch as f64, f(m))).collect()
}

/// Loss, discriminator-score and test-DSC charts for a training history.
pub fn training_charts(rows: &[EpochMetrics]) -> Vec<(&'static str, String)> {
    let losses = [
        Series {
            name: "bce",
            points: column(rows, |m| m.bce),
        },
        Series {
            name: "l_ds",
            points: column(rows, |m| m.l_ds),
        },
        Series {
            name: "l_dp",
            points: column(rows, |m| m.l_dp),
        },
        Series {
            name: "hybrid",
            points: column(rows, |m| m.hybrid),
        },
    ];
    let scores = [
        Series {
            name: "ds_real",
            points: column(rows, |m| m.ds_real_score),
        },
        Series {
            name: "ds_fake",
            points: column(rows, |m| m.ds_fake_score),
        },
        Series {
            name: "dp_real",
            points: column(rows, |m| m.dp_real_score),
        },
        Series {
            name: "dp_fake",
            points: column(rows, |m| m.dp_fake_score),
        },
    ];
    let dsc = [Series {
        name: "test_dsc_mean",
        points: column(rows, |m| m.test_dsc_mean),
    }];
    vec![
        (LOSS_CHART, line_chart_svg("Training losses", "epoch", &losses)),
        (SCORE_CHART, line_chart_svg("Discriminator scores", "epoch", &scores)),
        (DSC_CHART, line_chart_svg("Mean test DSC", "epoch", &dsc)),
    ]
}

/// Write the metrics CSV and the charts into `dir`; returns the files written.
pub fn emit_report(rows: &[EpochMetrics], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(PanError::Config("no epochs to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| PanError::io(dir, e))?;
    let mut files = vec![(crate::training::METRICS_FILE, metrics_csv(rows))];
    files.extend(training_charts(rows));
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| PanError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize) -> Vec<EpochMetrics> {
        (1..=n)
            .map(|e| EpochMetrics {
                epoch: e,
                bce: 1.0 / e as f64,
                l_ds: 1.3,
                l_dp: f64::NAN,
                hybrid: 0.9 / e as f64,
                ds_real_score: 0.6,
                ds_fake_score: 0.4,
                dp_real_score: f64::NAN,
                dp_fake_score: f64::NAN,
                test_dsc_mean: 0.1 * e as f64,
            })
            .collect()
    }

    #[test]
    fn metrics_csv_schema_and_format() {
        let csv = metrics_csv(&rows(3));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "epoch,bce,l_ds,l_dp,hybrid,ds_real_score,ds_fake_score,dp_real_score,dp_fake_score,test_dsc_mean"
        );
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "1,1.000000,1.300000,nan,0.900000,0.600000,0.400000,nan,nan,0.100000");
        assert!(lines.iter().all(|l| l.split(',').count() == 10));
        assert_eq!(metrics_csv(&rows(3)), csv);
    }

    #[test]
    fn metrics_csv_parses_back() {
        let r = rows(4);
        let back = parse_metrics_csv(&metrics_csv(&r)).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[2].epoch, 3);
        assert!((back[2].bce - r[2].bce).abs() < 1e-6);
        assert!(back[2].l_dp.is_nan());
        assert!(parse_metrics_csv("epoch,bce\n").is_err());
        assert!(matches!(
            parse_metrics_csv(&format!("{METRICS_HEADER}\n1,2\n")),
            Err(PanError::ConfigLine { line: 2, .. })
        ));
    }

    #[test]
    fn ablation_and_eval_tables() {
        let csv = ablation_csv(&[
            AblationRow {
                variant: "S".into(),
                seed: "0".into(),
                summary: Some([0.5, 0.1, 0.25, 0.75]),
            },
            AblationRow {
                variant: "S".into(),
                seed: "1".into(),
                summary: None,
            },
            AblationRow {
                variant: "S".into(),
                seed: "all".into(),
                summary: Some([0.5, 0.0, 0.5, 0.5]),
            },
        ]);
        assert_eq!(
            csv,
            "variant,seed,mean_dsc,std_dsc,min_dsc,max_dsc\nS,0,0.500000,0.100000,0.250000,0.750000\nS,1,failed,failed,failed,failed\nS,all,0.500000,0.000000,0.500000,0.500000\n"
        );
        let rec = EvalRecord::from_scores(vec![("a".into(), 0.5), ("b".into(), 1.0)]).unwrap();
        assert_eq!(
            eval_csv(&rec),
            "volume,dsc\na,0.500000\nb,1.000000\nmean,0.750000\nstd,0.250000\nmin,0.500000\nmax,1.000000\n"
        );
    }

    #[test]
    fn charts_are_well_formed_xml_with_one_polyline_per_series() {
        for (name, svg) in training_charts(&rows(5)) {
            let doc = roxmltree::Document::parse(&svg).unwrap_or_else(|e| panic!("{name}: {e}"));
            let root = doc.root_element();
            assert_eq!(root.tag_name().name(), "svg");
            let lines: Vec<_> = root.descendants().filter(|n| n.has_tag_name("polyline")).collect();
            let expected = match name {
                LOSS_CHART => vec!["bce", "l_ds", "hybrid"],
                SCORE_CHART => vec!["ds_real", "ds_fake"],
                _ => vec!["test_dsc_mean"],
            };
            assert_eq!(lines.iter().map(|n| n.attribute("data-series").unwrap()).collect::<Vec<_>>(), expected);
            for l in lines {
                assert_eq!(l.attribute("points").unwrap().split(' ').count(), 5);
            }
            assert!(!svg.contains("href"));
        }
    }

    #[test]
    fn chart_handles_degenerate_input() {
        let svg = line_chart_svg(
            "a < b & c",
            "x",
            &[
                Series {
                    name: "flat",
                    points: vec![(1.0, 2.0)],
                },
                Series {
                    name: "none",
                    points: vec![],
                },
            ],
        );
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 1);
        assert!(roxmltree::Document::parse(&line_chart_svg("empty", "x", &[])).is_ok());
    }

    #[test]
    fn emit_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&rows(2), dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        assert!(files.iter().all(|f| f.exists()));
        assert_eq!(fs::read_to_string(&files[0]).unwrap(), metrics_csv(&rows(2)));
        assert!(emit_report(&[], dir.path()).is_err());
        let blocked = dir.path().join("file");
        fs::write(&blocked, "x").unwrap();
        assert!(matches!(emit_report(&rows(1), &blocked.join("sub")), Err(PanError::Io { .. })));
    }
}
