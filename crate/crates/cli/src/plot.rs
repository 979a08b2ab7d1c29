//! SVG boxplots of replicate records: Δ̂ per strategy, each treatment
//! coefficient per strategy against its true value, and interval widths.

use std::fmt::Write as _;

use psbayes::sim::{DgpSpec, ReplicationRecord, SlotResult};
use psbayes::stats::{quantile_sorted, sorted_copy};
use psbayes::strategies::Strategy;

pub const CONVENTION: &str = "Boxplot convention: the box spans the first to third quartile \
(type-7 sample quantiles) with a line at the median; whiskers extend to the most extreme \
observations within 1.5 IQR of the box; observations beyond the whiskers are drawn as \
individual outlier points. Dashed rules mark true values.";

const PANEL_W: f64 = 280.0;
const PANEL_H: f64 = 230.0;
const COLUMNS: usize = 4;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 12.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 26.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    /// `None` for an empty sample.
    pub fn new(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sorted = sorted_copy(values);
        let (q1, median, q3) = (
            quantile_sorted(&sorted, 0.25),
            quantile_sorted(&sorted, 0.5),
            quantile_sorted(&sorted, 0.75),
        );
        let reach = 1.5 * (q3 - q1);
        let (lo_fence, hi_fence) = (q1 - reach, q3 + reach);
        let inside = sorted.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v));
        let (whisker_low, whisker_high) = inside.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let outliers = sorted.iter().copied().filter(|v| !(lo_fence..=hi_fence).contains(v)).collect();
        Some(Self {
            q1,
            median,
            q3,
            whisker_low,
            whisker_high,
            outliers,
        })
    }
}

/// One panel: a box per strategy that has data, plus an optional truth rule.
struct Panel {
    id: String,
    title: String,
    truth: Option<f64>,
    groups: Vec<(Strategy, Vec<f64>)>,
}

fn collect(records: &[ReplicationRecord], value: impl Fn(&psbayes::sim::StrategySummary) -> Option<f64>) -> Vec<(Strategy, Vec<f64>)> {
    Strategy::ALL
        .iter()
        .filter_map(|&s| {
            let values: Vec<f64> = records
                .iter()
                .filter_map(|r| match r.slot(s) {
                    SlotResult::Done(d) => value(d).filter(|v| v.is_finite()),
                    _ => None,
                })
                .collect();
            (!values.is_empty()).then_some((s, values))
        })
        .collect()
}

fn panels(records: &[ReplicationRecord], truth: f64, dgp: &DgpSpec) -> Vec<Panel> {
    let mut out = vec![Panel {
        id: "delta".into(),
        title: "Estimated effect".into(),
        truth: Some(truth),
        groups: collect(records, |d| Some(d.delta.point)),
    }];
    for (j, &coef) in dgp.treatment_coefs.iter().enumerate() {
        out.push(Panel {
            id: format!("theta_xc_{}", j + 1),
            title: format!("Treatment coefficient c{}", j + 1),
            truth: Some(coef),
            groups: collect(records, |d| d.theta_xc.get(j).copied()),
        });
    }
    out.push(Panel {
        id: "width".into(),
        title: "Interval width".into(),
        truth: None,
        groups: collect(records, |d| Some(d.delta.width())),
    });
    out
}

fn value_range(panel: &Panel) -> (f64, f64) {
    let all = panel.groups.iter().flat_map(|(_, v)| v.iter().copied()).chain(panel.truth);
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.1 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

fn render_panel(svg: &mut String, panel: &Panel, x0: f64, y0: f64) {
    let (lo, hi) = value_range(panel);
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let y = |v: f64| y0 + MARGIN_T + plot_h * (hi - v) / (hi - lo);
    let left = x0 + MARGIN_L;

    let _ = writeln!(svg, r#"<g class="panel" id="panel-{}">"#, panel.id);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
        left + plot_w / 2.0,
        y0 + 18.0,
        panel.title
    );
    let _ = writeln!(
        svg,
        r##"<rect class="frame" x="{left:.2}" y="{:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#999"/>"##,
        y0 + MARGIN_T
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{v:.3}</text>"#,
            left - 4.0,
            y(v) + 3.0
        );
    }
    if let Some(t) = panel.truth {
        let _ = writeln!(
            svg,
            r##"<line class="truth" x1="{left:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#c0392b" stroke-dasharray="4 3"/>"##,
            left + plot_w,
            y(t),
            y(t)
        );
    }
    let slot = plot_w / Strategy::ALL.len() as f64;
    for (s, values) in &panel.groups {
        let Some(b) = BoxStats::new(values) else { continue };
        let cx = left + slot * (s.index() as f64 + 0.5);
        let half = slot * 0.3;
        let _ = writeln!(svg, r#"<g class="box" data-strategy="{s}" data-n="{}">"#, values.len());
        let _ = writeln!(
            svg,
            r#"<line class="whisker" x1="{cx:.2}" x2="{cx:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
            y(b.whisker_low),
            y(b.q1)
        );
        let _ = writeln!(
            svg,
            r#"<line class="whisker" x1="{cx:.2}" x2="{cx:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
            y(b.q3),
            y(b.whisker_high)
        );
        for w in [b.whisker_low, b.whisker_high] {
            let _ = writeln!(
                svg,
                r#"<line class="cap" x1="{:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
                cx - half / 2.0,
                cx + half / 2.0,
                y(w),
                y(w)
            );
        }
        let _ = writeln!(
            svg,
            r##"<rect class="iqr" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#d6e4f0" stroke="black"/>"##,
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.0)
        );
        let _ = writeln!(
            svg,
            r#"<line class="median" x1="{:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            cx + half,
            y(b.median),
            y(b.median)
        );
        for o in &b.outliers {
            let _ = writeln!(
                svg,
                r#"<circle class="outlier" cx="{cx:.2}" cy="{:.2}" r="2" fill="none" stroke="black"/>"#,
                y(*o)
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    for s in Strategy::ALL {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{s}</text>"#,
            left + slot * (s.index() as f64 + 0.5),
            y0 + PANEL_H - 10.0
        );
    }
    let _ = writeln!(svg, "</g>");
}

/// Renders the full figure. `truth` is the true effect; the true treatment
/// coefficients come from `dgp`.
pub fn render_svg(records: &[ReplicationRecord], truth: f64, dgp: &DgpSpec) -> String {
    let panels = panels(records, truth, dgp);
    let rows = panels.len().div_ceil(COLUMNS);
    let (width, height) = (PANEL_W * COLUMNS as f64, PANEL_H * rows as f64);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, "<title>Replicate estimates by strategy</title>");
    let _ = writeln!(svg, "<metadata>{CONVENTION} Replicates: {}.</metadata>", records.len());
    for (k, panel) in panels.iter().enumerate() {
        let (col, row) = (k % COLUMNS, k / COLUMNS);
        render_panel(&mut svg, panel, col as f64 * PANEL_W, row as f64 * PANEL_H);
    }
    let _ = writeln!(svg, "</svg>");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_stats_by_hand() {
        // Sorted: 1..=8 and 30. Quartiles (type 7) at positions 2 and 6: 3 and 7.
        // Fences 3 - 6 = -3 and 7 + 6 = 13, so 30 is the only outlier.
        let v = [30.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let b = BoxStats::new(&v).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (3.0, 5.0, 7.0));
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 8.0));
        assert_eq!(b.outliers, vec![30.0]);
    }

    #[test]
    fn constant_sample_has_flat_box() {
        let b = BoxStats::new(&[2.0; 5]).unwrap();
        assert_eq!((b.q1, b.q3, b.whisker_low, b.whisker_high), (2.0, 2.0, 2.0, 2.0));
        assert!(b.outliers.is_empty());
        assert!(BoxStats::new(&[]).is_none());
    }
}
