//! Minimal SVG line plot of checkpoint series.

use std::fmt::Write;

use super::run::CheckpointMetrics;

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN: f64 = 48.0;

struct Series<'a> {
    title: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return None;
    }
    if hi > lo {
        Some((lo, hi))
    } else {
        Some((lo - 0.5, hi + 0.5))
    }
}

fn panel(svg: &mut String, series: &Series<'_>, top: f64) {
    let (left, right) = (MARGIN, WIDTH - MARGIN / 2.0);
    let (upper, lower) = (top + MARGIN / 2.0, top + PANEL_HEIGHT - MARGIN / 2.0);
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="{}" font-size="13">{}</text>"#,
        upper - 6.0,
        series.title
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="black" points="{left},{upper} {left},{lower} {right},{lower}"/>"#
    );
    let (Some((x0, x1)), Some((y0, y1))) = (
        bounds(series.points.iter().map(|p| p.0)),
        bounds(series.points.iter().map(|p| p.1)),
    ) else {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12">no data</text>"#,
            left + 8.0,
            lower - 8.0
        );
        return;
    };
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let sy = |y: f64| lower - (y - y0) / (y1 - y0) * (lower - upper);
    let pts: Vec<String> = series
        .points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
        series.color,
        pts.join(" ")
    );
    for (label, y, v) in [("max", upper, y1), ("min", lower, y0)] {
        let _ = writeln!(
            svg,
            r#"<text x="2" y="{:.2}" font-size="10" data-axis="{label}">{v:.4}</text>"#,
            y + 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{left}" y="{:.2}" font-size="10">{x0}</text><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">epoch {x1}</text>"#,
        lower + 14.0,
        right,
        lower + 14.0
    );
}

/// Mean probability and mean margin against epoch, one panel each.
pub fn render_curves_svg(checkpoints: &[CheckpointMetrics]) -> String {
    let series = [
        Series {
            title: "mean counterfactual validity probability",
            color: "#1f77b4",
            points: checkpoints
                .iter()
                .map(|c| (c.epoch as f64, c.mean_vcp))
                .collect(),
        },
        Series {
            title: "mean margin",
            color: "#d62728",
            points: checkpoints
                .iter()
                .filter_map(|c| c.mean_margin.map(|m| (c.epoch as f64, m)))
                .collect(),
        },
    ];
    let height = PANEL_HEIGHT * series.len() as f64;
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    svg.push('\n');
    for (i, s) in series.iter().enumerate() {
        panel(&mut svg, s, i as f64 * PANEL_HEIGHT);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_two_series() {
        let rows: Vec<CheckpointMetrics> = (0..4)
            .map(|i| CheckpointMetrics {
                epoch: i * 10,
                train_acc: 0.5,
                test_acc: 0.5,
                mean_margin: Some(1.0 / (i as f64 + 1.0)),
                mean_vcp: 0.1 * i as f64,
                vcp_stderr: 0.0,
                excluded_margins: 0,
                jensen_bound: None,
            })
            .collect();
        let svg = render_curves_svg(&rows);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("stroke-width").count(), 2);
        assert!(render_curves_svg(&[]).contains("no data"));
    }
}
