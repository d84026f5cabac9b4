use std::fmt::Write;

use crate::error::{Error, Result};
use crate::explain::ExplainerId;
use crate::harness::{DatasetSensitivity, DATASET_THRESHOLD};

pub(crate) const PLOT_TOP: f64 = 40.0;
pub(crate) const PLOT_HEIGHT: f64 = 300.0;
const PLOT_LEFT: f64 = 60.0;
const BAR_WIDTH: f64 = 18.0;
const GROUP_GAP: f64 = 24.0;
const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#8172b3", "#937860", "#da8bc3"];

/// Data value in `[0, 1]` to an SVG y coordinate.
pub fn value_to_y(v: f64) -> f64 {
    PLOT_TOP + PLOT_HEIGHT * (1.0 - v.clamp(0.0, 1.0))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grouped bar chart of S^I: one group per explainer, one bar per
/// architecture, 90% interval whiskers and a dashed line at the threshold.
pub fn emit_s_i_chart(datasets: &[DatasetSensitivity]) -> Result<String> {
    if datasets.is_empty() {
        return Err(Error::invalid("chart needs at least one S^I value"));
    }
    let mut explainers: Vec<ExplainerId> = Vec::new();
    let mut architectures: Vec<&str> = Vec::new();
    for d in datasets {
        if !explainers.contains(&d.explainer) {
            explainers.push(d.explainer);
        }
        if !architectures.contains(&d.architecture_id.as_str()) {
            architectures.push(&d.architecture_id);
        }
    }
    let group_width = BAR_WIDTH * architectures.len() as f64;
    let plot_width = explainers.len() as f64 * (group_width + GROUP_GAP) + GROUP_GAP;
    let width = PLOT_LEFT + plot_width + 160.0;
    let height = PLOT_TOP + PLOT_HEIGHT + 90.0;
    let bottom = value_to_y(0.0);
    let right = PLOT_LEFT + plot_width;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"  <title>S^I per explainer and architecture</title>"#);
    let _ = writeln!(
        s,
        r#"  <line class="axis" x1="{PLOT_LEFT:.1}" y1="{PLOT_TOP:.1}" x2="{PLOT_LEFT:.1}" y2="{bottom:.1}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"  <line class="axis" x1="{PLOT_LEFT:.1}" y1="{bottom:.1}" x2="{right:.1}" y2="{bottom:.1}" stroke="black"/>"#
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = value_to_y(tick);
        let _ = writeln!(
            s,
            r#"  <text class="tick" x="{:.1}" y="{:.1}" text-anchor="end">{tick:.2}</text>"#,
            PLOT_LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"  <text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">S^I</text>"#,
        PLOT_TOP + PLOT_HEIGHT / 2.0,
        PLOT_TOP + PLOT_HEIGHT / 2.0
    );

    for (ei, e) in explainers.iter().enumerate() {
        let gx = PLOT_LEFT + GROUP_GAP + ei as f64 * (group_width + GROUP_GAP);
        for (ai, a) in architectures.iter().enumerate() {
            let Some(d) = datasets
                .iter()
                .find(|d| d.explainer == *e && d.architecture_id == *a)
            else {
                continue;
            };
            let x = gx + ai as f64 * BAR_WIDTH;
            let y = value_to_y(d.score);
            let _ = writeln!(
                s,
                r#"  <rect class="bar" data-explainer="{}" data-architecture="{}" data-value="{}" x="{x:.3}" y="{y:.3}" width="{BAR_WIDTH:.1}" height="{:.3}" fill="{}"/>"#,
                e.name(),
                escape(a),
                d.score,
                bottom - y,
                PALETTE[ai % PALETTE.len()]
            );
            let cx = x + BAR_WIDTH / 2.0;
            let (ylo, yhi) = (value_to_y(d.ci90.0), value_to_y(d.ci90.1));
            let _ = writeln!(
                s,
                r#"  <line class="ci" x1="{cx:.3}" y1="{ylo:.3}" x2="{cx:.3}" y2="{yhi:.3}" stroke="black"/>"#
            );
            for yy in [ylo, yhi] {
                let _ = writeln!(
                    s,
                    r#"  <line class="ci-cap" x1="{:.3}" y1="{yy:.3}" x2="{:.3}" y2="{yy:.3}" stroke="black"/>"#,
                    cx - 4.0,
                    cx + 4.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"  <text class="group" x="{:.3}" y="{:.1}" text-anchor="end" transform="rotate(-35 {:.3} {:.1})">{}</text>"#,
            gx + group_width / 2.0,
            bottom + 14.0,
            gx + group_width / 2.0,
            bottom + 14.0,
            e.name()
        );
    }

    let ty = value_to_y(DATASET_THRESHOLD);
    let _ = writeln!(
        s,
        r#"  <line class="threshold" data-value="{DATASET_THRESHOLD}" x1="{PLOT_LEFT:.1}" y1="{ty:.3}" x2="{right:.1}" y2="{ty:.3}" stroke="red" stroke-dasharray="6,4"/>"#
    );
    for (ai, a) in architectures.iter().enumerate() {
        let y = PLOT_TOP + 14.0 * ai as f64;
        let _ = writeln!(
            s,
            r#"  <rect class="legend" x="{:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#,
            right + 16.0,
            y,
            PALETTE[ai % PALETTE.len()]
        );
        let _ = writeln!(s, r#"  <text x="{:.1}" y="{:.1}">{}</text>"#, right + 30.0, y + 9.0, escape(a));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
