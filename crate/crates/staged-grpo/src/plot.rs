//! Offline SVG curves from a metrics log: mean reward and surrogate value
//! per optimizer step, with dashed markers at stage transitions.

use crate::metrics::Record;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;

struct Series {
    points: Vec<(f64, f64)>,
    transitions: Vec<f64>,
}

fn collect(records: &[Record], pick: impl Fn(&crate::metrics::StepRecord) -> f64) -> Series {
    let mut points = Vec::new();
    let mut transitions = Vec::new();
    let mut last_step = 0.0;
    for record in records {
        match record {
            Record::Step(s) => {
                last_step = s.step as f64;
                points.push((last_step, pick(s)));
            }
            Record::StageTransition { .. } => transitions.push(last_step + 0.5),
            Record::Warning { .. } => {}
        }
    }
    Series {
        points,
        transitions,
    }
}

fn render(series: &Series, title: &str, y_label: &str) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"14\">{title}</text>\n",
        WIDTH / 2.0
    ));
    if series.points.is_empty() {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">no optimizer steps recorded</text>\n",
            WIDTH / 2.0,
            HEIGHT / 2.0
        ));
        svg.push_str("</svg>\n");
        return svg;
    }
    let (x_min, x_max) = series
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| {
            (lo.min(x), hi.max(x))
        });
    let (y_min, y_max) = series
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| {
            (lo.min(y), hi.max(y))
        });
    let x_span = (x_max - x_min).max(1.0);
    let y_span = (y_max - y_min).max(1e-9);
    let to_x = |x: f64| MARGIN + (x - x_min) / x_span * (WIDTH - 2.0 * MARGIN);
    let to_y = |y: f64| HEIGHT - MARGIN - (y - y_min) / y_span * (HEIGHT - 2.0 * MARGIN);
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    ));
    svg.push_str(&format!(
        "  <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN
    ));
    svg.push_str(&format!(
        "  <text x=\"12\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" transform=\"rotate(-90 12 {})\">{y_label}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\">optimizer step</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    for value in [y_min, y_max] {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"10\">{value:.3}</text>\n",
            MARGIN - 4.0,
            to_y(value) + 3.0
        ));
    }
    let path: Vec<String> = series
        .points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", to_x(x), to_y(y)))
        .collect();
    svg.push_str(&format!(
        "  <polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        path.join(" ")
    ));
    for &t in &series.transitions {
        let x = to_x(t.clamp(x_min, x_max));
        svg.push_str(&format!(
            "  <line class=\"stage-transition\" x1=\"{x:.2}\" y1=\"{MARGIN}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#d62728\" stroke-dasharray=\"6 4\"/>\n",
            HEIGHT - MARGIN
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" fill=\"#d62728\">stage transition</text>\n",
            x + 4.0,
            MARGIN + 12.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Render (reward curve, surrogate curve) as SVG documents.
pub fn render_curves(records: &[Record]) -> (String, String) {
    let reward = collect(records, |s| s.mean_reward);
    let surrogate = collect(records, |s| s.surrogate);
    (
        render(&reward, "mean combined reward per optimizer step", "mean_reward"),
        render(&surrogate, "surrogate objective per optimizer step", "surrogate"),
    )
}
