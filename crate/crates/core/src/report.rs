//! Static result displays: per-keyword F1 bar charts and localisation
//! score-track plots, written as plain SVG so outputs stay deterministic.

use std::fmt::Write as _;

use crate::corpus::AlignmentSet;
use crate::eval::EvalReport;
use crate::localise::LocalisationScores;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart of one per-keyword metric (values in [0, 1]); undefined
/// keywords are drawn as hollow bars at zero height.
pub fn keyword_bar_chart(
    title: &str,
    keywords: &[String],
    values: &[Option<f64>],
) -> String {
    let mut svg = svg_header(title);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let n = keywords.len().max(1) as f64;
    let slot = plot_w / n;
    let bar_w = (slot * 0.7).max(1.0);

    // Axes and gridlines at 0.0, 0.5, 1.0.
    for frac in [0.0, 0.5, 1.0] {
        let y = MARGIN + plot_h * (1.0 - frac);
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#cccccc\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{frac:.1}</text>",
            WIDTH - MARGIN,
            MARGIN - 6.0,
            y + 4.0
        );
    }
    for (i, kw) in keywords.iter().enumerate() {
        let x = MARGIN + slot * i as f64 + (slot - bar_w) / 2.0;
        match values.get(i).copied().flatten() {
            Some(v) => {
                let h = plot_h * v.clamp(0.0, 1.0);
                let y = MARGIN + plot_h - h;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" \
                     fill=\"#4878a8\"/>"
                );
            }
            None => {
                let y = MARGIN + plot_h - 2.0;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"2\" \
                     fill=\"none\" stroke=\"#aa4444\"/>"
                );
            }
        }
        let cx = x + bar_w / 2.0;
        let ty = HEIGHT - MARGIN + 12.0;
        let _ = writeln!(
            svg,
            "<text x=\"{cx:.2}\" y=\"{ty:.2}\" text-anchor=\"end\" \
             transform=\"rotate(-45 {cx:.2} {ty:.2})\">{}</text>",
            xml_escape(kw)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Score track over time with ground-truth intervals of the keyword shaded
/// and the predicted location marked.
pub fn score_track_plot(
    title: &str,
    scores: &LocalisationScores,
    keyword: &str,
    alignment: &AlignmentSet,
    duration_s: f64,
) -> String {
    let mut svg = svg_header(title);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let dur = duration_s.max(1e-6);
    let x_of = |t: f64| MARGIN + plot_w * (t / dur).clamp(0.0, 1.0);

    let lo = scores.scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let y_of = |s: f64| MARGIN + plot_h * (1.0 - (s - lo) / span);

    // Ground-truth occurrences.
    for (s, e) in alignment.occurrences_of(keyword) {
        let x0 = x_of(s);
        let x1 = x_of(e);
        let _ = writeln!(
            svg,
            "<rect x=\"{x0:.2}\" y=\"{MARGIN}\" width=\"{:.2}\" height=\"{plot_h}\" \
             fill=\"#88cc88\" opacity=\"0.35\"/>",
            (x1 - x0).max(0.5)
        );
    }
    // The track itself.
    let mut path = String::new();
    for (i, (&s, &t)) in scores.scores.iter().zip(&scores.times_s).enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(path, "{cmd}{:.2},{:.2} ", x_of(t), y_of(s));
    }
    let _ = writeln!(
        svg,
        "<path d=\"{}\" fill=\"none\" stroke=\"#333388\" stroke-width=\"1.5\"/>",
        path.trim_end()
    );
    // Predicted location.
    if let Ok(idx) = crate::localise::argmax_index(&scores.scores) {
        let x = x_of(scores.times_s[idx]);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{MARGIN}\" x2=\"{x:.2}\" y2=\"{}\" \
             stroke=\"#cc3333\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"/>",
            MARGIN + plot_h
        );
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>",
        MARGIN + plot_h,
        WIDTH - MARGIN,
        MARGIN + plot_h
    );
    svg.push_str("</svg>\n");
    svg
}

/// The standard per-keyword detection-F1 chart emitted by every run.
pub fn f1_chart(report: &EvalReport) -> String {
    let values: Vec<Option<f64>> = report
        .detection
        .per_keyword
        .iter()
        .map(|c| c.f1)
        .collect();
    keyword_bar_chart("Keyword detection F1 per keyword", &report.keywords, &values)
}
