//! Bar chart of per-query score differences: a JSON data file plus a
//! static SVG rendering of it.

use kdspd::eval::ParallelReport;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct BarChart {
    pub title: String,
    pub labels: Vec<String>,
    pub series: Vec<Series>,
}

pub fn parallel_chart(report: &ParallelReport) -> BarChart {
    BarChart {
        title: format!("Parallel-document spread per query (S = {:.4})", report.s),
        labels: report.per_query.iter().map(|q| q.qid.clone()).collect(),
        series: vec![
            Series {
                name: "score_difference".into(),
                values: report.per_query.iter().map(|q| q.score_difference).collect(),
            },
            Series {
                name: "rank_distance".into(),
                values: report.per_query.iter().map(|q| q.rank_distance).collect(),
            },
        ],
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the first series as vertical bars.
pub fn to_svg(chart: &BarChart) -> String {
    let values = chart.series.first().map_or(&[][..], |s| &s.values[..]);
    let (bar, gap, left, top, height) = (12.0, 4.0, 50.0, 30.0, 200.0);
    let width = left + values.len() as f64 * (bar + gap) + 20.0;
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let scale = if max > 0.0 { height / max } else { 0.0 };

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{:.0}\" font-family=\"sans-serif\" font-size=\"10\">\n",
        top + height + 40.0
    );
    svg += &format!(
        "<text x=\"{left}\" y=\"18\" font-size=\"12\">{}</text>\n",
        escape(&chart.title)
    );
    svg += &format!(
        "<line x1=\"{left}\" y1=\"{y}\" x2=\"{:.1}\" y2=\"{y}\" stroke=\"black\"/>\n",
        width - 10.0,
        y = top + height
    );
    svg += &format!("<text x=\"4\" y=\"{:.1}\">{max:.3}</text>\n", top + 4.0);
    svg += &format!("<text x=\"4\" y=\"{:.1}\">0</text>\n", top + height);
    for (i, (&v, label)) in values.iter().zip(&chart.labels).enumerate() {
        let x = left + i as f64 * (bar + gap) + gap;
        let h = v * scale;
        svg += &format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{bar}\" height=\"{h:.1}\" fill=\"steelblue\"><title>{}: {v:.4}</title></rect>\n",
            top + height - h,
            escape(label)
        );
    }
    svg += "</svg>\n";
    svg
}
