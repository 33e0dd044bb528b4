//! Scatter plots as standalone SVG.

use std::fmt::{Display, Write as _};
use std::path::Path;

use ndarray::ArrayView2;

use super::DiagnosticsError;

pub const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 600.0;
const PLOT: f64 = 560.0;
const MARGIN: f64 = 20.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG scatter of `points` (n × 2) with one color per distinct tag, in
/// order of first appearance, and a legend.
pub fn render_svg<T: Display + PartialEq>(points: ArrayView2<'_, f64>, tags: &[T], title: &str) -> Result<String, DiagnosticsError> {
    if points.nrows() == 0 {
        return Err(DiagnosticsError::Empty);
    }
    if points.nrows() != tags.len() {
        return Err(DiagnosticsError::Misaligned { points: points.nrows(), tags: tags.len() });
    }
    if points.ncols() != 2 {
        return Err(DiagnosticsError::Dimensions(points.ncols()));
    }
    let mut legend: Vec<&T> = Vec::new();
    for t in tags {
        if !legend.contains(&t) {
            legend.push(t);
        }
    }
    let col = |c: usize| points.column(c).iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let ((x0, x1), (y0, y1)) = (col(0), col(1));
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let px = |v: f64| MARGIN + (v - x0) / span * PLOT;
    let py = |v: f64| MARGIN + PLOT - (v - y0) / span * PLOT;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(svg, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (row, tag) in points.rows().into_iter().zip(tags) {
        let k = legend.iter().position(|l| *l == tag).expect("listed");
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            px(row[0]),
            py(row[1]),
            PALETTE[k % PALETTE.len()]
        );
    }
    let lx = PLOT + 2.0 * MARGIN + 10.0;
    let _ = writeln!(svg, r#"<g class="legend" font-family="sans-serif" font-size="12">"#);
    for (k, tag) in legend.iter().enumerate() {
        let y = MARGIN + 10.0 + 20.0 * k as f64;
        let _ = writeln!(svg, r#"<circle cx="{lx}" cy="{y}" r="5" fill="{}"/>"#, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 10.0, y + 4.0, escape(&tag.to_string()));
    }
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

pub fn emit_plot<T: Display + PartialEq>(points: ArrayView2<'_, f64>, tags: &[T], path: &Path) -> Result<(), DiagnosticsError> {
    let title = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let svg = render_svg(points, tags, &title)?;
    std::fs::write(path, svg).map_err(|source| DiagnosticsError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Task;
    use ndarray::Array2;

    #[test]
    fn one_legend_entry_per_task() {
        let tags: Vec<Task> = (0..50).map(|i| Task::ALL[i % 10]).collect();
        let pts = Array2::from_shape_fn((50, 2), |(i, j)| (i * (j + 1)) as f64);
        let svg = render_svg(pts.view(), &tags, "t").unwrap();
        assert_eq!(svg.matches("<text").count(), 10);
        assert_eq!(svg.matches("<circle").count(), 60);
    }

    #[test]
    fn writes_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        let pts = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        emit_plot(pts.view(), &["a", "b"], &path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
        let bad = dir.path().join("missing").join("p.svg");
        assert!(matches!(emit_plot(pts.view(), &["a", "b"], &bad), Err(DiagnosticsError::Io { .. })));
    }

    #[test]
    fn rejects_empty_and_misaligned() {
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(matches!(render_svg(empty.view(), &[] as &[&str], "t"), Err(DiagnosticsError::Empty)));
        let pts = Array2::<f64>::zeros((3, 2));
        assert!(matches!(render_svg(pts.view(), &["a"], "t"), Err(DiagnosticsError::Misaligned { .. })));
    }
}
