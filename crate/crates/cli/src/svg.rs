//! Minimal deterministic SVG line charts for report directories.

use std::io;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

/// Axis-fitted polyline chart. With `log_x` the x values are plotted on a
/// log10 axis; non-positive x values are clamped to the smallest positive
/// one (so a gamma = 0 point stays visible at the left edge).
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    log_x: bool,
) -> io::Result<()> {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    if xs.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "no points to plot"));
    }
    let min_pos_x = xs.iter().cloned().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let tx = |x: f64| -> f64 {
        if log_x {
            let x = if x > 0.0 { x } else { min_pos_x / 10.0 };
            x.log10()
        } else {
            x
        }
    };
    let x_lo = xs.iter().cloned().map(tx).fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().cloned().map(tx).fold(f64::NEG_INFINITY, f64::max);
    let y_lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x_span = (x_hi - x_lo).max(1e-12);
    let y_span = (y_hi - y_lo).max(1e-12);
    let px = |x: f64| MARGIN + (tx(x) - x_lo) / x_span * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y_lo) / y_span * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        WIDTH / 2.0
    ));
    // Axes.
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    ));
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
    // Extremal tick labels.
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\">{}</text>\n",
        MARGIN,
        HEIGHT - MARGIN + 14.0,
        if log_x { format!("1e{}", fmt(x_lo)) } else { fmt(x_lo) }
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{}</text>\n",
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 14.0,
        if log_x { format!("1e{}", fmt(x_hi)) } else { fmt(x_hi) }
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{}</text>\n",
        MARGIN - 4.0,
        HEIGHT - MARGIN,
        fmt(y_lo)
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{}</text>\n",
        MARGIN - 4.0,
        MARGIN + 4.0,
        fmt(y_hi)
    ));
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{},{}", fmt(px(x)), fmt(py(y)))).collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        for &(x, y) in s.points {
            out.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\" fill=\"{color}\"/>\n",
                fmt(px(x)),
                fmt(py(y))
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN + 6.0,
            MARGIN + 16.0 * i as f64,
            s.name
        ));
    }
    out.push_str("</svg>\n");
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_valid() {
        let dir = std::env::temp_dir().join(format!("nomore-svg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let points = [(0.0, 0.5), (1e-4, 0.6), (1e-2, 0.8), (1.0, 0.3)];
        let mut bodies = Vec::new();
        for i in 0..2 {
            let p = dir.join(format!("c{i}.svg"));
            line_chart(
                &p,
                "accuracy vs amplitude",
                "amplitude",
                "accuracy",
                &[Series { name: "run", points: &points }],
                true,
            )
            .unwrap();
            bodies.push(std::fs::read(&p).unwrap());
        }
        assert_eq!(bodies[0], bodies[1]);
        let text = String::from_utf8(bodies[0].clone()).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
