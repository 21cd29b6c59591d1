//! Static SVG line charts on a logarithmic frequency axis.

use std::fmt::Write as _;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, Option<f64>)>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub fn line_chart(title: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (xmin, xmax) = xs.fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
    let ys = series.iter().flat_map(|s| s.points.iter().filter_map(|p| p.1));
    let (mut ymin, mut ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    if !ymin.is_finite() {
        (ymin, ymax) = (0.0, 1.0);
    }
    if ymax - ymin < 1e-9 {
        ymax = ymin + 1.0;
    }
    let (lx0, lx1) = (xmin.max(1e-9).log10(), xmax.max(xmin * 1.01).log10());
    let px = |x: f64| LEFT + (x.log10() - lx0) / (lx1 - lx0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - ymin) / (ymax - ymin) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" font-size="13">{}</text>"#, LEFT, escape(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for &f in &[250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0] {
        if f < xmin || f > xmax {
            continue;
        }
        let x = px(f);
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{y0}" x2="{x:.1}" y2="{y1}" stroke="#ddd"/>"##);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{f}</text>"#, y1 + 15.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">Frequency (Hz)</text>"#, (x0 + x1) / 2.0, H - 12.0);
    for i in 0..=4 {
        let v = ymin + (ymax - ymin) * i as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#eee"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, x0 - 5.0, y + 4.0);
    }
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut path = String::new();
        let mut pen_down = false;
        for &(x, y) in &ser.points {
            match y {
                Some(y) => {
                    let _ = write!(path, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, px(x), py(y));
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.trim_end());
        let ly = TOP + 15.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x1 + 10.0,
            x1 + 30.0,
            x1 + 35.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_path_per_series_and_breaks_on_gaps() {
        let series = vec![
            Series {
                name: "a".into(),
                points: vec![(250.0, Some(1.0)), (500.0, None), (1000.0, Some(3.0))],
            },
            Series {
                name: "b<c".into(),
                points: vec![(250.0, Some(2.0)), (1000.0, Some(2.5))],
            },
        ];
        let svg = line_chart("THD", &series);
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains("b&lt;c"));
        let first = svg.lines().find(|l| l.starts_with("<path")).unwrap();
        assert_eq!(first.matches('M').count(), 2);
        assert!(svg.ends_with("</svg>\n"));
    }
}
