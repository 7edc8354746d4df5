use std::fmt::Write;

use delaypde::sim::FieldGrid;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
/// Cap on heatmap columns so files stay small.
const MAX_COLUMNS: usize = 250;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue (negative) through white to red (positive).
fn diverging(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

fn axes(out: &mut String, x_label: &str, y_label: &str, x_ticks: &[(f64, String)], y_ticks: &[(f64, String)]) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for (px, label) in x_ticks {
        let _ = writeln!(out, r#"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{label}</text>"#, y1 + 18.0);
    }
    for (py, label) in y_ticks {
        let _ = writeln!(out, r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, x0 - 8.0, py + 4.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, (x0 + x1) / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{y_label}</text>"#,
        (y0 + y1) / 2.0
    );
}

fn linear_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| lo + (hi - lo) * i as f64 / count as f64).collect()
}

/// Time on the horizontal axis, `x` on the vertical axis.
pub fn heatmap(field: &FieldGrid, title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let nt = field.times.len();
    let nx = field.x.len();
    if nt == 0 || nx == 0 {
        out.push_str("</svg>\n");
        return out;
    }
    let stride = nt.div_ceil(MAX_COLUMNS).max(1);
    let cols: Vec<usize> = (0..nt).step_by(stride).collect();
    let scale = field
        .values
        .iter()
        .flatten()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let (t0, t1) = (field.times[0], field.times[nt - 1].max(field.times[0] + f64::EPSILON));
    let pw = (W - LEFT - RIGHT) / cols.len() as f64;
    let ph = (H - TOP - BOTTOM) / nx as f64;
    for (ci, &s) in cols.iter().enumerate() {
        for j in 0..nx {
            let y = H - BOTTOM - (j + 1) as f64 * ph;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                LEFT + ci as f64 * pw,
                pw + 0.3,
                ph + 0.3,
                diverging(field.values[s][j] / scale)
            );
        }
    }
    let xt: Vec<(f64, String)> = linear_ticks(t0, t1, 5)
        .into_iter()
        .map(|t| (LEFT + (t - t0) / (t1 - t0) * (W - LEFT - RIGHT), format!("{t:.3}")))
        .collect();
    let yt: Vec<(f64, String)> = linear_ticks(0.0, 1.0, 4)
        .into_iter()
        .map(|x| (H - BOTTOM - x * (H - TOP - BOTTOM), format!("{x:.2}")))
        .collect();
    axes(&mut out, "t [s]", "x", &xt, &yt);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">color scale: ±{scale:.3e}</text>"#,
        W - RIGHT,
        TOP - 4.0
    );
    out.push_str("</svg>\n");
    out
}

pub struct Series<'a> {
    pub label: String,
    pub times: &'a [f64],
    pub values: &'a [f64],
}

/// Line plot with a base-10 logarithmic vertical axis; non-positive values
/// are skipped.
pub fn log_lines(series: &[Series], title: &str, y_label: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let positive = || {
        series
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .filter(|v| *v > 0.0 && v.is_finite())
    };
    let (lo, hi) = positive().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let t_max = series
        .iter()
        .flat_map(|s| s.times.last().copied())
        .fold(0.0f64, f64::max)
        .max(f64::EPSILON);
    if !lo.is_finite() {
        out.push_str("</svg>\n");
        return out;
    }
    let (d0, mut d1) = (lo.log10().floor(), hi.log10().ceil());
    if d1 <= d0 {
        d1 = d0 + 1.0;
    }
    let px = |t: f64| LEFT + t / t_max * (W - LEFT - RIGHT);
    let py = |v: f64| H - BOTTOM - (v.log10() - d0) / (d1 - d0) * (H - TOP - BOTTOM);
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .times
            .iter()
            .zip(s.values)
            .filter(|(_, v)| **v > 0.0 && v.is_finite())
            .map(|(t, v)| format!("{:.2},{:.2}", px(*t), py(*v)))
            .collect();
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/>"#,
            W - RIGHT - 120.0,
            W - RIGHT - 100.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT - 95.0, ly + 4.0, escape(&s.label));
    }
    let step = ((d1 - d0) / 8.0).ceil().max(1.0);
    let mut yt = Vec::new();
    let mut d = d0;
    while d <= d1 + 1e-9 {
        yt.push((py(10f64.powf(d)), format!("1e{}", d as i64)));
        d += step;
    }
    let xt: Vec<(f64, String)> = linear_ticks(0.0, t_max, 5)
        .into_iter()
        .map(|t| (px(t), format!("{t:.3}")))
        .collect();
    axes(&mut out, "t [s]", y_label, &xt, &yt);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_ends() {
        assert_eq!(diverging(1.0), "#ff0000");
        assert_eq!(diverging(-1.0), "#0000ff");
        assert_eq!(diverging(0.0), "#ffffff");
    }

    #[test]
    fn log_plot_skips_non_positive() {
        let t = [0.0, 1.0, 2.0];
        let v = [1.0, 0.0, 1e-3];
        let svg = log_lines(&[Series { label: "a".into(), times: &t, values: &v }], "x", "y");
        assert!(svg.contains("<polyline"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("1e-3"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn heatmap_downsamples_time() {
        let field = FieldGrid {
            times: (0..1000).map(|i| i as f64).collect(),
            x: vec![0.0, 1.0],
            values: vec![vec![0.5, -0.5]; 1000],
        };
        let svg = heatmap(&field, "f");
        assert!(svg.matches("<rect").count() <= 2 * MAX_COLUMNS + 3);
    }
}
