//! Minimal SVG emission for scatter, reliability and bar plots.

const W: f64 = 560.0;
const H: f64 = 400.0;
const ML: f64 = 70.0; // margins
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn from_points(xs: &[f64], ys: &[f64]) -> Self {
        let finite = |v: &&f64| v.is_finite();
        let x0 = xs.iter().filter(finite).cloned().fold(f64::INFINITY, f64::min);
        let x1 = xs.iter().filter(finite).cloned().fold(f64::NEG_INFINITY, f64::max);
        let y0 = ys.iter().filter(finite).cloned().fold(f64::INFINITY, f64::min);
        let y1 = ys.iter().filter(finite).cloned().fold(f64::NEG_INFINITY, f64::max);
        let pad = |lo: f64, hi: f64| {
            let span = (hi - lo).abs().max(1e-9);
            (lo - 0.06 * span, hi + 0.06 * span)
        };
        let (x0, x1) = if x0.is_finite() { pad(x0, x1) } else { (0.0, 1.0) };
        let (y0, y1) = if y0.is_finite() { pad(y0, y1) } else { (0.0, 1.0) };
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
    }

    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
    }
}

fn header(title: &str) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{tx}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{title}</text>
"#,
        tx = W / 2.0
    )
}

fn axes(f: &Frame, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        r#"<line x1="{ml}" y1="{hb}" x2="{wr}" y2="{hb}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{hb}" stroke="black"/>
"#,
        ml = ML,
        hb = H - MB,
        wr = W - MR,
        mt = MT
    ));
    for i in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        s.push_str(&format!(
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="10" text-anchor="middle">{v:.3}</text>
"#,
            x = f.px(fx),
            y = H - MB + 16.0,
            v = fx
        ));
        s.push_str(&format!(
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.3}</text>
"#,
            x = ML - 6.0,
            y = f.py(fy) + 3.0,
            v = fy
        ));
    }
    s.push_str(&format!(
        r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12" text-anchor="middle">{xlabel}</text>
<text x="16" y="{ym}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {ym})">{ylabel}</text>
"#,
        x = (ML + W - MR) / 2.0,
        y = H - 14.0,
        ym = (MT + H - MB) / 2.0
    ));
    s
}

/// Labeled scatter plot.
pub fn scatter_svg(points: &[(f64, f64, String)], xlabel: &str, ylabel: &str, title: &str) -> String {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let f = Frame::from_points(&xs, &ys);
    let mut s = header(title);
    s.push_str(&axes(&f, xlabel, ylabel));
    for (x, y, label) in points {
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        s.push_str(&format!(
            r#"<circle cx="{cx}" cy="{cy}" r="4" fill="steelblue"/>
<text x="{tx}" y="{ty}" font-family="sans-serif" font-size="9">{label}</text>
"#,
            cx = f.px(*x),
            cy = f.py(*y),
            tx = f.px(*x) + 6.0,
            ty = f.py(*y) - 5.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Reliability diagram: mean predicted vs mean observed per bin, with the
/// identity diagonal.
pub fn reliability_svg(mean_pred: &[f64], mean_true: &[f64], title: &str) -> String {
    let mut all: Vec<f64> = mean_pred.to_vec();
    all.extend_from_slice(mean_true);
    let f = Frame::from_points(&all, &all);
    let mut s = header(title);
    s.push_str(&axes(&f, "mean predicted (days)", "mean observed (days)"));
    s.push_str(&format!(
        r#"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="gray" stroke-dasharray="4 3"/>
"#,
        x1 = f.px(f.x0),
        y1 = f.py(f.x0),
        x2 = f.px(f.x1),
        y2 = f.py(f.x1)
    ));
    let mut path = String::new();
    for (i, (&p, &t)) in mean_pred.iter().zip(mean_true).enumerate() {
        if !p.is_finite() || !t.is_finite() {
            continue;
        }
        path.push_str(if i == 0 { "M" } else { "L" });
        path.push_str(&format!("{:.2} {:.2} ", f.px(p), f.py(t)));
        s.push_str(&format!(
            r#"<circle cx="{cx}" cy="{cy}" r="4" fill="crimson"/>
"#,
            cx = f.px(p),
            cy = f.py(t)
        ));
    }
    s.push_str(&format!(
        r#"<path d="{path}" fill="none" stroke="crimson" stroke-width="1.5"/>
"#
    ));
    s.push_str("</svg>\n");
    s
}

/// Vertical bar chart over labeled categories.
pub fn bars_svg(bars: &[(String, f64)], ylabel: &str, title: &str) -> String {
    let ys: Vec<f64> = bars.iter().map(|b| b.1).collect();
    let mut lo = ys.iter().cloned().filter(|v| v.is_finite()).fold(0.0f64, f64::min);
    let hi = ys.iter().cloned().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    if lo == hi {
        lo -= 1.0;
    }
    let f = Frame { x0: 0.0, x1: bars.len() as f64, y0: lo, y1: hi * 1.08 + 1e-9 };
    let mut s = header(title);
    s.push_str(&axes(&f, "", ylabel));
    let bw = (W - ML - MR) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        let x = ML + i as f64 * bw + 0.15 * bw;
        let y = f.py(v.max(0.0));
        let y_base = f.py(0.0f64.max(lo));
        s.push_str(&format!(
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="seagreen"/>
<text x="{tx:.2}" y="{ty}" font-family="sans-serif" font-size="10" text-anchor="middle">{label}</text>
"#,
            w = 0.7 * bw,
            h = (y_base - y).abs(),
            tx = x + 0.35 * bw,
            ty = H - MB + 16.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_outputs_are_well_formed() {
        let s = scatter_svg(
            &[(1.0, 2.0, "a".into()), (3.0, 1.0, "b".into())],
            "x",
            "y",
            "scatter",
        );
        assert!(s.starts_with("<svg"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<circle").count(), 2);

        let r = reliability_svg(&[1.0, 2.0, 3.0], &[1.1, 1.9, 3.2], "rel");
        assert!(r.contains("stroke-dasharray"));
        assert_eq!(r.matches("<circle").count(), 3);

        let b = bars_svg(&[("a".into(), 0.4), ("b".into(), 0.2)], "r2", "bars");
        assert_eq!(b.matches("<rect").count(), 3); // background + 2 bars
    }

    #[test]
    fn non_finite_points_are_skipped() {
        let s = scatter_svg(&[(f64::NAN, 1.0, "x".into())], "x", "y", "t");
        assert_eq!(s.matches("<circle").count(), 0);
    }
}
