//! Minimal SVG charts for ROC staircases and recall bars.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{MARGIN} {MARGIN} V{} H{}" fill="none" stroke="black"/>"#,
        H - MARGIN,
        W - MARGIN
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = H - MARGIN - v * (H - 2.0 * MARGIN);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, MARGIN - 4.0, y + 4.0);
    }
    s
}

fn legend(s: &mut String, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let x = W - MARGIN - 150.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="{:.1}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y:.1}">{}</text>"#, x + 14.0, escape(l));
    }
}

/// Staircase curves `(e, μ)` from `(0, 0)`, drawn flat to `e_max`.
pub fn roc_svg(title: &str, curves: &[(String, Vec<(f64, f64)>)], e_max: f64) -> String {
    let mut s = frame(title, "eFPR (per hour)", "effective TPR");
    let px = |e: f64| MARGIN + (e / e_max).clamp(0.0, 1.0) * (W - 2.0 * MARGIN);
    let py = |m: f64| H - MARGIN - m.clamp(0.0, 1.0) * (H - 2.0 * MARGIN);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{e_max}</text>"#, W - MARGIN, H - MARGIN + 14.0);
    for (i, (_, steps)) in curves.iter().enumerate() {
        let mut d = format!("M{:.1} {:.1}", px(0.0), py(0.0));
        let mut last = 0.0;
        for &(e, m) in steps {
            let _ = write!(d, " H{:.1} V{:.1}", px(e), py(m));
            last = m;
        }
        let _ = write!(d, " H{:.1} V{:.1}", px(e_max), py(last));
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.5"/>"#, PALETTE[i % PALETTE.len()]);
    }
    legend(&mut s, &curves.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Grouped bars: one group per entry of `groups`, one bar per series.
/// `values[series][group]` in [0, 1].
pub fn bars_svg(title: &str, groups: &[String], series: &[String], values: &[Vec<f64>]) -> String {
    let mut s = frame(title, "condition", "macro recall");
    let gw = (W - 2.0 * MARGIN) / groups.len().max(1) as f64;
    let bw = gw * 0.8 / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let x0 = MARGIN + g as f64 * gw + gw * 0.1;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x0 + gw * 0.4, H - MARGIN + 14.0, escape(name));
        for (k, vals) in values.iter().enumerate() {
            let v = vals.get(g).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let h = v * (H - 2.0 * MARGIN);
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
                x0 + k as f64 * bw,
                H - MARGIN - h,
                bw * 0.9,
                PALETTE[k % PALETTE.len()]
            );
        }
    }
    legend(&mut s, series);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svgs_are_well_formed_enough() {
        let r = roc_svg("P1 <clean>", &[("#1".into(), vec![(0.0, 0.0), (10.0, 0.5)])], 100.0);
        assert!(r.starts_with("<svg") && r.trim_end().ends_with("</svg>"));
        assert!(r.contains("&lt;clean&gt;"));
        let b = bars_svg("recall", &["10".into(), "5".into()], &["a".into(), "b".into()], &[vec![0.5, 1.0], vec![0.2, 0.3]]);
        assert_eq!(b.matches("<rect").count(), 1 + 4 + 2);
    }
}
