//! Headless chart and heatmap rendering.

use std::fmt::Write as _;

use misfit_core::image::RawImage;
use misfit_core::metrics::{ComparisonTable, Metric};

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];
const MODALITIES: [(&str, &str); 2] = [("thermal", "vs thermal"), ("visual", "vs visual")];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bar chart of one metric: a group per modality, a bar per run.
pub fn metric_chart(table: &ComparisonTable, metric: Metric) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 160.0, 50.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;

    let cols: Vec<Option<usize>> = MODALITIES.iter().map(|(m, _)| table.column(metric, m)).collect();
    let values: Vec<Vec<f64>> = table
        .values
        .iter()
        .map(|row| cols.iter().map(|c| c.map_or(0.0, |j| row[j])).collect())
        .collect();
    let all = values.iter().flatten().copied();
    let lo = all.clone().fold(0.0, f64::min);
    let hi = all.fold(0.0, f64::max);
    let (lo, hi) = if hi - lo > 0.0 { (lo, hi * 1.05) } else { (lo, lo + 1.0) };
    let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let note = if metric.higher_is_better() { "higher is better" } else { "lower is better" };
    let scale = if table.normalized { ", normalised" } else { "" };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{} ({note}{scale})</text>"#,
        w / 2.0,
        escape(metric.label())
    );
    // Axis with five ticks.
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + plot_h);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#, y(0.0), left + plot_w);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y(v) + 4.0,
            format_tick(v)
        );
    }

    let groups = MODALITIES.len() as f64;
    let runs = table.rows.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = group_w * 0.8 / runs;
    for (g, (_, label)) in MODALITIES.iter().enumerate() {
        let gx = left + group_w * g as f64 + group_w * 0.1;
        for (r, row) in values.iter().enumerate() {
            let v = row[g];
            let (y0, y1) = (y(v.max(0.0)), y(v.min(0.0)));
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{}: {v}</title></rect>"#,
                gx + bar_w * r as f64,
                bar_w * 0.92,
                (y1 - y0).max(0.5),
                PALETTE[r % PALETTE.len()],
                escape(&table.rows[r])
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
            gx + group_w * 0.4,
            top + plot_h + 20.0
        );
    }
    for (r, name) in table.rows.iter().enumerate() {
        let ly = top + 18.0 * r as f64;
        let lx = left + plot_w + 16.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            PALETTE[r % PALETTE.len()],
            lx + 18.0,
            ly + 10.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Viridis-like colour ramp for a value in `[0, 1]`.
fn ramp(t: f32) -> [f32; 3] {
    const STOPS: [[f32; 3]; 5] = [
        [0.267, 0.005, 0.329],
        [0.230, 0.322, 0.546],
        [0.128, 0.567, 0.551],
        [0.369, 0.789, 0.383],
        [0.993, 0.906, 0.144],
    ];
    let x = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f32;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f, a[2] + (b[2] - a[2]) * f]
}

/// Colours a one-channel heatmap and enlarges it by nearest-neighbour
/// replication so each grid cell is `scale` pixels wide.
pub fn colorize(heat: &RawImage, scale: usize) -> RawImage {
    let (h, w) = heat.dims();
    let scale = scale.max(1);
    RawImage::from_fn(h * scale, w * scale, 3, |r, c, ch| ramp(heat.get(r / scale, c / scale, 0))[ch])
        .expect("ramp values lie in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use misfit_core::metrics::{build_comparison, MetricReport, ModalityPair, ReportMeta};

    fn report(id: &str, v: f64) -> MetricReport {
        let p = ModalityPair {
            vs_thermal: v,
            vs_visual: 2.0 * v,
        };
        MetricReport {
            mse: p,
            uqi: p,
            msssim: p,
            nmi: p,
            psnr: p,
            meta: ReportMeta {
                run_id: id.into(),
                ..Default::default()
            },
        }
    }

    #[test]
    fn chart_has_one_bar_per_run_and_modality() {
        let t = build_comparison(&[report("base", 0.5), report("no_kl", 0.25), report("a<b", 0.1)], true).unwrap();
        let svg = metric_chart(&t, Metric::Uqi);
        assert_eq!(svg.matches("<title>").count(), 6);
        assert!(svg.contains("a&lt;b") && svg.contains("UQI"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn colorize_scales_and_stays_in_range() {
        let heat = RawImage::from_fn(2, 3, 1, |r, c, _| (r * 3 + c) as f32 / 5.0).unwrap();
        let img = colorize(&heat, 4);
        assert_eq!(img.dims(), (8, 12));
        assert_eq!(img.channels(), 3);
        assert_eq!(img.get(0, 0, 0), ramp(0.0)[0]);
        assert_eq!(img.get(7, 11, 2), ramp(1.0)[2]);
    }
}
