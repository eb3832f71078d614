//! Small self-contained SVG line charts. CSV is the source of truth; these
//! are for a quick look.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{MetricsRow, SweepPoint};

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 300.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 160.0, 40.0, 50.0); // left, right, top, bottom

#[derive(Clone, Debug, Default)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Shaded `(x, low, high)` envelope drawn under the line.
    pub band: Option<Vec<(f64, f64, f64)>>,
}

#[derive(Clone, Debug, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl Chart {
    /// Renders charts stacked vertically into one SVG document.
    pub fn stack(charts: &[Chart]) -> String {
        let height = PANEL_HEIGHT * charts.len().max(1) as f64;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{height}\" \
             viewBox=\"0 0 {WIDTH} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for (k, chart) in charts.iter().enumerate() {
            chart.render_into(&mut svg, k as f64 * PANEL_HEIGHT);
        }
        svg.push_str("</svg>\n");
        svg
    }

    fn render_into(&self, svg: &mut String, top: f64) {
        let (ml, mr, mt, mb) = MARGIN;
        let (x0, x1) = (ml, WIDTH - mr);
        let (y0, y1) = (top + PANEL_HEIGHT - mb, top + mt);
        let ty = |y: f64| if self.log_y { y.log10() } else { y };
        let usable = |y: f64| y.is_finite() && (!self.log_y || y > 0.0);

        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() && usable(y) {
                    xs.push(x);
                    ys.push(ty(y));
                }
            }
            for &(x, lo, hi) in s.band.iter().flatten() {
                for y in [lo, hi] {
                    if x.is_finite() && usable(y) {
                        xs.push(x);
                        ys.push(ty(y));
                    }
                }
            }
        }
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>", (x0 + x1) / 2.0, top + 22.0, escape(&self.title));
        let _ = writeln!(svg, "<rect x=\"{x0}\" y=\"{y1}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>", x1 - x0, y0 - y1);
        if xs.is_empty() {
            let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#888\">no data</text>", (x0 + x1) / 2.0, (y0 + y1) / 2.0);
            return;
        }
        let (xmin, xmax) = padded_range(&xs, 0.0);
        let (ymin, ymax) = padded_range(&ys, 0.05);
        let px = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
        let py = |y: f64| y0 - (ty(y) - ymin) / (ymax - ymin) * (y0 - y1);

        for k in 0..=4 {
            let fx = xmin + (xmax - xmin) * k as f64 / 4.0;
            let fy = ymin + (ymax - ymin) * k as f64 / 4.0;
            let (sx, sy) = (x0 + (x1 - x0) * k as f64 / 4.0, y0 - (y0 - y1) * k as f64 / 4.0);
            let ylab = if self.log_y { 10f64.powf(fy) } else { fy };
            let _ = writeln!(svg, "<line x1=\"{sx}\" y1=\"{y0}\" x2=\"{sx}\" y2=\"{}\" stroke=\"#444\"/>", y0 + 4.0);
            let _ = writeln!(svg, "<text x=\"{sx}\" y=\"{}\" text-anchor=\"middle\">{}</text>", y0 + 16.0, tick(fx));
            let _ = writeln!(svg, "<line x1=\"{x0}\" y1=\"{sy}\" x2=\"{x1}\" y2=\"{sy}\" stroke=\"#ddd\"/>");
            let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", x0 - 6.0, sy + 4.0, tick(ylab));
        }
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", (x0 + x1) / 2.0, y0 + 36.0, escape(&self.x_label));
        let (lx, ly) = (x0 - 52.0, (y0 + y1) / 2.0);
        let _ = writeln!(svg, "<text x=\"{lx}\" y=\"{ly}\" text-anchor=\"middle\" transform=\"rotate(-90 {lx} {ly})\">{}</text>", escape(&self.y_label));

        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            if let Some(band) = &s.band {
                let pts: Vec<_> = band.iter().filter(|b| usable(b.1) && usable(b.2)).collect();
                if !pts.is_empty() {
                    let mut d = String::new();
                    for b in &pts {
                        let _ = write!(d, "{:.2},{:.2} ", px(b.0), py(b.2));
                    }
                    for b in pts.iter().rev() {
                        let _ = write!(d, "{:.2},{:.2} ", px(b.0), py(b.1));
                    }
                    let _ = writeln!(svg, "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.18\" stroke=\"none\"/>", d.trim_end());
                }
            }
            let mut d = String::new();
            for &(x, y) in s.points.iter().filter(|p| usable(p.1)) {
                let _ = write!(d, "{:.2},{:.2} ", px(x), py(y));
            }
            if s.points.len() <= 12 {
                for &(x, y) in s.points.iter().filter(|p| usable(p.1)) {
                    let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>", px(x), py(y));
                }
            }
            let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", d.trim_end());
            let ly = y1 + 14.0 + 16.0 * k as f64;
            let _ = writeln!(svg, "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>", x1 + 10.0, x1 + 30.0);
            let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{}</text>", x1 + 36.0, ly + 4.0, escape(&s.label));
        }
    }
}

fn padded_range(v: &[f64], pad: f64) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let m = (hi - lo) * pad;
    (lo - m, hi + m)
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Three panels: per-player error and residuals of the first run, then the
/// mean error over all runs with a ±1 std band across runs.
pub(super) fn curves(rows: &[MetricsRow], n_players: usize) -> String {
    let first = rows.first().map(|r| (r.garnet, r.resample));
    let run: Vec<&MetricsRow> = rows.iter().filter(|r| Some((r.garnet, r.resample)) == first).collect();
    let tag = first.map(|(g, r)| format!("garnet {g}, resample {r}")).unwrap_or_else(|| "no run".into());

    let players = (0..n_players)
        .map(|i| Series {
            label: format!("player {i}"),
            points: run.iter().filter_map(|r| r.errors.get(i).copied().flatten().map(|e| (r.epoch as f64, e))).collect(),
            band: None,
        })
        .collect();
    let residuals = vec![
        Series { label: "train".into(), points: run.iter().map(|r| (r.epoch as f64, r.train_residual)).collect(), band: None },
        Series {
            label: "test".into(),
            points: run.iter().filter_map(|r| r.test_residual.map(|t| (r.epoch as f64, t))).collect(),
            band: None,
        },
    ];

    let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if let Some(m) = r.mean_error {
            by_epoch.entry(r.epoch).or_default().push(m);
        }
    }
    let mut mean = Series { label: "mean over runs".into(), ..Series::default() };
    let mut band = Vec::new();
    for (epoch, v) in &by_epoch {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        mean.points.push((*epoch as f64, m));
        band.push((*epoch as f64, m - sd, m + sd));
    }
    mean.band = Some(band);

    Chart::stack(&[
        Chart {
            title: format!("Error vs best response ({tag})"),
            x_label: "epoch".into(),
            y_label: "error".into(),
            log_y: false,
            series: players,
        },
        Chart {
            title: format!("Empirical Bellman residual ({tag})"),
            x_label: "epoch".into(),
            y_label: "residual".into(),
            log_y: true,
            series: residuals,
        },
        Chart {
            title: "Error vs best response, all runs".into(),
            x_label: "epoch".into(),
            y_label: "mean error".into(),
            log_y: false,
            series: vec![mean],
        },
    ])
}

pub(super) fn sweep(points: &[SweepPoint]) -> String {
    let mut series = Series { label: "mean final error".into(), ..Series::default() };
    let mut band = Vec::new();
    for p in points {
        if let Some(m) = p.aggregate.mean_error {
            let sd = p.aggregate.run_std.unwrap_or(0.0);
            series.points.push((p.alpha, m));
            band.push((p.alpha, m - sd, m + sd));
        }
    }
    series.band = Some(band);
    Chart::stack(&[Chart {
        title: "Final error vs number of samples".into(),
        x_label: "samples per (state, action)".into(),
        y_label: "mean error".into(),
        log_y: false,
        series: vec![series],
    }])
}
