//! Minimal self-contained SVG line plots. The CSV files remain the
//! canonical output; these exist so a run can be eyeballed without leaving
//! the terminal's working directory.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const SERIES_COLORS: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf",
];

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Axis scaling. Log plots take log10 of the y values and label ticks with
/// powers of ten; non-positive values are dropped from log plots.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum YScale {
    Linear,
    Log10,
}

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Option<Range> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo <= hi).then(|| {
            if lo == hi {
                // Degenerate span; widen so the single value sits mid-plot.
                Range { lo: lo - 0.5, hi: hi + 0.5 }
            } else {
                Range { lo, hi }
            }
        })
    }

    fn to_pixel(&self, v: f64, px_lo: f64, px_hi: f64) -> f64 {
        px_lo + (v - self.lo) / (self.hi - self.lo) * (px_hi - px_lo)
    }
}

fn fmt_tick(v: f64, log: bool) -> String {
    if log {
        return format!("1e{}", v.round() as i64);
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (0.01..10000.0).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

/// Renders one plot with shared x values per series. Returns None when no
/// series has two plottable points.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], y_scale: YScale) -> Option<String> {
    let log = y_scale == YScale::Log10;
    let mapped: Vec<(usize, Vec<(f64, f64)>)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let pts = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log || *y > 0.0))
                .map(|&(x, y)| (x, if log { y.log10() } else { y }))
                .collect();
            (i, pts)
        })
        .collect();

    let xr = Range::of(mapped.iter().flat_map(|(_, p)| p.iter().map(|&(x, _)| x)))?;
    let yr = Range::of(mapped.iter().flat_map(|(_, p)| p.iter().map(|&(_, y)| y)))?;
    if !mapped.iter().any(|(_, p)| p.len() >= 2) {
        return None;
    }

    let (px_l, px_r) = (MARGIN_L, WIDTH - MARGIN_R);
    let (px_b, px_t) = (HEIGHT - MARGIN_B, MARGIN_T);
    let x_of = |v: f64| xr.to_pixel(v, px_l, px_r);
    let y_of = |v: f64| yr.to_pixel(v, px_b, px_t);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#,
        WIDTH / 2.0
    );

    // Frame and ticks: five per axis, rounded for log scale so tick labels
    // stay at whole decades.
    let _ = write!(
        svg,
        r##"<rect x="{px_l}" y="{px_t}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        px_r - px_l,
        px_b - px_t
    );
    let n_ticks = 5;
    for k in 0..=n_ticks {
        let f = k as f64 / n_ticks as f64;
        let xv = xr.lo + f * (xr.hi - xr.lo);
        let x = x_of(xv);
        let _ = write!(
            svg,
            r##"<line x1="{x}" y1="{px_b}" x2="{x}" y2="{}" stroke="#444"/>"##,
            px_b + 5.0
        );
        let _ = write!(
            svg,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            px_b + 20.0,
            fmt_tick(xv, false)
        );

        let yv = if log {
            (yr.lo + f * (yr.hi - yr.lo)).round()
        } else {
            yr.lo + f * (yr.hi - yr.lo)
        };
        let y = y_of(yv);
        if y < px_t - 1.0 || y > px_b + 1.0 {
            continue;
        }
        let _ = write!(
            svg,
            r##"<line x1="{}" y1="{y}" x2="{px_l}" y2="{y}" stroke="#444"/>"##,
            px_l - 5.0
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            px_l - 9.0,
            y + 4.0,
            fmt_tick(yv, log)
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{x_label}</text>"#,
        (px_l + px_r) / 2.0,
        HEIGHT - 14.0
    );
    let _ = write!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {})">{y_label}</text>"#,
        (px_t + px_b) / 2.0,
        (px_t + px_b) / 2.0
    );

    for (i, pts) in &mapped {
        if pts.len() < 2 {
            continue;
        }
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let mut d = String::new();
        for (k, (x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, x_of(*x), y_of(*y));
        }
        let _ = write!(
            svg,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.6"/>"#,
            d.trim_end()
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            px_r - 150.0,
            px_t + 18.0 + 16.0 * *i as f64,
            series[*i].label
        );
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polylines_for_plain_data() {
        let s = [Series {
            label: "err",
            points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.1)],
        }];
        let svg = line_plot("t", "x", "y", &s, YScale::Linear).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<path"));
        assert!(svg.contains("err"));
    }

    #[test]
    fn log_plots_drop_nonpositive_points_and_label_decades() {
        let s = [Series {
            label: "e",
            points: vec![(0.0, 1.0), (1.0, 0.0), (2.0, 1e-4), (3.0, 1e-6)],
        }];
        let svg = line_plot("t", "x", "y", &s, YScale::Log10).unwrap();
        assert!(svg.contains("1e-"));
    }

    #[test]
    fn empty_or_degenerate_data_yields_none() {
        assert!(line_plot("t", "x", "y", &[], YScale::Linear).is_none());
        let one = [Series {
            label: "p",
            points: vec![(0.0, 1.0)],
        }];
        assert!(line_plot("t", "x", "y", &one, YScale::Linear).is_none());
        let neg = [Series {
            label: "n",
            points: vec![(0.0, -1.0), (1.0, -2.0)],
        }];
        assert!(line_plot("t", "x", "y", &neg, YScale::Log10).is_none());
    }
}
