//! Self-contained SVG line charts of equity curves.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};

pub struct Line<'a> {
    pub label: String,
    pub dates: &'a [NaiveDate],
    pub values: &'a [f64],
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Round tick step covering `span` in about five intervals.
fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

/// Equity lines against calendar time. With `log_scale` the vertical axis
/// is logarithmic; non-positive values are then clipped to the axis floor.
pub fn equity_chart(title: &str, lines: &[Line], log_scale: bool) -> String {
    let points = lines
        .iter()
        .flat_map(|l| l.dates.iter().zip(l.values.iter()))
        .filter(|(_, v)| v.is_finite() && (!log_scale || **v > 0.0));
    let (mut d0, mut d1) = (NaiveDate::MAX, NaiveDate::MIN);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (d, v) in points {
        d0 = d0.min(*d);
        d1 = d1.max(*d);
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if d0 > d1 {
        d0 = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        d1 = d0;
        (lo, hi) = (1.0, 1.0);
    }
    let tf = |v: f64| if log_scale { v.ln() } else { v };
    let (mut ylo, mut yhi) = (tf(lo), tf(hi));
    if yhi - ylo < 1e-9 {
        ylo -= 0.5;
        yhi += 0.5;
    }
    let pad = 0.05 * (yhi - ylo);
    ylo -= pad;
    yhi += pad;
    let days = ((d1 - d0).num_days().max(1)) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |d: NaiveDate| LEFT + plot_w * (d - d0).num_days() as f64 / days;
    let py = |v: f64| {
        let y = tf(if log_scale { v.max(lo) } else { v });
        TOP + plot_h * (1.0 - (y - ylo) / (yhi - ylo))
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );

    // vertical axis ticks
    let ticks: Vec<f64> = if log_scale {
        let (a, b) = (ylo.exp(), yhi.exp());
        let mut t = Vec::new();
        let mut e = a.log10().floor() as i32;
        while 10f64.powi(e) <= b * 10.0 {
            for m in [1.0, 2.0, 5.0] {
                let v = m * 10f64.powi(e);
                if v >= a && v <= b {
                    t.push(v);
                }
            }
            e += 1;
        }
        t
    } else {
        let step = nice_step(yhi - ylo);
        let mut v = (ylo / step).ceil() * step;
        let mut t = Vec::new();
        while v <= yhi {
            t.push(v);
            v += step;
        }
        t
    };
    for v in ticks {
        let y = TOP + plot_h * (1.0 - (tf(v) - ylo) / (yhi - ylo));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e0e0e0"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0,
        );
    }
    // horizontal axis: one tick per year, thinned to at most a dozen labels
    let years: Vec<i32> = (d0.year() + 1..=d1.year()).collect();
    let every = years.len().div_ceil(12).max(1);
    for y in years.iter().step_by(every) {
        let d = NaiveDate::from_ymd_opt(*y, 1, 1).unwrap();
        let x = px(d);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#f0f0f0"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{y}</text>"##,
            TOP + plot_h,
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">equity{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        if log_scale { " (log scale)" } else { "" }
    );

    for (i, line) in lines.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let dash = if i >= PALETTE.len() {
            r#" stroke-dasharray="4 3""#
        } else {
            ""
        };
        let mut pts = String::new();
        for (d, v) in line.dates.iter().zip(line.values) {
            if v.is_finite() {
                let _ = write!(pts, "{:.1},{:.1} ", px(*d), py(*v));
            }
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2"{dash} points="{}"/>"#,
            pts.trim_end()
        );
        let ly = TOP + 10.0 + 16.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&line.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let d0 = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let dates: Vec<NaiveDate> = (0..800).map(|i| d0 + chrono::Days::new(i)).collect();
        let a: Vec<f64> = (0..800).map(|i| 1.0 + i as f64 / 400.0).collect();
        let b: Vec<f64> = (0..800).map(|i| (i as f64 / 300.0).exp()).collect();
        let lines = [
            Line {
                label: "Buy&Hold".into(),
                dates: &dates,
                values: &a,
            },
            Line {
                label: "ARIMA".into(),
                dates: &dates,
                values: &b,
            },
        ];
        for log in [false, true] {
            let svg = equity_chart("demo", &lines, log);
            assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
            assert_eq!(svg.matches("<polyline").count(), 2);
            assert!(svg.contains("Buy&amp;Hold"));
            assert!(!svg.contains("NaN") && !svg.contains("inf"));
        }
    }

    #[test]
    fn empty_chart_still_renders() {
        let svg = equity_chart("nothing", &[], true);
        assert!(svg.contains("</svg>"));
    }
}
