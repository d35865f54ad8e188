//! Smoothed learning curves as SVG plus a columnar text file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::ema_smooth;
use super::runlog::RunLog;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN: f64 = 60.0;
const LEGEND_WIDTH: f64 = 170.0;
const COLORS: [&str; 8] = [
    "#e6a817", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Curve {
    pub label: String,
    pub points: Vec<(usize, f64)>,
}

/// EMA-smoothed eval return against epoch, one curve per run.
pub fn curves(runs: &[RunLog], factor: f64) -> Result<Vec<Curve>> {
    if runs.is_empty() {
        return Err(Error::validation("runs", "nothing to plot"));
    }
    let env = runs[0].config_value("env");
    if runs.iter().any(|r| r.config_value("env") != env) {
        return Err(Error::MixedFamilies);
    }
    runs.iter()
        .map(|r| {
            let smooth = ema_smooth(&r.returns(), factor);
            Ok(Curve {
                label: format!("{} ({})", r.algorithm(), r.label),
                points: r.rows.iter().map(|row| row.epoch).zip(smooth).collect(),
            })
        })
        .collect()
}

pub fn render_svg(curves: &[Curve]) -> String {
    let all = curves.iter().flat_map(|c| c.points.iter());
    let (mut x_max, mut y_min, mut y_max) = (1usize, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-9 {
        y_max = y_min + 1.0;
    }
    let plot_w = WIDTH - 2.0 * MARGIN - LEGEND_WIDTH;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: usize| MARGIN + plot_w * x as f64 / x_max as f64;
    let sy = |y: f64| HEIGHT - MARGIN - plot_h * (y - y_min) / (y_max - y_min);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = MARGIN + plot_w
    );
    let _ = writeln!(
        s,
        r#"<line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{x:.1}" y="{y:.1}" text-anchor="middle" font-size="14">epoch</text>"#,
        x = MARGIN + plot_w / 2.0,
        y = HEIGHT - MARGIN / 3.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{x:.1}" y="{y:.1}" text-anchor="middle" font-size="14" transform="rotate(-90 {x:.1} {y:.1})">reward</text>"#,
        x = MARGIN / 3.0,
        y = MARGIN + plot_h / 2.0
    );
    for (v, anchor, x, y) in [
        (format!("{y_min:.1}"), "end", MARGIN - 5.0, HEIGHT - MARGIN),
        (format!("{y_max:.1}"), "end", MARGIN - 5.0, MARGIN + 4.0),
        ("0".to_string(), "middle", MARGIN, HEIGHT - MARGIN + 16.0),
        (x_max.to_string(), "middle", MARGIN + plot_w, HEIGHT - MARGIN + 16.0),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="11">{v}</text>"#
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 18.0 * i as f64;
        let lx = WIDTH - MARGIN - LEGEND_WIDTH + 20.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            lx + 25.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `# epoch <label>...` then one row per epoch; `nan` where a run has no value.
pub fn render_dat(curves: &[Curve]) -> String {
    let mut epochs: Vec<usize> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let mut s = String::from("# epoch");
    for c in curves {
        let _ = write!(s, "\t{}", c.label.replace(char::is_whitespace, "_"));
    }
    s.push('\n');
    for e in epochs {
        let _ = write!(s, "{e}");
        for c in curves {
            match c.points.iter().find(|p| p.0 == e) {
                Some(&(_, y)) => {
                    let _ = write!(s, "\t{y:.6}");
                }
                None => s.push_str("\tnan"),
            }
        }
        s.push('\n');
    }
    s
}

/// Writes `curves.svg` and `curves.dat` into `out_dir`.
pub fn emit_plot(runs: &[RunLog], factor: f64, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let curves = curves(runs, factor)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let svg = out_dir.join("curves.svg");
    let dat = out_dir.join("curves.dat");
    std::fs::write(&svg, render_svg(&curves)).map_err(|e| Error::io(&svg, e))?;
    std::fs::write(&dat, render_dat(&curves)).map_err(|e| Error::io(&dat, e))?;
    Ok((svg, dat))
}
