//! Minimal SVG rendering of metric curves and field heatmaps.
//!
//! Output is a pure function of the input tables; all coordinates are
//! printed with fixed precision so reruns are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::io::{write_text, Table};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Anchors of a perceptually ordered colour map, dark to light.
const COLORMAP: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let i = (t.floor() as usize).min(COLORMAP.len() - 2);
    let f = t - i as f64;
    let c: Vec<u8> = (0..3)
        .map(|k| (COLORMAP[i][k] + f * (COLORMAP[i + 1][k] - COLORMAP[i][k])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    (lo, hi)
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo > 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{:.0}", v)
    } else {
        format!("{v:.3}")
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

/// Axes box with `ticks` labels per axis. `flip_y` puts `y.0` at the top.
fn axes(out: &mut String, x: (f64, f64), y: (f64, f64), x_label: &str, y_label: &str, flip_y: bool) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    let ticks = 5;
    for i in 0..=ticks {
        let f = i as f64 / ticks as f64;
        let px = x0 + f * (x1 - x0);
        let vx = x.0 + f * (x.1 - x.0);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{y1:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y1 + 5.0,
            y1 + 18.0,
            label(vx)
        );
        let py = y1 - f * (y1 - y0);
        let vy = if flip_y {
            y.1 - f * (y.1 - y.0)
        } else {
            y.0 + f * (y.1 - y.0)
        };
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            label(vy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// A named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line plot. The x axis spans exactly the data's x range.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (xl, xh) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let x = if xh > xl { (xl, xh) } else { (xl, xl + 1.0) };
    let (yl, yh) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let y = padded(yl, yh);
    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, x, y, x_label, y_label, false);
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    for (k, s) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| {
                format!(
                    "{:.2},{:.2}",
                    x0 + (p.0 - x.0) / (x.1 - x.0) * (x1 - x0),
                    y1 - (p.1 - y.0) / (y.1 - y.0) * (y1 - y0)
                )
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{c}" stroke-width="1.8" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = y0 + 16.0 + 18.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            x1 + 10.0,
            x1 + 30.0,
            x1 + 35.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Regular grid of values, rows along depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub ranges: Vec<f64>,
    pub depths: Vec<f64>,
    /// `values[i * ranges.len() + j]` at `(ranges[j], depths[i])`.
    pub values: Vec<f64>,
}

impl Grid {
    /// Rebuilds a grid from long-format `range, depth, value` columns.
    pub fn from_table(table: &Table, value: &str) -> Result<Self> {
        let r = table.column("range")?;
        let d = table.column("depth")?;
        let v = table.column(value)?;
        let uniq = |xs: &[f64]| {
            let mut u = xs.to_vec();
            u.sort_by(f64::total_cmp);
            u.dedup();
            u
        };
        let ranges = uniq(&r);
        let depths = uniq(&d);
        let mut values = vec![f64::NAN; ranges.len() * depths.len()];
        for ((ri, di), vi) in r.iter().zip(&d).zip(&v) {
            let j = ranges.partition_point(|x| x < ri);
            let i = depths.partition_point(|x| x < di);
            values[i * ranges.len() + j] = *vi;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Table {
                path: table.path.clone(),
                message: "range/depth rows do not form a full grid".into(),
            });
        }
        Ok(Self { ranges, depths, values })
    }

    /// Cell edges along an axis from its midpoints, starting at zero when
    /// the first midpoint is half a cell from it.
    fn edges(mids: &[f64]) -> Vec<f64> {
        if mids.len() == 1 {
            return vec![0.0, 2.0 * mids[0].max(0.5)];
        }
        let mut e = Vec::with_capacity(mids.len() + 1);
        e.push(mids[0] - (mids[1] - mids[0]) / 2.0);
        for w in mids.windows(2) {
            e.push((w[0] + w[1]) / 2.0);
        }
        let n = mids.len();
        e.push(mids[n - 1] + (mids[n - 1] - mids[n - 2]) / 2.0);
        e
    }
}

/// Heatmap over range × depth (depth downwards) with an optional track.
pub fn heatmap(title: &str, unit: &str, grid: &Grid, track: Option<&[(f64, f64)]>) -> String {
    let re = Grid::edges(&grid.ranges);
    let de = Grid::edges(&grid.depths);
    let x = (re[0].min(0.0), *re.last().unwrap());
    let y = (de[0].min(0.0), *de.last().unwrap());
    let (lo, hi) = extent(grid.values.iter().copied());
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let px = |r: f64| x0 + (r - x.0) / (x.1 - x.0) * (x1 - x0);
    let py = |d: f64| y0 + (d - y.0) / (y.1 - y.0) * (y1 - y0);
    let norm = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };

    let mut out = String::new();
    open(&mut out, title);
    let _ = writeln!(out, r#"<g shape-rendering="crispEdges">"#);
    let nr = grid.ranges.len();
    for (i, w) in de.windows(2).enumerate() {
        for (j, u) in re.windows(2).enumerate() {
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                px(u[0]),
                py(w[0]),
                px(u[1]) - px(u[0]),
                py(w[1]) - py(w[0]),
                color(norm(grid.values[i * nr + j]))
            );
        }
    }
    out.push_str("</g>\n");
    if let Some(track) = track {
        let pts: Vec<String> = track
            .iter()
            .map(|(r, d)| format!("{:.2},{:.2}", px(*r), py(*d)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="white" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
    }
    axes(&mut out, x, y, "range (m)", "depth (m)", true);
    // Colour bar.
    let bx = x1 + 20.0;
    let steps = 32;
    for k in 0..steps {
        let f = k as f64 / steps as f64;
        let h = (y1 - y0) / steps as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.1}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            y1 - (k + 1) as f64 * h,
            h + 0.05,
            color(f + 0.5 / steps as f64)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}">{}</text><text x="{:.1}" y="{:.1}">{}</text><text x="{:.1}" y="{:.1}">{}</text>"#,
        bx + 20.0,
        y0 + 8.0,
        label(hi),
        bx + 20.0,
        y1,
        label(lo),
        bx,
        y0 - 8.0,
        escape(unit)
    );
    out.push_str("</svg>\n");
    out
}

/// Per-step mean of `column` over all runs in a `metrics.csv` table.
fn step_means(table: &Table, column: &str) -> Result<Vec<(f64, f64)>> {
    let steps = table.column("step")?;
    let values = table.column(column)?;
    let mut acc: Vec<(f64, f64, usize)> = Vec::new();
    for (s, v) in steps.iter().zip(values) {
        match acc.iter_mut().find(|a| a.0 == *s) {
            Some(a) => {
                a.1 += v;
                a.2 += 1;
            }
            None => acc.push((*s, v, 1)),
        }
    }
    acc.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(acc.into_iter().map(|(s, v, n)| (s, v / n as f64)).collect())
}

const METRICS: [(&str, &str, &str); 3] = [
    ("rrmse", "RRMSE", "mean_rrmse"),
    ("ssim", "SSIM", "mean_ssim"),
    ("total_variance", "total variance", "mean_total_variance"),
];

/// Renders every recognised table in `input` into `output`.
///
/// `metrics.csv` gives per-step mean curves; subdirectories holding a
/// `summary.csv` are overlaid as one series each; `field_true.csv`,
/// `field_est.csv` and `tl_field.csv` become heatmaps, with the track from
/// `trajectory.csv` when present.
pub fn render_dir(input: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Err(Error::Table {
            path: input.to_path_buf(),
            message: "input directory does not exist".into(),
        });
    }
    let mut written = Vec::new();
    let mut emit = |name: &str, svg: String| -> Result<()> {
        let path = output.join(name);
        write_text(&path, &svg)?;
        written.push(path);
        Ok(())
    };

    let metrics = input.join("metrics.csv");
    if metrics.exists() {
        let t = Table::read(&metrics)?;
        for (col, title, _) in METRICS {
            let s = Series {
                name: "mean".into(),
                points: step_means(&t, col)?,
            };
            emit(
                &format!("{col}.svg"),
                line_plot(&format!("{title} vs step"), "step", title, &[s]),
            )?;
        }
    }

    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.csv").exists())
        .collect();
    subdirs.sort();
    if !subdirs.is_empty() {
        let tables = subdirs
            .iter()
            .map(|d| Table::read(&d.join("summary.csv")))
            .collect::<Result<Vec<_>>>()?;
        for (col, title, mean_col) in METRICS {
            let series = subdirs
                .iter()
                .zip(&tables)
                .map(|(d, t)| {
                    let name = d
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    let x = t.column("step")?;
                    let y = t.column(mean_col)?;
                    Ok(Series {
                        name,
                        points: x.into_iter().zip(y).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            emit(
                &format!("{col}_by_configuration.svg"),
                line_plot(&format!("mean {title} vs step"), "step", title, &series),
            )?;
        }
    }

    let track = {
        let p = input.join("trajectory.csv");
        if p.exists() {
            let t = Table::read(&p)?;
            Some(
                t.column("range")?
                    .into_iter()
                    .zip(t.column("depth")?)
                    .collect::<Vec<_>>(),
            )
        } else {
            None
        }
    };
    for (file, value, title, unit) in [
        ("field_true.csv", "speed", "true sound speed", "m/s"),
        ("field_est.csv", "speed", "estimated sound speed", "m/s"),
        ("tl_field.csv", "tl", "transmission loss", "dB"),
    ] {
        let p = input.join(file);
        if p.exists() {
            let grid = Grid::from_table(&Table::read(&p)?, value)?;
            let stem = file.trim_end_matches(".csv");
            emit(&format!("{stem}.svg"), heatmap(title, unit, &grid, track.as_deref()))?;
        }
    }

    if written.is_empty() {
        return Err(Error::Table {
            path: input.to_path_buf(),
            message: "no plottable tables found".into(),
        });
    }
    Ok(written)
}
