//! PNG charts. The bitmap backend is built without a font engine, so charts
//! carry no text; every chart writes the plotted numbers to a CSV next to
//! the PNG.

use std::path::Path;

use image::RgbImage;
use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::eval::CrossMatrix;
use crate::trainer::TrainingLog;

pub const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(127, 127, 127),
    RGBColor(23, 190, 207),
];

const W: u32 = 640;
const H: u32 = 480;

fn render_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Render(e.to_string())
}

fn draw_png(path: &Path, w: u32, h: u32, f: impl FnOnce(DrawingArea<BitMapBackend<'_>, plotters::coord::Shift>) -> Result<()>) -> Result<()> {
    let mut buf = vec![0u8; (w * h * 3) as usize];
    {
        let root = BitMapBackend::with_buffer(&mut buf, (w, h)).into_drawing_area();
        root.fill(&WHITE).map_err(render_err)?;
        f(root.clone())?;
        root.present().map_err(render_err)?;
    }
    let img = RgbImage::from_raw(w, h, buf).ok_or_else(|| Error::Render("buffer size".into()))?;
    img.save(path)?;
    Ok(())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn pad((lo, hi): (f64, f64)) -> std::ops::Range<f64> {
    let m = 0.05 * (hi - lo);
    lo - m..hi + m
}

/// One named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn write_series_csv(series: &[Series], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "x", "y"])?;
    for s in series {
        for (x, y) in &s.points {
            w.write_record([s.name.clone(), x.to_string(), y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Line chart with markers; writes `<stem>.png` and `<stem>.csv`.
pub fn line_chart(series: &[Series], stem: &Path) -> Result<()> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::Empty("chart series"));
    }
    let xr = pad(bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))));
    let yr = pad(bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))));
    draw_png(&stem.with_extension("png"), W, H, |root| {
        let mut chart = ChartBuilder::on(&root)
            .margin(20)
            .build_cartesian_2d(xr, yr)
            .map_err(render_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(0)
            .y_labels(0)
            .draw()
            .map_err(render_err)?;
        for (i, s) in series.iter().enumerate() {
            let c = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), c.stroke_width(2)))
                .map_err(render_err)?;
            chart
                .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, c.filled())))
                .map_err(render_err)?;
        }
        Ok(())
    })?;
    write_series_csv(series, &stem.with_extension("csv"))
}

/// Average accuracy against optimizer step, one line per log.
pub fn accuracy_series(logs: &[(String, &TrainingLog)]) -> Result<Vec<Series>> {
    logs.iter()
        .map(|(name, log)| {
            if log.evals.is_empty() {
                return Err(Error::Empty("training log"));
            }
            Ok(Series {
                name: name.clone(),
                points: log.evals.iter().map(|e| (e.step as f64, e.avg_acc)).collect(),
            })
        })
        .collect()
}

/// Mean accuracy over the last five epochs against training-set size.
pub fn data_volume_series(name: &str, runs: &[(usize, &TrainingLog)]) -> Result<Series> {
    let mut points = Vec::new();
    for (count, log) in runs {
        let rows: Vec<f64> = log.epoch_end_evals().map(|e| e.avg_acc).collect();
        if rows.is_empty() {
            return Err(Error::Empty("training log"));
        }
        let tail = &rows[rows.len().saturating_sub(5)..];
        points.push((*count as f64, tail.iter().sum::<f64>() / tail.len() as f64));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Series {
        name: name.into(),
        points,
    })
}

/// Grid of cells, darker for higher values in `[0, 1]`.
pub fn heatmap(m: &CrossMatrix, stem: &Path) -> Result<()> {
    let rows = m.acc.len();
    let cols = m.acc.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || m.acc.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidInput("matrix must be rectangular and non-empty".into()));
    }
    let cell = (480 / rows.max(cols)).max(8) as u32;
    draw_png(&stem.with_extension("png"), cell * cols as u32, cell * rows as u32, |root| {
        for (i, row) in m.acc.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                let (x0, y0) = ((j as u32 * cell) as i32, (i as u32 * cell) as i32);
                root.draw(&Rectangle::new(
                    [(x0, y0), (x0 + cell as i32, y0 + cell as i32)],
                    RGBColor(shade, shade, 255).filled(),
                ))
                .map_err(render_err)?;
            }
        }
        Ok(())
    })?;
    m.write_csv(&stem.with_extension("csv"))
}

/// Vertical bars; writes `<stem>.png` and `<stem>.csv`.
pub fn bar_chart(bars: &[(String, f64)], stem: &Path) -> Result<()> {
    if bars.is_empty() {
        return Err(Error::Empty("bar chart"));
    }
    let (lo, hi) = bounds(bars.iter().map(|b| b.1));
    let y0 = if lo >= 0.0 { 0.0 } else { lo };
    draw_png(&stem.with_extension("png"), W, H, |root| {
        let mut chart = ChartBuilder::on(&root)
            .margin(20)
            .build_cartesian_2d(0.0..bars.len() as f64, pad((y0, hi)))
            .map_err(render_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(0)
            .y_labels(0)
            .draw()
            .map_err(render_err)?;
        chart
            .draw_series(bars.iter().enumerate().map(|(i, (_, v))| {
                Rectangle::new(
                    [(i as f64 + 0.15, y0), (i as f64 + 0.85, *v)],
                    PALETTE[i % PALETTE.len()].filled(),
                )
            }))
            .map_err(render_err)?;
        Ok(())
    })?;
    let mut w = csv::Writer::from_path(stem.with_extension("csv"))?;
    w.write_record(["bar", "value"])?;
    for (name, v) in bars {
        w.write_record([name.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Scatter colored by group; writes `<stem>.png` and `<stem>.csv`.
pub fn scatter(points: &[[f64; 2]], groups: &[String], stem: &Path) -> Result<()> {
    if points.is_empty() || points.len() != groups.len() {
        return Err(Error::InvalidInput("scatter needs one group per point".into()));
    }
    let mut names: Vec<&String> = groups.iter().collect();
    names.sort();
    names.dedup();
    let xr = pad(bounds(points.iter().map(|p| p[0])));
    let yr = pad(bounds(points.iter().map(|p| p[1])));
    draw_png(&stem.with_extension("png"), W, W, |root| {
        let mut chart = ChartBuilder::on(&root)
            .margin(20)
            .build_cartesian_2d(xr, yr)
            .map_err(render_err)?;
        for (k, name) in names.iter().enumerate() {
            let c = PALETTE[k % PALETTE.len()];
            chart
                .draw_series(
                    points
                        .iter()
                        .zip(groups)
                        .filter(|(_, g)| g == name)
                        .map(|(p, _)| Circle::new((p[0], p[1]), 3, c.filled())),
                )
                .map_err(render_err)?;
        }
        Ok(())
    })?;
    let mut w = csv::Writer::from_path(stem.with_extension("csv"))?;
    w.write_record(["group", "x", "y"])?;
    for (p, g) in points.iter().zip(groups) {
        w.write_record([g.clone(), p[0].to_string(), p[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}
