//! PNG summary plots for a closed-loop run.
//!
//! Charts are drawn without text so the renderer needs no font backend;
//! each file holds the raw series only. Colors follow a fixed order so the
//! plots stay comparable across runs.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use plotters::style::full_palette::{GREY, ORANGE, PURPLE, TEAL};

const SPREAD_COLORS: [RGBColor; 4] = [GREY, ORANGE, PURPLE, TEAL];

use crate::error::{Error, Result};
use crate::harness::{RunRecord, RunRow};
use nalgebra::Vector3;

const SIZE: (u32, u32) = (800, 500);

/// File name plus the row and waypoint projections for one track plane.
type TrackPlane = (
    &'static str,
    fn(&RunRow) -> (f64, f64),
    fn(&Vector3<f64>) -> (f64, f64),
);

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

struct Figure {
    path: PathBuf,
    series: Vec<(Vec<(f64, f64)>, RGBColor)>,
    markers: Vec<(f64, f64)>,
    size: (u32, u32),
}

impl Figure {
    fn new(path: PathBuf) -> Self {
        Self {
            path,
            series: Vec::new(),
            markers: Vec::new(),
            size: SIZE,
        }
    }

    fn line(mut self, points: Vec<(f64, f64)>, color: RGBColor) -> Self {
        self.series.push((points, color));
        self
    }

    fn marks(mut self, points: Vec<(f64, f64)>) -> Self {
        self.markers = points;
        self
    }

    fn render(self) -> Result<PathBuf> {
        let xs = self
            .series
            .iter()
            .flat_map(|(pts, _)| pts.iter().map(|p| p.0))
            .chain(self.markers.iter().map(|p| p.0));
        let ys = self
            .series
            .iter()
            .flat_map(|(pts, _)| pts.iter().map(|p| p.1))
            .chain(self.markers.iter().map(|p| p.1));
        let (x0, x1) = padded_range(xs);
        let (y0, y1) = padded_range(ys);

        {
            let root = BitMapBackend::new(&self.path, self.size).into_drawing_area();
            root.fill(&WHITE).map_err(plot_err)?;
            let mut chart = ChartBuilder::on(&root)
                .margin(12)
                .build_cartesian_2d(x0..x1, y0..y1)
                .map_err(plot_err)?;
            for (points, color) in &self.series {
                chart
                    .draw_series(LineSeries::new(points.iter().copied(), color))
                    .map_err(plot_err)?;
            }
            chart
                .draw_series(
                    self.markers
                        .iter()
                        .map(|&(x, y)| Circle::new((x, y), 5, BLACK.filled())),
                )
                .map_err(plot_err)?;
            root.present().map_err(plot_err)?;
        }
        Ok(self.path)
    }
}

const INPUT_COLORS: [RGBColor; 4] = [BLUE, RED, GREEN, ORANGE];

/// Writes summary plots into `dir` and returns the files created.
///
/// Always emitted: `states.png` (position and yaw over time),
/// `controls.png` (the four applied inputs), `total_std.png` (first-guess
/// spread plus per-rotor posterior spread). When `waypoints` is given, plan
/// projections `track_xy.png`, `track_xz.png`, and `track_yz.png` follow,
/// with the waypoints marked.
pub fn emit_plots(
    record: &RunRecord,
    waypoints: Option<&[Vector3<f64>]>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let rows = &record.rows;
    let take = |f: &dyn Fn(&crate::harness::RunRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.t, f(r))).collect()
    };

    let mut written = Vec::new();

    written.push(
        Figure::new(dir.join("states.png"))
            .line(take(&|r| r.state.x), BLUE)
            .line(take(&|r| r.state.y), GREEN)
            .line(take(&|r| r.state.z), RED)
            .line(take(&|r| r.state.psi), PURPLE)
            .render()?,
    );

    let mut controls = Figure::new(dir.join("controls.png"));
    for (i, color) in INPUT_COLORS.iter().enumerate() {
        controls = controls.line(take(&|r| r.applied.0[i]), *color);
    }
    written.push(controls.render()?);

    let mut spread = Figure::new(dir.join("total_std.png"));
    for (i, color) in SPREAD_COLORS.iter().enumerate() {
        spread = spread.line(take(&|r| r.posterior_std[i]), *color);
    }
    written.push(spread.line(take(&|r| r.total_std), BLACK).render()?);

    if let Some(wps) = waypoints {
        let planes: [TrackPlane; 3] = [
            ("track_xy.png", |r| (r.state.x, r.state.y), |w| (w.x, w.y)),
            ("track_xz.png", |r| (r.state.x, r.state.z), |w| (w.x, w.z)),
            ("track_yz.png", |r| (r.state.y, r.state.z), |w| (w.y, w.z)),
        ];
        for (name, proj, wproj) in planes {
            written.push(
                Figure::new(dir.join(name))
                    .line(rows.iter().map(proj).collect(), TEAL)
                    .marks(wps.iter().map(wproj).collect())
                    .render()?,
            );
        }
    }
    Ok(written)
}
