use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::experiment::SummaryRow;
use crate::backbone::Depth;
use crate::cotuning::Mode;
use crate::ingest::Task;
use crate::{Error, Result};

/// One written chart.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFile {
    pub path: PathBuf,
    pub task: Task,
    pub n_bars: usize,
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

fn color(i: usize) -> RGBColor {
    let c = colorous::TABLEAU10[i % colorous::TABLEAU10.len()];
    RGBColor(c.r, c.g, c.b)
}

/// Grouped bar charts of mean average score with one-std error bars: one
/// SVG per task, depths along x and one bar per mode. An empty summary
/// writes nothing.
pub fn emit_plots(rows: &[SummaryRow], out_dir: &Path) -> Result<Vec<PlotFile>> {
    if rows.is_empty() {
        log::warn!("no results to plot");
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut by_task: BTreeMap<&str, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        by_task.entry(r.task.as_str()).or_default().push(r);
    }
    let mut files = Vec::new();
    for (name, group) in by_task {
        let path = out_dir.join(format!("{name}_score.svg"));
        let n_bars = draw(&path, name, &group)?;
        files.push(PlotFile { path, task: group[0].task, n_bars });
    }
    Ok(files)
}

fn draw(path: &Path, title: &str, rows: &[&SummaryRow]) -> Result<usize> {
    let depths: Vec<Depth> = Depth::ALL.iter().copied().filter(|d| rows.iter().any(|r| r.depth == *d)).collect();
    let modes: Vec<Mode> = Mode::ALL.iter().copied().filter(|m| rows.iter().any(|r| r.mode == *m)).collect();
    let width = 0.8 / modes.len() as f64;
    let top = rows.iter().map(|r| r.score_mean + r.score_std).fold(0.0f64, f64::max).max(1.0);

    let root = SVGBackend::new(path, (900, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{title}: average score"), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(-0.5f64..depths.len() as f64 - 0.5, 0.0f64..top * 1.05)
        .map_err(plot_err)?;
    let labels = depths.clone();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(depths.len() + 1)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < labels.len() {
                labels[i as usize].to_string()
            } else {
                String::new()
            }
        })
        .y_desc("AS")
        .draw()
        .map_err(plot_err)?;

    let mut n_bars = 0;
    for (mi, mode) in modes.iter().enumerate() {
        let fill = color(mi);
        let bars: Vec<(f64, &SummaryRow)> = rows
            .iter()
            .filter(|r| r.mode == *mode)
            .filter_map(|r| depths.iter().position(|d| *d == r.depth).map(|di| (di as f64 - 0.4 + width * mi as f64, *r)))
            .collect();
        n_bars += bars.len();
        chart
            .draw_series(bars.iter().map(|(x0, r)| Rectangle::new([(*x0, 0.0), (x0 + width, r.score_mean)], fill.filled())))
            .map_err(plot_err)?
            .label(mode.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], fill.filled()));
        chart
            .draw_series(bars.iter().map(|(x0, r)| {
                let xc = x0 + width / 2.0;
                PathElement::new(vec![(xc, r.score_mean - r.score_std), (xc, r.score_mean + r.score_std)], BLACK)
            }))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(n_bars)
}
