use std::path::Path;

use jetforge::hpo::Trial;
use plotters::prelude::*;

use crate::CliError;

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

/// Accuracy against FLOPs (log axis): front in red, other feasible trials
/// grey, infeasible trials light grey.
pub fn pareto_svg(path: &Path, trials: &[Trial], front: &[Trial]) -> Result<(), CliError> {
    let pts: Vec<(f64, f64, u64)> = trials
        .iter()
        .filter_map(|t| Some((t.flops()? as f64, t.accuracy()?, t.id)))
        .collect();
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (fx0, fx1) = pts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (ay0, ay1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (fx0, fx1) = if pts.is_empty() { (1.0, 10.0) } else { (fx0.max(1.0) / 1.5, fx1 * 1.5) };
    let (ay0, ay1) = if pts.is_empty() { (0.0, 1.0) } else { (ay0 - 0.01, ay1 + 0.01) };
    let mut chart = ChartBuilder::on(&root)
        .caption("Pareto front", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((fx0..fx1).log_scale(), ay0..ay1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("FLOPs")
        .y_desc("validation accuracy")
        .draw()
        .map_err(plot_err)?;
    let on_front = |id: u64| front.iter().any(|f| f.id == id);
    let grey = RGBColor(150, 150, 150);
    let light = RGBColor(210, 210, 210);
    let style = |p: &(f64, f64, u64)| {
        let feasible = trials.iter().any(|t| t.id == p.2 && t.is_feasible());
        if on_front(p.2) {
            RED.filled()
        } else if feasible {
            grey.filled()
        } else {
            light.filled()
        }
    };
    chart
        .draw_series(pts.iter().map(|p| Circle::new((p.0, p.1), 4, style(p))))
        .map_err(plot_err)?;
    let mut line: Vec<(f64, f64)> = front
        .iter()
        .filter_map(|t| Some((t.flops()? as f64, t.accuracy()?)))
        .collect();
    line.sort_by(|a, b| a.0.total_cmp(&b.0));
    chart.draw_series(LineSeries::new(line, &RED)).map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Hypervolume against trial count.
pub fn hv_svg(path: &Path, curve: &[(usize, f64)]) -> Result<(), CliError> {
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = curve.len().max(2) as f64;
    let top = curve.iter().map(|c| c.1).fold(0.0, f64::max).max(1e-3) * 1.05;
    let mut chart = ChartBuilder::on(&root)
        .caption("Hypervolume", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..n, 0.0..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("trials")
        .y_desc("HV")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(curve.iter().map(|&(k, hv)| (k as f64, hv)), &BLUE))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
