//! Metric series extraction, CSV and SVG emission, trend lines.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use plotters::prelude::*;
use toolgraph_rl::sim::IterationMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Reward,
    Entropy,
    GraphGrowth,
}

impl PlotKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            PlotKind::Reward => "reward",
            PlotKind::Entropy => "entropy",
            PlotKind::GraphGrowth => "graph_growth",
        }
    }

    /// Named series; the first is the one the trend line is fitted to.
    pub fn series(self, m: &[IterationMetrics]) -> Vec<(&'static str, Vec<f64>)> {
        let col = |f: fn(&IterationMetrics) -> f64| m.iter().map(f).collect::<Vec<_>>();
        match self {
            PlotKind::Reward => {
                vec![("mean_return", col(|x| x.mean_return)), ("success_rate", col(|x| x.success_rate))]
            }
            PlotKind::Entropy => vec![("entropy", col(|x| x.entropy)), ("kl", col(|x| x.kl))],
            PlotKind::GraphGrowth => vec![
                ("node_count", col(|x| x.node_count as f64)),
                ("edge_count", col(|x| x.edge_count as f64)),
                ("component_count", col(|x| x.component_count as f64)),
                ("largest_component_size", col(|x| x.largest_component_size as f64)),
            ],
        }
    }
}

pub fn read_metrics(reader: impl BufRead) -> Result<Vec<IterationMetrics>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("metrics line {}", i + 1))?);
    }
    Ok(out)
}

/// Least-squares slope of `ys` against `0..n`; zero for fewer than two points.
pub fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (num, den) = ys.iter().enumerate().fold((0.0, 0.0), |(num, den), (i, y)| {
        let dx = i as f64 - mx;
        (num + dx * (y - my), den + dx * dx)
    });
    num / den
}

pub fn to_csv(iterations: &[u64], series: &[(&str, Vec<f64>)]) -> String {
    let mut out = String::from("iteration");
    for (name, _) in series {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for (row, it) in iterations.iter().enumerate() {
        let _ = write!(out, "{it}");
        for (_, ys) in series {
            let _ = write!(out, ",{}", ys[row]);
        }
        out.push('\n');
    }
    out
}

pub fn render_svg(path: &Path, title: &str, iterations: &[u64], series: &[(&str, Vec<f64>)]) -> Result<()> {
    if iterations.is_empty() {
        bail!("no metrics to plot");
    }
    let x0 = iterations[0] as f64;
    let x1 = (*iterations.last().expect("non-empty") as f64).max(x0 + 1.0);
    let all = series.iter().flat_map(|(_, ys)| ys.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let pad = ((hi - lo) * 0.05).max(1e-6);
    let root = SVGBackend::new(path, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, (lo - pad)..(hi + pad))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    chart.configure_mesh().x_desc("iteration").draw().map_err(|e| anyhow::anyhow!("{e}"))?;
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                iterations.iter().zip(ys).map(|(x, y)| (*x as f64, *y)),
                color.stroke_width(2),
            ))
            .map_err(|e| anyhow::anyhow!("{e}"))?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    let (name, ys) = &series[0];
    let b = slope(ys);
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let mx = (ys.len() as f64 - 1.0) / 2.0;
    let trend = iterations.iter().enumerate().map(|(i, x)| (*x as f64, my + b * (i as f64 - mx)));
    chart
        .draw_series(LineSeries::new(trend, BLACK.stroke_width(1)))
        .map_err(|e| anyhow::anyhow!("{e}"))?
        .label(format!("{name} trend"))
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], BLACK));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(())
}
