//! Static SVG figures: signal panels, overlays, gate zoom and sweep curves.

use std::path::{Path, PathBuf};

use dabsim_core::pwm::{EdgeDirection, GateSchedule};
use dabsim_core::WaveformTrace;
use plotters::coord::Shift;
use plotters::prelude::*;

#[derive(Debug, thiserror::Error)]
#[error("cannot render {}: {message}", path.display())]
pub struct PlotError {
    pub path: PathBuf,
    pub message: String,
}

fn plot_err(path: &Path) -> impl Fn(String) -> PlotError + '_ {
    move |message| PlotError {
        path: path.to_path_buf(),
        message,
    }
}

/// Size and decimation settings.
#[derive(Debug, Clone, Copy)]
pub struct PlotStyle {
    pub panel_width: u32,
    pub panel_height: u32,
    /// Min/max buckets per series; peaks survive decimation.
    pub buckets: usize,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            panel_width: 640,
            panel_height: 220,
            buckets: 1200,
        }
    }
}

/// Plotted trace columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    InductorCurrent,
    OutputVoltage,
    CapacitorCurrent,
    DeadTime,
}

impl Signal {
    pub const ALL: [Signal; 4] = [
        Signal::InductorCurrent,
        Signal::OutputVoltage,
        Signal::CapacitorCurrent,
        Signal::DeadTime,
    ];

    /// Column name, also used in file names.
    pub fn column(&self) -> &'static str {
        match self {
            Signal::InductorCurrent => "i_l",
            Signal::OutputVoltage => "v_dc",
            Signal::CapacitorCurrent => "i_cap",
            Signal::DeadTime => "td",
        }
    }

    fn axis_label(&self) -> &'static str {
        match self {
            Signal::InductorCurrent => "i_L (A)",
            Signal::OutputVoltage => "v_dc (V)",
            Signal::CapacitorCurrent => "i_cap (A)",
            Signal::DeadTime => "td (us)",
        }
    }

    fn scale(&self) -> f64 {
        match self {
            Signal::DeadTime => 1e6,
            _ => 1.0,
        }
    }

    fn values<'a>(&self, trace: &'a WaveformTrace) -> &'a [f64] {
        match self {
            Signal::InductorCurrent => &trace.i_l,
            Signal::OutputVoltage => &trace.v_dc,
            Signal::CapacitorCurrent => &trace.i_cap,
            Signal::DeadTime => &trace.td,
        }
    }
}

/// Keeps the first, minimum, maximum and last point of each time bucket, in
/// time order.
pub fn decimate(t: &[f64], y: &[f64], buckets: usize) -> Vec<(f64, f64)> {
    let n = t.len().min(y.len());
    if n <= 4 * buckets.max(1) {
        return t.iter().zip(y).map(|(&a, &b)| (a, b)).collect();
    }
    let (t0, t1) = (t[0], t[n - 1]);
    let width = (t1 - t0) / buckets as f64;
    let mut out = Vec::with_capacity(4 * buckets);
    let mut start = 0;
    while start < n {
        let b = (((t[start] - t0) / width) as usize).min(buckets - 1);
        let edge = t0 + (b + 1) as f64 * width;
        let mut end = start + 1;
        while end < n && (t[end] < edge || b == buckets - 1) {
            end += 1;
        }
        let (mut lo, mut hi) = (start, start);
        for k in start..end {
            if y[k] < y[lo] {
                lo = k;
            }
            if y[k] > y[hi] {
                hi = k;
            }
        }
        let mut keep = [start, lo, hi, end - 1];
        keep.sort_unstable();
        let mut last = usize::MAX;
        for k in keep {
            if k != last {
                out.push((t[k], y[k]));
                last = k;
            }
        }
        start = end;
    }
    out
}

fn bounds(series: &[Vec<(f64, f64)>]) -> ((f64, f64), (f64, f64)) {
    let mut x = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(a, b) in s {
            x = (x.0.min(a), x.1.max(a));
            y = (y.0.min(b), y.1.max(b));
        }
    }
    if !x.0.is_finite() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    let pad = |(lo, hi): (f64, f64)| {
        let span = hi - lo;
        if span <= 0.0 {
            let d = lo.abs().max(1.0) * 0.05;
            (lo - d, hi + d)
        } else {
            (lo - 0.05 * span, hi + 0.05 * span)
        }
    };
    (if x.1 > x.0 { x } else { pad(x) }, pad(y))
}

const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(255, 127, 14),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn color(k: usize) -> RGBColor {
    COLORS[k % COLORS.len()]
}

fn draw_chart<DB: DrawingBackend>(
    area: &DrawingArea<DB, Shift>,
    caption: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    legend: bool,
) -> Result<(), String> {
    let data: Vec<_> = series.iter().map(|(_, s)| s.clone()).collect();
    let ((x0, x1), (y0, y1)) = bounds(&data);
    let mut chart = ChartBuilder::on(area)
        .caption(caption, ("sans-serif", 16))
        .margin(8)
        .x_label_area_size(32)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc("t (s)")
        .y_desc(y_label)
        .x_labels(6)
        .y_labels(5)
        .draw()
        .map_err(|e| e.to_string())?;
    for (k, (label, pts)) in series.iter().enumerate() {
        let c = color(k);
        let drawn = chart
            .draw_series(LineSeries::new(pts.iter().copied(), c.stroke_width(1)))
            .map_err(|e| e.to_string())?;
        if legend {
            drawn.label(label.as_str()).legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 16, y)], c.stroke_width(2))
            });
        }
    }
    if legend {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn series_of(signal: Signal, trace: &WaveformTrace, style: &PlotStyle) -> Vec<(f64, f64)> {
    let scale = signal.scale();
    decimate(&trace.t, signal.values(trace), style.buckets)
        .into_iter()
        .map(|(t, y)| (t, y * scale))
        .collect()
}

/// One column per trace, one row per signal (`i_l`, `v_dc`, `i_cap`, `td`).
pub fn render_panels(
    path: &Path,
    traces: &[(&str, &WaveformTrace)],
    style: &PlotStyle,
) -> Result<(), PlotError> {
    let err = plot_err(path);
    if traces.is_empty() {
        return Err(err("no traces".into()));
    }
    let cols = traces.len();
    let rows = Signal::ALL.len();
    let size = (
        style.panel_width * cols as u32,
        style.panel_height * rows as u32,
    );
    let root = SVGBackend::new(path, size).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let cells = root.split_evenly((rows, cols));
    for (r, signal) in Signal::ALL.iter().enumerate() {
        for (c, (label, trace)) in traces.iter().enumerate() {
            let s = vec![(label.to_string(), series_of(*signal, trace, style))];
            let caption = format!("{label}: {}", signal.column());
            draw_chart(
                &cells[r * cols + c],
                &caption,
                signal.axis_label(),
                &s,
                false,
            )
            .map_err(&err)?;
        }
    }
    root.present().map_err(|e| err(e.to_string()))
}

/// All traces of one signal on shared axes.
pub fn render_overlay(
    path: &Path,
    signal: Signal,
    traces: &[(&str, &WaveformTrace)],
    style: &PlotStyle,
) -> Result<(), PlotError> {
    let err = plot_err(path);
    if traces.is_empty() {
        return Err(err("no traces".into()));
    }
    let root = SVGBackend::new(path, (style.panel_width * 3 / 2, style.panel_height * 2))
        .into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let series: Vec<_> = traces
        .iter()
        .map(|(label, tr)| (label.to_string(), series_of(signal, tr, style)))
        .collect();
    draw_chart(&root, signal.column(), signal.axis_label(), &series, true).map_err(&err)?;
    root.present().map_err(|e| err(e.to_string()))
}

/// Step waveform of one gate over `[t0, t1]`.
fn gate_wave(sched: &GateSchedule, gate: u8, t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let mut level = 0.0;
    let mut pts = Vec::new();
    for e in sched.events.iter().filter(|e| e.gate == gate) {
        let v = match e.direction {
            EdgeDirection::Rising => 1.0,
            EdgeDirection::Falling => 0.0,
        };
        if e.t <= t0 {
            level = v;
            continue;
        }
        if e.t > t1 {
            break;
        }
        if pts.is_empty() {
            pts.push((t0, level));
        }
        pts.push((e.t, level));
        pts.push((e.t, v));
        level = v;
    }
    if pts.is_empty() {
        pts.push((t0, level));
    }
    pts.push((t1, level));
    pts
}

/// High-side gate, low-side gate of the first primary leg and the dead time
/// over `[t0, t0 + periods * T_sw]`.
pub fn render_gate_zoom(
    path: &Path,
    sched: &GateSchedule,
    t0: f64,
    periods: f64,
    style: &PlotStyle,
) -> Result<(), PlotError> {
    let err = plot_err(path);
    let t_sw = sched.period_ticks() as f64 / sched.clk;
    let t1 = t0 + periods * t_sw;
    let root = SVGBackend::new(path, (style.panel_width * 3 / 2, style.panel_height * 3))
        .into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let cells = root.split_evenly((3, 1));
    let high = vec![("gate 1".to_string(), gate_wave(sched, 1, t0, t1))];
    let low = vec![("gate 2".to_string(), gate_wave(sched, 2, t0, t1))];
    let n = 400;
    let td: Vec<_> = (0..=n)
        .map(|k| {
            let t = t0 + (t1 - t0) * k as f64 / n as f64;
            (t, sched.dead_time_at(t) * 1e6)
        })
        .collect();
    draw_chart(&cells[0], "primary leg A, high side", "gate", &high, false).map_err(&err)?;
    draw_chart(&cells[1], "primary leg A, low side", "gate", &low, false).map_err(&err)?;
    draw_chart(
        &cells[2],
        "dead time",
        "td (us)",
        &[("td".into(), td)],
        false,
    )
    .map_err(&err)?;
    root.present().map_err(|e| err(e.to_string()))
}

/// Metric curves against a swept parameter, one panel per metric.
pub fn render_sweep(
    path: &Path,
    key: &str,
    curves: &[(&str, Vec<(f64, f64)>)],
    style: &PlotStyle,
) -> Result<(), PlotError> {
    let err = plot_err(path);
    if curves.is_empty() {
        return Err(err("no curves".into()));
    }
    let root = SVGBackend::new(
        path,
        (style.panel_width, style.panel_height * curves.len() as u32),
    )
    .into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let cells = root.split_evenly((curves.len(), 1));
    for (cell, (name, pts)) in cells.iter().zip(curves) {
        let ((x0, x1), (y0, y1)) = bounds(std::slice::from_ref(pts));
        let mut chart = ChartBuilder::on(cell)
            .caption(format!("{name} vs {key}"), ("sans-serif", 16))
            .margin(8)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| err(e.to_string()))?;
        chart
            .configure_mesh()
            .x_desc(key)
            .y_desc(*name)
            .draw()
            .map_err(|e| err(e.to_string()))?;
        chart
            .draw_series(LineSeries::new(
                pts.iter().copied(),
                color(0).stroke_width(2),
            ))
            .map_err(|e| err(e.to_string()))?;
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color(0).filled())))
            .map_err(|e| err(e.to_string()))?;
    }
    root.present().map_err(|e| err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimation_keeps_extremes_and_order() {
        let t: Vec<f64> = (0..100_000).map(|k| k as f64 * 1e-5).collect();
        let mut y: Vec<f64> = t.iter().map(|x| (x * 50.0).sin()).collect();
        y[43_210] = 7.0;
        y[77_777] = -9.0;
        let d = decimate(&t, &y, 100);
        assert!(d.len() <= 400);
        assert!(d.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(d.contains(&(t[43_210], 7.0)));
        assert!(d.contains(&(t[77_777], -9.0)));
        assert_eq!(d.first(), Some(&(0.0, 0.0)));
        assert_eq!(d.last().unwrap().0, t[99_999]);
    }

    #[test]
    fn short_series_untouched() {
        let t = [0.0, 1.0, 2.0];
        let y = [1.0, 3.0, 2.0];
        assert_eq!(
            decimate(&t, &y, 10),
            vec![(0.0, 1.0), (1.0, 3.0), (2.0, 2.0)]
        );
    }
}
