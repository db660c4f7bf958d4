//! Scenario execution: single runs, strategy comparison and parameter sweeps.
//!
//! Scenarios run on scoped worker threads. Each writes only its own files;
//! tables and overlays are assembled after the join.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use dabsim_core::analysis::METRICS_CSV_HEADER;
use dabsim_core::pwm::build_gate_schedule;
use dabsim_core::{
    compute_metrics, simulate, ConverterState, SolverError, StartupMetrics, WaveformTrace,
};

use crate::config::{sweep_key, ConfigError, Scenario};
use crate::plot::{self, PlotError, PlotStyle, Signal};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Solver(#[from] SolverError),
    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Plot(#[from] PlotError),
    #[error("{0}")]
    Batch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Applies `f` to every item on up to `available_parallelism` threads,
/// preserving order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new(items.iter().map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(k) else { break };
                let r = f(item);
                results.lock().expect("worker panicked")[k] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every item visited"))
        .collect()
}

/// Simulated trace and its metrics.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: WaveformTrace,
    pub metrics: StartupMetrics,
}

/// Simulates a scenario from zero initial state.
pub fn simulate_scenario(sc: &Scenario) -> Result<RunOutput, RunError> {
    let sched = sc.schedule()?;
    let trace = simulate(
        &sc.params,
        &sc.pwm,
        &sched,
        &sc.solver,
        sc.t_end,
        ConverterState::default(),
    )?;
    let metrics = compute_metrics(&trace, sc.v_target());
    Ok(RunOutput { trace, metrics })
}

fn write_trace(path: &Path, trace: &WaveformTrace) -> Result<(), RunError> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    trace
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(io_err(path))
}

fn create_dir(dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Files written by [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub trace_csv: PathBuf,
    pub metrics_csv: PathBuf,
    pub panels_svg: PathBuf,
    pub gates_svg: PathBuf,
    pub config: PathBuf,
}

/// Runs one scenario and writes, under its output directory,
/// `<name>.csv` (trace), `<name>_metrics.csv`, `<name>.svg` (signal panels),
/// `<name>_gates.svg` (gate zoom at the enable instant) and `<name>.cfg`
/// (the resolved configuration).
pub fn run_scenario(sc: &Scenario, style: &PlotStyle) -> Result<(RunOutput, RunFiles), RunError> {
    let out = simulate_scenario(sc)?;
    let dir = &sc.output_dir;
    create_dir(dir)?;
    let files = RunFiles {
        trace_csv: dir.join(format!("{}.csv", sc.name)),
        metrics_csv: dir.join(format!("{}_metrics.csv", sc.name)),
        panels_svg: dir.join(format!("{}.svg", sc.name)),
        gates_svg: dir.join(format!("{}_gates.svg", sc.name)),
        config: dir.join(format!("{}.cfg", sc.name)),
    };
    write_trace(&files.trace_csv, &out.trace)?;
    write_text(
        &files.metrics_csv,
        &format!("{METRICS_CSV_HEADER}\n{}\n", out.metrics.csv_row(&sc.name)),
    )?;
    write_text(&files.config, &sc.to_config_string())?;
    plot::render_panels(&files.panels_svg, &[(sc.name.as_str(), &out.trace)], style)?;

    let zoom_end = (sc.t_enable + 6.0 * sc.pwm.effective_period()).min(sc.t_end);
    let sched = sc.schedule()?;
    let gates = build_gate_schedule(&sc.pwm, &sched, zoom_end).map_err(SolverError::from)?;
    let t0 = sc.t_enable.min(zoom_end);
    let periods = ((zoom_end - t0) / sc.pwm.effective_period()).min(5.0);
    if periods > 0.0 {
        plot::render_gate_zoom(&files.gates_svg, &gates, t0, periods, style)?;
    }
    Ok((out, files))
}

/// One row of a batch table.
#[derive(Debug, Clone)]
pub struct BatchRow {
    pub label: String,
    pub result: Result<StartupMetrics, String>,
}

impl BatchRow {
    fn csv_line(&self) -> String {
        match &self.result {
            Ok(m) => format!("{},ok", m.csv_row(&self.label)),
            Err(e) => {
                let empty = ",".repeat(METRICS_CSV_HEADER.split(',').count() - 1);
                format!(
                    "{}{empty},error: {}",
                    self.label,
                    e.replace([',', '\n'], ";")
                )
            }
        }
    }
}

/// Batch table with a trailing `status` column.
pub fn batch_table(rows: &[BatchRow]) -> String {
    let mut s = format!("{METRICS_CSV_HEADER},status\n");
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

fn unique_labels(names: impl Iterator<Item = String>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for name in names {
        let mut label = name.clone();
        let mut k = 2;
        while seen.contains(&label) {
            label = format!("{name}_{k}");
            k += 1;
        }
        seen.push(label);
    }
    seen
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: Vec<BatchRow>,
    pub table_csv: PathBuf,
}

impl CompareReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.result.is_ok())
    }
}

/// Runs scenarios that share converter parameters and writes one trace CSV
/// per scenario, `compare_metrics.csv`, `compare.svg` (one column per
/// scenario) and `compare_<signal>.svg` overlays into `out_dir`.
///
/// A scenario that fails becomes an error row; the batch carries on.
pub fn run_compare(
    scenarios: &[Scenario],
    out_dir: &Path,
    style: &PlotStyle,
) -> Result<CompareReport, RunError> {
    let Some(first) = scenarios.first() else {
        return Err(RunError::Batch(
            "compare needs at least one scenario".into(),
        ));
    };
    if let Some(other) = scenarios.iter().find(|s| s.params != first.params) {
        return Err(RunError::Batch(format!(
            "scenarios `{}` and `{}` differ in converter parameters",
            first.name, other.name
        )));
    }
    create_dir(out_dir)?;
    let labels = unique_labels(scenarios.iter().map(|s| s.name.clone()));
    let jobs: Vec<_> = scenarios.iter().zip(&labels).collect();
    let results = parallel_map(&jobs, |(sc, label)| {
        let out = simulate_scenario(sc)?;
        write_trace(&out_dir.join(format!("{label}.csv")), &out.trace)?;
        Ok::<_, RunError>(out)
    });

    let rows: Vec<BatchRow> = labels
        .iter()
        .zip(&results)
        .map(|(label, r)| BatchRow {
            label: label.clone(),
            result: r.as_ref().map(|o| o.metrics).map_err(|e| e.to_string()),
        })
        .collect();
    let table_csv = out_dir.join("compare_metrics.csv");
    write_text(&table_csv, &batch_table(&rows))?;

    let traces: Vec<(&str, &WaveformTrace)> = labels
        .iter()
        .zip(&results)
        .filter_map(|(l, r)| r.as_ref().ok().map(|o| (l.as_str(), &o.trace)))
        .collect();
    if !traces.is_empty() {
        plot::render_panels(&out_dir.join("compare.svg"), &traces, style)?;
        for signal in Signal::ALL {
            let path = out_dir.join(format!("compare_{}.svg", signal.column()));
            plot::render_overlay(&path, signal, &traces, style)?;
        }
    }
    Ok(CompareReport { rows, table_csv })
}

/// Direction of a metric column over the swept values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Constant,
    NonIncreasing,
    NonDecreasing,
    NotMonotone,
    /// Fewer than two defined values.
    Undetermined,
}

impl Trend {
    pub fn of(values: &[f64]) -> Trend {
        if values.len() < 2 {
            return Trend::Undetermined;
        }
        let up = values.windows(2).all(|w| w[1] >= w[0]);
        let down = values.windows(2).all(|w| w[1] <= w[0]);
        match (up, down) {
            (true, true) => Trend::Constant,
            (false, true) => Trend::NonIncreasing,
            (true, false) => Trend::NonDecreasing,
            (false, false) => Trend::NotMonotone,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Trend::Constant => "constant",
            Trend::NonIncreasing => "non-increasing",
            Trend::NonDecreasing => "non-decreasing",
            Trend::NotMonotone => "not monotone",
            Trend::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// Dotted key that was swept.
    pub key: String,
    /// Swept values in SI units, one per row.
    pub values: Vec<f64>,
    pub rows: Vec<BatchRow>,
    pub peak_i_l_trend: Trend,
    /// Missing overshoot counts as zero.
    pub overshoot_trend: Trend,
    pub table_csv: PathBuf,
}

impl SweepReport {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(|r| r.result.is_ok())
    }
}

fn swept_value(sc: &Scenario, key: &str) -> f64 {
    match key {
        "converter.v_bat" => sc.params.v_bat,
        "strategy.d_cmd" => sc.strategy.d_cmd,
        "strategy.t_d_final" => sc.t_d_final,
        _ => match sc.strategy.kind {
            dabsim_core::StrategyKind::VariableRamp { t_ramp } => t_ramp,
            _ => f64::NAN,
        },
    }
}

/// Runs `base` once per value of `key` and writes `sweep_<key>.csv`
/// (value column plus metrics and status) and `sweep_<key>.svg` into
/// `out_dir`. `key` is one of the sweepable parameters (`t_ramp`, `v_bat`,
/// `d_cmd`, `t_d_final`); values use config syntax, units allowed.
pub fn run_sweep(
    base: &Scenario,
    key: &str,
    values: &[String],
    out_dir: &Path,
    style: &PlotStyle,
) -> Result<SweepReport, RunError> {
    let Some(full) = sweep_key(key) else {
        return Err(RunError::Batch(format!(
            "`{key}` is not sweepable; use t_ramp, v_bat, d_cmd or t_d_final"
        )));
    };
    if values.is_empty() {
        return Err(RunError::Batch("sweep needs at least one value".into()));
    }
    let short = full.rsplit('.').next().unwrap_or(full);
    let scenarios = values
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let mut sc = base.with_value(full, v)?;
            sc.name = format!("{}_{short}_{k}", base.name);
            Ok(sc)
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    create_dir(out_dir)?;
    let results = parallel_map(&scenarios, simulate_scenario);
    let si: Vec<f64> = scenarios.iter().map(|s| swept_value(s, full)).collect();
    let rows: Vec<BatchRow> = scenarios
        .iter()
        .zip(&results)
        .map(|(sc, r)| BatchRow {
            label: sc.name.clone(),
            result: r.as_ref().map(|o| o.metrics).map_err(|e| e.to_string()),
        })
        .collect();

    let ok: Vec<(f64, &StartupMetrics)> = si
        .iter()
        .zip(&rows)
        .filter_map(|(&x, r)| r.result.as_ref().ok().map(|m| (x, m)))
        .collect();
    let peaks: Vec<(f64, f64)> = ok.iter().map(|(x, m)| (*x, m.peak_i_l)).collect();
    let overshoot: Vec<(f64, f64)> = ok
        .iter()
        .map(|(x, m)| (*x, m.overshoot_pct.unwrap_or(0.0)))
        .collect();
    let trend = |pts: &[(f64, f64)]| {
        let mut sorted = pts.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        Trend::of(&sorted.iter().map(|p| p.1).collect::<Vec<_>>())
    };

    let mut table = format!("{short},{METRICS_CSV_HEADER},status\n");
    for (x, r) in si.iter().zip(&rows) {
        table.push_str(&format!("{x},{}\n", r.csv_line()));
    }
    let table_csv = out_dir.join(format!("sweep_{short}.csv"));
    write_text(&table_csv, &table)?;
    if !peaks.is_empty() {
        plot::render_sweep(
            &out_dir.join(format!("sweep_{short}.svg")),
            short,
            &[
                ("peak_i_l (A)", peaks.clone()),
                ("overshoot (%)", overshoot.clone()),
            ],
            style,
        )?;
    }
    Ok(SweepReport {
        key: full.to_string(),
        values: si,
        rows,
        peak_i_l_trend: trend(&peaks),
        overshoot_trend: trend(&overshoot),
        table_csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..37).collect();
        assert_eq!(
            parallel_map(&items, |x| x * x),
            items.iter().map(|x| x * x).collect::<Vec<_>>()
        );
        assert!(parallel_map(&[] as &[u8], |x| *x).is_empty());
    }

    #[test]
    fn trends() {
        assert_eq!(Trend::of(&[3.0, 2.0, 2.0, 1.0]), Trend::NonIncreasing);
        assert_eq!(Trend::of(&[1.0, 2.0]), Trend::NonDecreasing);
        assert_eq!(Trend::of(&[1.0, 1.0]), Trend::Constant);
        assert_eq!(Trend::of(&[1.0, 2.0, 1.0]), Trend::NotMonotone);
        assert_eq!(Trend::of(&[1.0]), Trend::Undetermined);
    }

    #[test]
    fn labels_are_made_unique() {
        let l = unique_labels(["a", "b", "a", "a"].iter().map(|s| s.to_string()));
        assert_eq!(l, ["a", "b", "a_2", "a_3"]);
    }

    #[test]
    fn error_rows_keep_column_count() {
        let row = BatchRow {
            label: "x".into(),
            result: Err("bad, really\nbad".into()),
        };
        let line = row.csv_line();
        assert_eq!(
            line.split(',').count(),
            METRICS_CSV_HEADER.split(',').count() + 1
        );
        assert!(line.ends_with("error: bad; really;bad"));
    }
}
