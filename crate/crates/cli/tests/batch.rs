use std::fs;
use std::path::Path;

use dabsim_cli::batch::{run_compare, run_scenario, run_sweep, Trend};
use dabsim_cli::{parse_config, PlotStyle, RunError, Scenario};
use dabsim_core::{StrategyKind, WaveformTrace};

/// Rated converter with the enable instant moved close to zero so runs are short.
fn scenario(dir: &Path, extra: &str) -> Scenario {
    let mut text = format!(
        "scenario.output_dir = {}\nstrategy.t_enable = 5ms\n{extra}\n",
        dir.display()
    );
    if !extra.contains("scenario.t_end") {
        text.push_str("scenario.t_end = 250ms\n");
    }
    parse_config(&text).unwrap()
}

fn style() -> PlotStyle {
    PlotStyle {
        buckets: 300,
        ..PlotStyle::default()
    }
}

#[test]
fn run_writes_all_outputs_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = scenario(
        tmp.path(),
        "scenario.name = one\nscenario.t_end = 20ms\nstrategy.t_ramp = 10ms",
    );
    let (out, files) = run_scenario(&sc, &style()).unwrap();
    for f in [
        &files.trace_csv,
        &files.metrics_csv,
        &files.panels_svg,
        &files.gates_svg,
        &files.config,
    ] {
        assert!(f.starts_with(tmp.path()), "{}", f.display());
        assert!(fs::metadata(f).unwrap().len() > 0, "{}", f.display());
    }
    let text = fs::read_to_string(&files.trace_csv).unwrap();
    let back = WaveformTrace::read_csv(&text).unwrap();
    assert_eq!(back.len(), out.trace.len());
    assert_eq!(back.v_dc.last(), out.trace.v_dc.last());

    let resolved = parse_config(&fs::read_to_string(&files.config).unwrap()).unwrap();
    assert_eq!(resolved, sc);

    let svg = fs::read_to_string(&files.panels_svg).unwrap();
    let gates = fs::read_to_string(&files.gates_svg).unwrap();
    run_scenario(&sc, &style()).unwrap();
    assert_eq!(fs::read_to_string(&files.trace_csv).unwrap(), text);
    assert_eq!(fs::read_to_string(&files.panels_svg).unwrap(), svg);
    assert_eq!(fs::read_to_string(&files.gates_svg).unwrap(), gates);
}

#[test]
fn compare_orders_strategies() {
    let tmp = tempfile::tempdir().unwrap();
    let hard = scenario(tmp.path(), "strategy.kind = hard");
    let fixed = scenario(tmp.path(), "strategy.kind = fixed_large");
    let ramp = scenario(tmp.path(), "strategy.kind = variable_ramp");
    let report = run_compare(&[hard, fixed, ramp], tmp.path(), &style()).unwrap();
    assert!(report.all_ok());
    let labels: Vec<_> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["hard", "fixed_large", "variable_ramp"]);
    let m: Vec<_> = report
        .rows
        .iter()
        .map(|r| r.result.clone().unwrap())
        .collect();
    assert!(
        m[2].peak_i_l < m[0].peak_i_l && m[2].peak_i_l < m[1].peak_i_l,
        "{m:?}"
    );
    assert!(m[2].overshoot_pct.unwrap() < 1e-3, "{m:?}");

    let table = fs::read_to_string(&report.table_csv).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().next().unwrap().ends_with(",status"));
    for name in [
        "hard.csv",
        "fixed_large.csv",
        "variable_ramp.csv",
        "compare.svg",
        "compare_i_l.svg",
        "compare_v_dc.svg",
        "compare_i_cap.svg",
        "compare_td.svg",
    ] {
        assert!(tmp.path().join(name).exists(), "{name}");
    }
}

#[test]
fn compare_degenerate_and_repeated() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = scenario(tmp.path(), "scenario.t_end = 30ms\nstrategy.t_ramp = 10ms");
    let one = run_compare(std::slice::from_ref(&sc), tmp.path(), &style()).unwrap();
    assert_eq!(one.rows.len(), 1);

    let twice = run_compare(&[sc.clone(), sc], tmp.path(), &style()).unwrap();
    assert_eq!(twice.rows[1].label, "variable_ramp_2");
    assert_eq!(twice.rows[0].result, twice.rows[1].result);
    let table = fs::read_to_string(&twice.table_csv).unwrap();
    let rows: Vec<_> = table
        .lines()
        .skip(1)
        .map(|l| l.split_once(',').unwrap().1)
        .collect();
    assert_eq!(rows[0], rows[1]);

    assert!(matches!(
        run_compare(&[], tmp.path(), &style()),
        Err(RunError::Batch(_))
    ));
    let other = scenario(tmp.path(), "converter.v_bat = 400");
    let base = scenario(tmp.path(), "");
    assert!(matches!(
        run_compare(&[base, other], tmp.path(), &style()),
        Err(RunError::Batch(_))
    ));
}

#[test]
fn failed_scenario_is_a_row() {
    let tmp = tempfile::tempdir().unwrap();
    let good = scenario(
        tmp.path(),
        "scenario.name = good\nscenario.t_end = 20ms\nstrategy.t_ramp = 10ms",
    );
    let mut bad = good.clone();
    bad.name = "bad".into();
    // the timer disagrees with the converter, which the simulator rejects
    bad.pwm.f_sw = 31e3;
    let report = run_compare(&[good, bad], tmp.path(), &style()).unwrap();
    assert!(!report.all_ok());
    assert!(report.rows[0].result.is_ok());
    assert!(report.rows[1].result.is_err());
    let table = fs::read_to_string(&report.table_csv).unwrap();
    assert!(table.lines().nth(2).unwrap().starts_with("bad,"));
    assert!(table.contains(",error: "));
}

#[test]
fn sweep_ramp_rate_lowers_peak_current() {
    let tmp = tempfile::tempdir().unwrap();
    let base = scenario(tmp.path(), "scenario.name = ramp\nscenario.t_end = 600ms");
    let values: Vec<String> = ["10ms", "50ms", "150ms", "500ms"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let report = run_sweep(&base, "t_ramp", &values, tmp.path(), &style()).unwrap();
    assert!(report.all_ok());
    assert_eq!(report.key, "strategy.t_ramp");
    assert_eq!(report.values, [0.01, 0.05, 0.15, 0.5]);
    assert_eq!(report.peak_i_l_trend, Trend::NonIncreasing);
    let table = fs::read_to_string(&report.table_csv).unwrap();
    assert!(table.starts_with("t_ramp,label,"));
    assert_eq!(table.lines().count(), 5);
    assert!(tmp.path().join("sweep_t_ramp.svg").exists());
}

#[test]
fn sweep_battery_voltage() {
    let tmp = tempfile::tempdir().unwrap();
    let base = scenario(tmp.path(), "scenario.t_end = 200ms");
    let values: Vec<String> = ["200V", "400 V", "650"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let report = run_sweep(&base, "v_bat", &values, tmp.path(), &style()).unwrap();
    assert!(report.all_ok());
    for (row, v) in report.rows.iter().zip([200.0, 400.0, 650.0]) {
        let m = row.result.as_ref().unwrap();
        assert!((m.v_final - v).abs() < 0.01 * v, "{m:?}");
    }
}

#[test]
fn sweep_rejects_bad_requests() {
    let tmp = tempfile::tempdir().unwrap();
    let base = scenario(tmp.path(), "");
    assert!(matches!(
        run_sweep(&base, "t_ramp", &[], tmp.path(), &style()),
        Err(RunError::Batch(_))
    ));
    assert!(matches!(
        run_sweep(&base, "c_out", &["1uF".into()], tmp.path(), &style()),
        Err(RunError::Batch(_))
    ));
    assert!(matches!(
        run_sweep(&base, "v_bat", &["12 uF".into()], tmp.path(), &style()),
        Err(RunError::Config(_))
    ));

    let hard = scenario(tmp.path(), "strategy.kind = hard");
    assert!(matches!(hard.strategy.kind, StrategyKind::Hard));
    assert!(matches!(
        run_sweep(&hard, "t_ramp", &["1ms".into()], tmp.path(), &style()),
        Err(RunError::Config(_))
    ));
}
