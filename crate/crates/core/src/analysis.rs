//! Closed-form steady-state relations, the averaged-model oracle and startup
//! metrics.

use std::fmt::Write as _;

use thiserror::Error;

use crate::circuit::{DabParams, LoadModel};
use crate::solver::WaveformTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("phase shift ratio |D| = {0} exceeds 0.5")]
    PhaseDomain(f64),
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("requested power {0} W exceeds the transferable maximum {1} W")]
    PowerUnreachable(f64, f64),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
}

fn check_d(d: f64) -> Result<(), AnalysisError> {
    if d.abs() <= 0.5 {
        Ok(())
    } else {
        Err(AnalysisError::PhaseDomain(d))
    }
}

fn check_pos(field: &'static str, value: f64) -> Result<(), AnalysisError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(AnalysisError::NonPositive { field, value })
    }
}

/// Single-phase-shift steady-state power `v_dc v_bat D (1-|D|) / (2 n L f)`.
pub fn power_sps(
    v_dc: f64,
    v_bat: f64,
    d: f64,
    n: f64,
    l_e: f64,
    f_s: f64,
) -> Result<f64, AnalysisError> {
    check_d(d)?;
    check_pos("n", n)?;
    check_pos("l_e", l_e)?;
    check_pos("f_s", f_s)?;
    Ok(v_dc * v_bat * d * (1.0 - d.abs()) / (2.0 * n * l_e * f_s))
}

/// Smaller-magnitude phase shift ratio that transfers `power`.
pub fn phase_for_power(
    power: f64,
    v_dc: f64,
    v_bat: f64,
    n: f64,
    l_e: f64,
    f_s: f64,
) -> Result<f64, AnalysisError> {
    check_pos("v_dc", v_dc)?;
    check_pos("v_bat", v_bat)?;
    let p_max = power_sps(v_dc, v_bat, 0.5, n, l_e, f_s)?;
    let k = power.abs() * 2.0 * n * l_e * f_s / (v_dc * v_bat);
    if k > 0.25 {
        return Err(AnalysisError::PowerUnreachable(power, p_max));
    }
    // D(1-D) = k, smaller root written to avoid cancellation
    let d = 2.0 * k / (1.0 + (1.0 - 4.0 * k).sqrt());
    Ok(d.copysign(power))
}

/// Capacitor energy `c v^2 / 2`.
pub fn cap_energy(c_out: f64, v_dc: f64) -> f64 {
    0.5 * c_out * v_dc * v_dc
}

/// Averaged DC-link slope `v_bat D(1-|D|)/(2 n L C f) - i_o / C`.
pub fn averaged_dvdc_dt(
    v_bat: f64,
    d: f64,
    n: f64,
    l_e: f64,
    c_out: f64,
    f_s: f64,
    i_o: f64,
) -> Result<f64, AnalysisError> {
    check_pos("c_out", c_out)?;
    Ok(averaged_cap_current(v_bat, d, n, l_e, f_s, i_o)? / c_out)
}

/// Averaged capacitor current `v_bat D(1-|D|)/(2 n L f) - i_o`.
pub fn averaged_cap_current(
    v_bat: f64,
    d: f64,
    n: f64,
    l_e: f64,
    f_s: f64,
    i_o: f64,
) -> Result<f64, AnalysisError> {
    check_d(d)?;
    check_pos("n", n)?;
    check_pos("l_e", l_e)?;
    check_pos("f_s", f_s)?;
    Ok(v_bat * d * (1.0 - d.abs()) / (2.0 * n * l_e * f_s) - i_o)
}

/// Fraction of the period not consumed by dead time, clamped to `[0, 1]`.
pub fn effective_conduction(td_total: f64, t_sw: f64) -> f64 {
    ((t_sw - td_total) / t_sw).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AveragedState {
    pub t: f64,
    pub v_dc: f64,
}

/// RK4 integration of the averaged DC-link equation with the transfer term
/// scaled by `d_eff(t)`. The load current follows `p.load`.
pub fn integrate_averaged_model<D, E>(
    p: &DabParams,
    d_of_t: D,
    d_eff_of_t: E,
    init: AveragedState,
    t_end: f64,
    dt: f64,
) -> Result<Vec<AveragedState>, AnalysisError>
where
    D: Fn(f64) -> f64,
    E: Fn(f64) -> f64,
{
    if !(dt > 0.0) {
        return Err(AnalysisError::NonPositiveStep(dt));
    }
    let rhs = |t: f64, v: f64| -> Result<f64, AnalysisError> {
        let d_eff = d_eff_of_t(t).clamp(0.0, 1.0);
        let transfer = averaged_cap_current(p.v_bat, d_of_t(t), p.n, p.l_e, p.f_sw, 0.0)?;
        let i_o = match p.load {
            LoadModel::None => 0.0,
            _ => p.load.current(v.max(0.0)),
        };
        Ok((d_eff * transfer - i_o) / p.c_out)
    };
    let mut out = vec![AveragedState {
        t: init.t,
        v_dc: init.v_dc.max(0.0),
    }];
    let (mut t, mut v) = (init.t, init.v_dc.max(0.0));
    while t < t_end {
        let h = dt.min(t_end - t);
        let k1 = rhs(t, v)?;
        let k2 = rhs(t + h / 2.0, v + h / 2.0 * k1)?;
        let k3 = rhs(t + h / 2.0, v + h / 2.0 * k2)?;
        let k4 = rhs(t + h, v + h * k3)?;
        v = (v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
        t = if t_end - t <= dt { t_end } else { t + h };
        out.push(AveragedState { t, v_dc: v });
    }
    Ok(out)
}

/// Startup figures of merit. Optional fields are absent when undefined for
/// the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartupMetrics {
    pub peak_i_l: f64,
    pub peak_i_cap: f64,
    pub v_final: f64,
    pub overshoot_pct: Option<f64>,
    pub rise_time_10_90: Option<f64>,
    pub settling_time_2pct: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str =
    "label,peak_i_l,peak_i_cap,v_final,overshoot_pct,rise_time_10_90,settling_time_2pct";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl StartupMetrics {
    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            label,
            self.peak_i_l,
            self.peak_i_cap,
            self.v_final,
            opt(self.overshoot_pct),
            opt(self.rise_time_10_90),
            opt(self.settling_time_2pct)
        )
    }

    pub fn summary(&self, label: &str) -> String {
        let or_na = |x: Option<f64>, scale: f64, unit: &str| {
            x.map(|v| format!("{:.4} {unit}", v * scale))
                .unwrap_or_else(|| "n/a".to_string())
        };
        let mut s = String::new();
        let _ = writeln!(s, "[{label}]");
        let _ = writeln!(s, "  peak |i_l|      : {:.3} A", self.peak_i_l);
        let _ = writeln!(s, "  peak |i_cap|    : {:.3} A", self.peak_i_cap);
        let _ = writeln!(s, "  v_final         : {:.3} V", self.v_final);
        let _ = writeln!(
            s,
            "  overshoot       : {}",
            or_na(self.overshoot_pct, 1.0, "%")
        );
        let _ = writeln!(
            s,
            "  rise 10-90%     : {}",
            or_na(self.rise_time_10_90, 1e3, "ms")
        );
        let _ = writeln!(
            s,
            "  settling +-2%   : {}",
            or_na(self.settling_time_2pct, 1e3, "ms")
        );
        s
    }
}

fn first_upward_crossing(t: &[f64], v: &[f64], level: f64) -> Option<f64> {
    if v[0] >= level {
        return Some(t[0]);
    }
    (1..v.len()).find(|&k| v[k] >= level).map(|k| {
        let (v0, v1) = (v[k - 1], v[k]);
        t[k - 1] + (t[k] - t[k - 1]) * (level - v0) / (v1 - v0)
    })
}

/// Metrics of a startup trace. `v_target` is the nominal output level; a
/// settled voltage below `1e-6 * v_target` is treated as zero.
pub fn compute_metrics(trace: &WaveformTrace, v_target: f64) -> StartupMetrics {
    assert!(!trace.is_empty(), "metrics need a non-empty trace");
    let n = trace.len();
    let peak_i_l = trace.i_l.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let peak_i_cap = trace.i_cap.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tail = (n / 20).max(1);
    let v_final = trace.v_dc[n - tail..].iter().sum::<f64>() / tail as f64;

    let zero_level = 1e-6 * v_target.abs().max(1.0);
    if v_final.abs() <= zero_level {
        return StartupMetrics {
            peak_i_l,
            peak_i_cap,
            v_final,
            overshoot_pct: None,
            rise_time_10_90: None,
            settling_time_2pct: None,
        };
    }
    let v_max = trace.v_dc.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let overshoot_pct = Some(((v_max - v_final) / v_final * 100.0).max(0.0));

    let t0 = trace.t[0];
    let t10 = first_upward_crossing(&trace.t, &trace.v_dc, 0.1 * v_final);
    let t90 = first_upward_crossing(&trace.t, &trace.v_dc, 0.9 * v_final);
    let rise_time_10_90 = match (t10, t90) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };

    let band = 0.02 * v_final.abs();
    let outside = |k: usize| (trace.v_dc[k] - v_final).abs() > band;
    let settling_time_2pct = match (0..n).rev().find(|&k| outside(k)) {
        None => Some(0.0),
        Some(k) if k == n - 1 => None,
        Some(k) => {
            let (v0, v1) = (trace.v_dc[k], trace.v_dc[k + 1]);
            let edge = if v0 > v_final {
                v_final + band
            } else {
                v_final - band
            };
            let frac = if v1 != v0 {
                (edge - v0) / (v1 - v0)
            } else {
                1.0
            };
            let tc = trace.t[k] + (trace.t[k + 1] - trace.t[k]) * frac.clamp(0.0, 1.0);
            Some(tc - t0)
        }
    };
    StartupMetrics {
        peak_i_l,
        peak_i_cap,
        v_final,
        overshoot_pct,
        rise_time_10_90,
        settling_time_2pct,
    }
}

/// Energy accounts of a trace over its span.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBalance {
    /// Energy delivered by the primary source.
    pub e_src: f64,
    pub delta_e_l: f64,
    pub delta_e_c: f64,
    pub e_load: f64,
    /// Final capacitor energy.
    pub e_c_final: f64,
    pub residual: f64,
}

/// Source power is the recorded bridge voltage (held over each sample
/// interval) times the inductor current; load power is `v_dc * i_load`.
///
/// Both are integrated with endpoint-corrected trapezoids
/// `h/2 (f0 + f1) + h^2/12 (f0' - f1')`, where the slopes come from the
/// recorded bridge voltages and capacitor current.
pub fn energy_balance(trace: &WaveformTrace, p: &DabParams) -> EnergyBalance {
    let n = trace.len();
    if n == 0 {
        return EnergyBalance::default();
    }
    let load_power = |v: f64| v * p.load.current(v);
    let load_power_slope = |v: f64, dv: f64| match p.load {
        LoadModel::None => 0.0,
        LoadModel::Resistive { ohms } => 2.0 * v * dv / ohms,
        LoadModel::ConstantCurrent { amps } => {
            if v > 0.0 {
                amps * dv
            } else {
                0.0
            }
        }
    };
    let mut e_src = 0.0;
    let mut e_load = 0.0;
    for k in 0..n - 1 {
        let h = trace.t[k + 1] - trace.t[k];
        let (i0, i1) = (trace.i_l[k], trace.i_l[k + 1]);
        let (v0, v1) = (trace.v_dc[k], trace.v_dc[k + 1]);
        let blocked = i0 == 0.0 && i1 == 0.0;
        // secondary switching function over the interval
        let s = if blocked {
            0.0
        } else if v0 > 0.0 {
            (trace.v_s[k] / v0).round()
        } else if i0 != 0.0 && trace.i_cap[k] != 0.0 {
            (trace.i_cap[k] * i0).signum()
        } else if v1 > 0.0 && i1 != 0.0 {
            i1.signum()
        } else {
            0.0
        };

        let di_gap = p.n * s * (v1 - v0) / p.l_e;
        e_src += trace.v_p[k] * (0.5 * h * (i0 + i1) + h * h / 12.0 * di_gap);

        let dv0 = trace.i_cap[k] / p.c_out;
        // a constant-current drain that just reached the floor needs the left-hand slope
        let (v1_side, drain1) = match p.load {
            LoadModel::ConstantCurrent { amps } if v1 == 0.0 && v0 > 0.0 => {
                (f64::MIN_POSITIVE, amps)
            }
            _ => (v1, p.load.current(v1)),
        };
        let dv1 = (s * i1 / p.n - drain1) / p.c_out;
        let q_gap = load_power_slope(v0, dv0) - load_power_slope(v1_side, dv1);
        e_load += 0.5 * h * (load_power(v0) + load_power(v1)) + h * h / 12.0 * q_gap;
    }
    let e_l = |i: f64| 0.5 * p.l_e * i * i;
    let delta_e_l = e_l(trace.i_l[n - 1]) - e_l(trace.i_l[0]);
    let e_c_final = cap_energy(p.c_out, trace.v_dc[n - 1]);
    let delta_e_c = e_c_final - cap_energy(p.c_out, trace.v_dc[0]);
    EnergyBalance {
        e_src,
        delta_e_l,
        delta_e_c,
        e_load,
        e_c_final,
        residual: e_src - delta_e_l - delta_e_c - e_load,
    }
}

/// `E_src - dE_L - dE_C - E_load` for the trace.
pub fn energy_balance_residual(trace: &WaveformTrace, p: &DabParams) -> f64 {
    energy_balance(trace, p).residual
}
