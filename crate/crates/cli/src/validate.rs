//! Steady-state power check: simulated transfer against the closed form.
//!
//! The output is held by a very large capacitor at rated voltage and the
//! inductor starts on its periodic steady-state current, so the averaged
//! source power over the later periods is the switching-level transfer power.

use dabsim_core::pwm::DEFAULT_CLOCK_HZ;
use dabsim_core::{
    power_sps, simulate, ConverterState, DabParams, DeadTimeSchedule, PwmConfig, SolverConfig,
    SolverError, WaveformTrace,
};

/// One phase shift at one dead time.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCheck {
    pub d: f64,
    /// Per-edge dead-band delay (s).
    pub per_edge: f64,
    pub p_sim: f64,
    pub p_ref: f64,
    /// Allowed relative deviation.
    pub band: f64,
}

impl PowerCheck {
    pub fn deviation(&self) -> f64 {
        (self.p_sim - self.p_ref).abs() / self.p_ref.abs()
    }

    pub fn pass(&self) -> bool {
        self.deviation() <= self.band
    }
}

const PERIODS: f64 = 60.0;
const SETTLE_PERIODS: f64 = 20.0;

/// Source energy over `[ta, tb]`.
fn source_energy(trace: &WaveformTrace, ta: f64, tb: f64) -> f64 {
    let eps = 1e-12;
    (0..trace.len().saturating_sub(1))
        .filter(|&k| trace.t[k] >= ta - eps && trace.t[k + 1] <= tb + eps)
        .map(|k| {
            trace.v_p[k] * 0.5 * (trace.i_l[k] + trace.i_l[k + 1]) * (trace.t[k + 1] - trace.t[k])
        })
        .sum()
}

/// Simulated and closed-form power at phase ratio `d`.
pub fn steady_state_power(
    p: &DabParams,
    v_dc: f64,
    d: f64,
    per_edge: f64,
) -> Result<(f64, f64), SolverError> {
    let p = DabParams { c_out: 10.0, ..*p };
    let pwm = PwmConfig::new(p.f_sw, DEFAULT_CLOCK_HZ, d, 1.0)?;
    let t_sw = pwm.effective_period();
    let t_end = PERIODS * t_sw;
    let pwm = PwmConfig {
        horizon: t_end,
        ..pwm
    };
    let sched = DeadTimeSchedule::constant(2.0 * per_edge, 0.0);
    let phi = d * t_sw / 2.0;
    let half = t_sw / 2.0;
    let i0 =
        -((p.v_bat + p.n * v_dc) * phi + (p.v_bat - p.n * v_dc) * (half - phi)) / (2.0 * p.l_e);
    let init = ConverterState {
        t: 0.0,
        i_l: i0,
        v_dc,
    };
    let cfg = SolverConfig::for_switching_frequency(p.f_sw);
    let trace = simulate(&p, &pwm, &sched, &cfg, t_end, init)?;
    let (ta, tb) = (SETTLE_PERIODS * t_sw, t_end);
    let p_sim = source_energy(&trace, ta, tb) / (tb - ta);
    let p_ref = power_sps(v_dc, p.v_bat, d, p.n, p.l_e, 1.0 / t_sw)
        .map_err(|e| SolverError::InvalidConfig(e.to_string()))?;
    Ok((p_sim, p_ref))
}

/// Rated converter, `D` in {0.1, 0.2, 0.3, 0.4}: within 5% at 300 ns per edge
/// and within 1% at 10 ns per edge.
pub fn steady_state_suite() -> Result<Vec<PowerCheck>, SolverError> {
    let p = DabParams::rated();
    let mut out = Vec::new();
    for (per_edge, band) in [(300e-9, 0.05), (10e-9, 0.01)] {
        for d in [0.1, 0.2, 0.3, 0.4] {
            let (p_sim, p_ref) = steady_state_power(&p, p.v_bat / p.n, d, per_edge)?;
            out.push(PowerCheck {
                d,
                per_edge,
                p_sim,
                p_ref,
                band,
            });
        }
    }
    Ok(out)
}
