//! Dead-time schedules for the startup strategies.
//!
//! All dead times in this module are *total* dead time per switching period,
//! i.e. twice the per-edge delay programmed into the dead-band unit.

use thiserror::Error;

use crate::analysis::phase_for_power;
use crate::circuit::{DabParams, LoadModel, RATED_POWER};
use crate::pwm::{per_edge_delay, PwmConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("dead-time schedule violates 0 < t_d_final <= t_d_start < T_sw (t_d_final = {t_d_final:e} s, t_d_start = {t_d_start:e} s, T_sw = {t_sw:e} s)")]
    Ordering {
        t_d_final: f64,
        t_d_start: f64,
        t_sw: f64,
    },
    #[error("{field} must be non-negative and finite, got {value}")]
    NegativeTime { field: &'static str, value: f64 },
    #[error("fixed-large-dead-time hold window must be positive, got {0}")]
    NonPositiveHold(f64),
}

/// Dead-time trajectory applied to every leg of the converter.
///
/// The dead time is held at `t_d_start` until `t_enable + t_hold`, then
/// decreases linearly to `t_d_final` over `t_ramp`. A zero `t_ramp` is a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadTimeSchedule {
    pub t_d_start: f64,
    pub t_d_final: f64,
    pub t_enable: f64,
    pub t_ramp: f64,
    pub t_hold: f64,
}

impl DeadTimeSchedule {
    /// Constant dead time from `t_enable` onwards.
    pub fn constant(t_d: f64, t_enable: f64) -> Self {
        Self {
            t_d_start: t_d,
            t_d_final: t_d,
            t_enable,
            t_ramp: 0.0,
            t_hold: 0.0,
        }
    }

    pub fn validate(&self, t_sw: f64) -> Result<(), ScheduleError> {
        for (field, value) in [
            ("t_enable", self.t_enable),
            ("t_ramp", self.t_ramp),
            ("t_hold", self.t_hold),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ScheduleError::NegativeTime { field, value });
            }
        }
        let ok = self.t_d_final > 0.0 && self.t_d_final <= self.t_d_start && self.t_d_start < t_sw;
        if !ok {
            return Err(ScheduleError::Ordering {
                t_d_final: self.t_d_final,
                t_d_start: self.t_d_start,
                t_sw,
            });
        }
        Ok(())
    }

    /// Time at which the ramp towards `t_d_final` begins.
    pub fn ramp_start(&self) -> f64 {
        self.t_enable + self.t_hold
    }

    /// Time at which `t_d_final` is reached.
    pub fn ramp_end(&self) -> f64 {
        self.ramp_start() + self.t_ramp
    }

    /// Total dead time per period at time `t`.
    pub fn dead_time_at(&self, t: f64) -> f64 {
        let start = self.ramp_start();
        if t <= start {
            return self.t_d_start;
        }
        if self.t_ramp <= 0.0 || t >= start + self.t_ramp {
            return self.t_d_final;
        }
        let frac = (t - start) / self.t_ramp;
        let td = self.t_d_start + (self.t_d_final - self.t_d_start) * frac;
        td.clamp(self.t_d_final, self.t_d_start)
    }

    /// Per-edge dead-band delay at time `t`.
    pub fn per_edge_delay_at(&self, t: f64) -> f64 {
        per_edge_delay(self.dead_time_at(t))
    }
}

/// Free-function form of [`DeadTimeSchedule::dead_time_at`].
pub fn dead_time_at(sched: &DeadTimeSchedule, t: f64) -> f64 {
    sched.dead_time_at(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrategyKind {
    /// Full modulation with the nominal dead time from the enable instant.
    Hard,
    /// Hold a large dead time for `hold`, then step to the nominal value.
    FixedLargeDeadTime { hold: f64, t_d_large: f64 },
    /// Start near one switching period and ramp linearly to the nominal value.
    VariableRamp { t_ramp: f64 },
}

impl StrategyKind {
    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::Hard => "hard",
            StrategyKind::FixedLargeDeadTime { .. } => "fixed_large",
            StrategyKind::VariableRamp { .. } => "variable_ramp",
        }
    }
}

/// A startup strategy: how the dead time evolves plus the phase-shift
/// command held during startup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartupStrategy {
    pub kind: StrategyKind,
    pub d_cmd: f64,
}

impl StartupStrategy {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if let StrategyKind::FixedLargeDeadTime { hold, .. } = self.kind {
            if !(hold > 0.0 && hold.is_finite()) {
                return Err(ScheduleError::NonPositiveHold(hold));
            }
        }
        if let StrategyKind::VariableRamp { t_ramp } = self.kind {
            if !(t_ramp >= 0.0 && t_ramp.is_finite()) {
                return Err(ScheduleError::NegativeTime {
                    field: "t_ramp",
                    value: t_ramp,
                });
            }
        }
        Ok(())
    }

    pub fn schedule(
        &self,
        pwm: &PwmConfig,
        t_enable: f64,
        t_d_final: f64,
    ) -> Result<DeadTimeSchedule, ScheduleError> {
        self.validate()?;
        match self.kind {
            StrategyKind::Hard => strategy_hard(pwm, t_enable, t_d_final),
            StrategyKind::FixedLargeDeadTime { hold, t_d_large } => {
                strategy_fixed_large(pwm, t_enable, hold, t_d_large, t_d_final)
            }
            StrategyKind::VariableRamp { t_ramp } => {
                strategy_variable_ramp(pwm, t_enable, t_ramp, t_d_final)
            }
        }
    }
}

/// Phase-shift command held during startup when none is given.
///
/// Without a load the lossless converter only has an equilibrium at zero
/// phase shift (output at `v_bat / n`, current decaying to zero), so the
/// default is 0. With a load it is the smaller phase shift that transfers
/// rated power at nominal output voltage, saturating at 0.5.
pub fn default_phase_command(p: &DabParams) -> f64 {
    match p.load {
        LoadModel::None => 0.0,
        _ => {
            phase_for_power(RATED_POWER, p.v_bat / p.n, p.v_bat, p.n, p.l_e, p.f_sw).unwrap_or(0.5)
        }
    }
}

/// Proposed soft start: the initial dead time is the largest clock-representable
/// value below one switching period whose half lies on the clock grid.
///
/// A zero ramp collapses to [`strategy_hard`].
pub fn strategy_variable_ramp(
    pwm: &PwmConfig,
    t_enable: f64,
    t_ramp: f64,
    t_d_final: f64,
) -> Result<DeadTimeSchedule, ScheduleError> {
    if t_ramp == 0.0 {
        return strategy_hard(pwm, t_enable, t_d_final);
    }
    let t_d_start = 2.0 * pwm.max_per_edge_delay();
    let sched = DeadTimeSchedule {
        t_d_start,
        t_d_final,
        t_enable,
        t_ramp,
        t_hold: 0.0,
    };
    sched.validate(pwm.nominal_period())?;
    Ok(sched)
}

/// Conventional hard start with a constant dead time.
pub fn strategy_hard(
    pwm: &PwmConfig,
    t_enable: f64,
    t_d_final: f64,
) -> Result<DeadTimeSchedule, ScheduleError> {
    let sched = DeadTimeSchedule::constant(t_d_final, t_enable);
    sched.validate(pwm.nominal_period())?;
    Ok(sched)
}

/// Baseline: fixed large dead time for `hold`, then a step to `t_d_final`.
pub fn strategy_fixed_large(
    pwm: &PwmConfig,
    t_enable: f64,
    hold: f64,
    t_d_large: f64,
    t_d_final: f64,
) -> Result<DeadTimeSchedule, ScheduleError> {
    if !(hold > 0.0 && hold.is_finite()) {
        return Err(ScheduleError::NonPositiveHold(hold));
    }
    let sched = DeadTimeSchedule {
        t_d_start: t_d_large,
        t_d_final,
        t_enable,
        t_ramp: 0.0,
        t_hold: hold,
    };
    sched.validate(pwm.nominal_period())?;
    Ok(sched)
}

/// Total dead time that leaves each gate conducting for `gate_duty` of the
/// switching period (`gate_duty` in `[0, 0.5]`).
pub fn dead_time_for_gate_duty(gate_duty: f64, f_sw: f64) -> f64 {
    let t_sw = 1.0 / f_sw;
    let per_edge = t_sw / 2.0 - gate_duty.clamp(0.0, 0.5) * t_sw;
    2.0 * per_edge
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pwm(clk: f64) -> PwmConfig {
        PwmConfig::new(32e3, clk, 0.0, 2.0).unwrap()
    }

    fn rated_ramp() -> DeadTimeSchedule {
        DeadTimeSchedule {
            t_d_start: 31.24e-6,
            t_d_final: 600e-9,
            t_enable: 1.5,
            t_ramp: 0.150,
            t_hold: 0.0,
        }
    }

    #[test]
    fn dead_time_before_enable_is_start() {
        assert_eq!(rated_ramp().dead_time_at(1.4), 31.24e-6);
        assert_eq!(rated_ramp().dead_time_at(0.0), 31.24e-6);
    }

    #[test]
    fn dead_time_midpoint_and_clamp() {
        let s = rated_ramp();
        assert_relative_eq!(s.dead_time_at(1.5 + 0.075), 15.92e-6, max_relative = 1e-9);
        assert_eq!(s.dead_time_at(2.0), 600e-9);
    }

    #[test]
    fn variable_ramp_start_on_100mhz_grid() {
        let s = strategy_variable_ramp(&pwm(100e6), 1.5, 0.150, 600e-9).unwrap();
        assert_relative_eq!(s.t_d_start, 31.24e-6, max_relative = 1e-12);
        assert_relative_eq!(per_edge_delay(s.t_d_start), 15.62e-6, max_relative = 1e-12);
    }

    #[test]
    fn variable_ramp_start_on_10mhz_grid() {
        let s = strategy_variable_ramp(&pwm(10e6), 1.5, 0.150, 600e-9).unwrap();
        assert_relative_eq!(per_edge_delay(s.t_d_start), 15.6e-6, max_relative = 1e-12);
    }

    #[test]
    fn zero_ramp_is_hard_start() {
        let p = pwm(100e6);
        let a = strategy_variable_ramp(&p, 1.5, 0.0, 600e-9).unwrap();
        let b = strategy_hard(&p, 1.5, 600e-9).unwrap();
        assert_eq!(a, b);
        for t in [0.0, 1.5, 1.6, 3.0] {
            assert_eq!(b.dead_time_at(t), 600e-9);
        }
    }

    #[test]
    fn final_at_or_above_period_rejected() {
        let p = pwm(100e6);
        assert!(matches!(
            strategy_hard(&p, 0.0, 31.25e-6),
            Err(ScheduleError::Ordering { .. })
        ));
        assert!(strategy_variable_ramp(&p, 0.0, 0.1, 40e-6).is_err());
    }

    #[test]
    fn fixed_large_ordering_checked() {
        let p = pwm(100e6);
        assert!(strategy_fixed_large(&p, 0.0, 0.1, 300e-9, 600e-9).is_err());
        assert!(strategy_fixed_large(&p, 0.0, 0.0, 20e-6, 600e-9).is_err());
        let s = strategy_fixed_large(&p, 1.5, 0.1, 20e-6, 600e-9).unwrap();
        assert_eq!(s.dead_time_at(1.6), 20e-6);
        assert_eq!(s.dead_time_at(1.6 + 1e-9), 600e-9);
    }

    #[test]
    fn fixed_large_equal_to_final_matches_hard() {
        let p = pwm(100e6);
        let s = strategy_fixed_large(&p, 1.5, 0.1, 600e-9, 600e-9).unwrap();
        for t in [0.0, 1.5, 1.55, 1.6, 1.7] {
            assert_eq!(s.dead_time_at(t), 600e-9);
        }
    }

    #[test]
    fn default_phase_command_by_load() {
        let mut p = DabParams::rated();
        assert_eq!(default_phase_command(&p), 0.0);
        p.load = LoadModel::Resistive {
            ohms: 650.0 * 650.0 / 15e3,
        };
        assert_relative_eq!(
            default_phase_command(&p),
            0.052_773_173_524_299_17,
            max_relative = 1e-12
        );
    }

    #[test]
    fn gate_duty_fifteen_percent() {
        let td = dead_time_for_gate_duty(0.15, 32e3);
        assert_relative_eq!(per_edge_delay(td), 10.9375e-6, max_relative = 1e-12);
    }
}
