//! Up-down counter PWM emulation with dead-band and single-phase-shift.
//!
//! All edge arithmetic is done in integer timer ticks. The carrier period is
//! `2 * TBPRD` ticks where `TBPRD` is the half period rounded to the clock
//! grid, so both halves of every period are exactly the same length.
//!
//! Dead-band uses delayed turn-on: a gate turns off at its nominal edge and its
//! complement turns on `delta` later. `delta` is latched once per carrier
//! period (at the master period start) and applied to every pulse whose
//! nominal turn-on falls in that period.

use std::io::{self, Write};

use thiserror::Error;

use crate::softstart::{DeadTimeSchedule, ScheduleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PwmError {
    #[error("switching frequency must be positive and finite, got {0}")]
    InvalidFrequency(f64),
    #[error("timer clock {clk} Hz must be at least 100 x f_sw ({f_sw} Hz)")]
    ClockTooSlow { clk: f64, f_sw: f64 },
    #[error("phase ratio must satisfy |D| <= 0.5, got {0}")]
    PhaseOutOfRange(f64),
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Timer configuration for the whole converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwmConfig {
    /// Switching frequency (Hz).
    pub f_sw: f64,
    /// Timer clock (Hz).
    pub clk: f64,
    /// Phase shift of the secondary bridge as a fraction of half a period.
    pub phase_ratio: f64,
    /// Simulation end time (s).
    pub horizon: f64,
}

pub const DEFAULT_CLOCK_HZ: f64 = 100e6;

impl PwmConfig {
    pub fn new(f_sw: f64, clk: f64, phase_ratio: f64, horizon: f64) -> Result<Self, PwmError> {
        let cfg = Self {
            f_sw,
            clk,
            phase_ratio,
            horizon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PwmError> {
        if !(self.f_sw > 0.0 && self.f_sw.is_finite()) {
            return Err(PwmError::InvalidFrequency(self.f_sw));
        }
        if !(self.clk >= 100.0 * self.f_sw && self.clk.is_finite()) {
            return Err(PwmError::ClockTooSlow {
                clk: self.clk,
                f_sw: self.f_sw,
            });
        }
        if !(self.phase_ratio.abs() <= 0.5) {
            return Err(PwmError::PhaseOutOfRange(self.phase_ratio));
        }
        if !(self.horizon > 0.0) {
            return Err(PwmError::NonPositiveHorizon(self.horizon));
        }
        Ok(())
    }

    pub fn tick(&self) -> f64 {
        1.0 / self.clk
    }

    /// `TBPRD`: half carrier period in ticks.
    pub fn half_period_ticks(&self) -> u64 {
        to_ticks(0.5 / self.f_sw, self.clk).max(1)
    }

    pub fn period_ticks(&self) -> u64 {
        2 * self.half_period_ticks()
    }

    /// Requested switching period `1 / f_sw`.
    pub fn nominal_period(&self) -> f64 {
        1.0 / self.f_sw
    }

    /// Carrier period actually produced on the clock grid.
    pub fn effective_period(&self) -> f64 {
        self.period_ticks() as f64 / self.clk
    }

    pub fn effective_frequency(&self) -> f64 {
        1.0 / self.effective_period()
    }

    /// Signed secondary displacement `D * TBPRD`, in ticks.
    pub fn phase_offset_ticks(&self) -> i64 {
        let raw = self.phase_ratio * self.half_period_ticks() as f64;
        let mag = to_ticks(raw.abs() / self.clk, self.clk) as i64;
        if raw < 0.0 {
            -mag
        } else {
            mag
        }
    }

    /// Largest per-edge delay on the clock grid strictly below `T_sw / 2`.
    pub fn max_per_edge_delay(&self) -> f64 {
        let half = self.clk / (2.0 * self.f_sw);
        let ticks = (half - 1e-9).ceil() - 1.0;
        ticks.max(0.0) / self.clk
    }
}

/// Per-edge dead-band delay for a total dead time per period.
pub fn per_edge_delay(td_total: f64) -> f64 {
    td_total / 2.0
}

/// Nearest tick count, ties rounding up.
pub fn to_ticks(t: f64, clk: f64) -> u64 {
    let x = t * clk;
    if x <= 0.0 {
        return 0;
    }
    (x + 0.5 + 1e-6 + 1e-12 * x).floor() as u64
}

/// Nearest multiple of `1 / clk`, ties rounding up.
pub fn quantize_to_clock(t: f64, clk: f64) -> f64 {
    to_ticks(t, clk) as f64 / clk
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeDirection {
    // Falling sorts first so simultaneous edges never overlap gates.
    Falling,
    Rising,
}

impl EdgeDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeDirection::Rising => "rising",
            EdgeDirection::Falling => "falling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeEvent {
    pub tick: u64,
    /// `tick / clk`, seconds.
    pub t: f64,
    /// Gate index, 1..=8.
    pub gate: u8,
    pub direction: EdgeDirection,
}

impl EdgeEvent {
    fn sort_key(&self) -> (u64, EdgeDirection, u8) {
        (self.tick, self.direction, self.gate)
    }
}

/// The four half-bridge legs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Leg {
    PrimaryA,
    PrimaryB,
    SecondaryA,
    SecondaryB,
}

impl Leg {
    pub const ALL: [Leg; 4] = [
        Leg::PrimaryA,
        Leg::PrimaryB,
        Leg::SecondaryA,
        Leg::SecondaryB,
    ];

    /// (high-side, low-side) gate indices.
    pub fn gates(&self) -> (u8, u8) {
        match self {
            Leg::PrimaryA => (1, 2),
            Leg::PrimaryB => (3, 4),
            Leg::SecondaryA => (5, 6),
            Leg::SecondaryB => (7, 8),
        }
    }

    pub fn of_gate(gate: u8) -> Option<Leg> {
        match gate {
            1 | 2 => Some(Leg::PrimaryA),
            3 | 4 => Some(Leg::PrimaryB),
            5 | 6 => Some(Leg::SecondaryA),
            7 | 8 => Some(Leg::SecondaryB),
            _ => None,
        }
    }
}

/// Edge stream of a single leg.
#[derive(Debug, Clone, PartialEq)]
pub struct LegEdges {
    pub events: Vec<EdgeEvent>,
    /// Pulses whose on-time quantized to zero; the gate stays off for them.
    pub degenerate_pulses: usize,
}

/// Per-period latched per-edge delays, in ticks.
#[derive(Debug, Clone, PartialEq)]
struct Latch {
    enable_tick: u64,
    period_ticks: u64,
    deltas: Vec<u64>,
}

impl Latch {
    fn new(pwm: &PwmConfig, sched: &DeadTimeSchedule, horizon_ticks: u64) -> Self {
        let enable_tick = to_ticks(sched.t_enable, pwm.clk);
        let period_ticks = pwm.period_ticks();
        let periods = if horizon_ticks > enable_tick {
            (horizon_ticks - enable_tick) / period_ticks + 2
        } else {
            0
        };
        let deltas = (0..periods)
            .map(|j| {
                let t = (enable_tick + j * period_ticks) as f64 / pwm.clk;
                to_ticks(sched.per_edge_delay_at(t), pwm.clk)
            })
            .collect();
        Self {
            enable_tick,
            period_ticks,
            deltas,
        }
    }

    fn delta_for(&self, nominal: u64) -> u64 {
        let j = ((nominal - self.enable_tick) / self.period_ticks) as usize;
        self.deltas[j.min(self.deltas.len() - 1)]
    }
}

fn emit_gate(
    latch: &Latch,
    half: u64,
    gate: u8,
    offset: u64,
    horizon_ticks: u64,
    clk: f64,
    out: &mut Vec<EdgeEvent>,
) -> usize {
    let mut degenerate = 0;
    let mut nominal = latch.enable_tick + offset;
    while nominal < horizon_ticks {
        let rise = nominal + latch.delta_for(nominal);
        let fall = nominal + half;
        if rise >= fall {
            degenerate += 1;
        } else {
            if rise < horizon_ticks {
                out.push(EdgeEvent {
                    tick: rise,
                    t: rise as f64 / clk,
                    gate,
                    direction: EdgeDirection::Rising,
                });
            }
            if fall < horizon_ticks {
                out.push(EdgeEvent {
                    tick: fall,
                    t: fall as f64 / clk,
                    gate,
                    direction: EdgeDirection::Falling,
                });
            }
        }
        nominal += latch.period_ticks;
    }
    degenerate
}

fn leg_edges_with_latch(
    pwm: &PwmConfig,
    latch: &Latch,
    leg: Leg,
    offset_ticks: u64,
    horizon_ticks: u64,
) -> LegEdges {
    let half = pwm.half_period_ticks();
    let period = pwm.period_ticks();
    let (high, low) = leg.gates();
    let high_offset = offset_ticks % period;
    let low_offset = (offset_ticks + half) % period;
    let mut events = Vec::new();
    let mut degenerate = emit_gate(
        latch,
        half,
        high,
        high_offset,
        horizon_ticks,
        pwm.clk,
        &mut events,
    );
    degenerate += emit_gate(
        latch,
        half,
        low,
        low_offset,
        horizon_ticks,
        pwm.clk,
        &mut events,
    );
    events.sort_by_key(EdgeEvent::sort_key);
    LegEdges {
        events,
        degenerate_pulses: degenerate,
    }
}

/// Edges of one leg whose carrier is displaced by `carrier_offset` seconds.
///
/// The high gate is nominally on during the first half of the displaced
/// carrier period, the low gate during the second half.
pub fn leg_edge_stream(
    pwm: &PwmConfig,
    sched: &DeadTimeSchedule,
    leg: Leg,
    carrier_offset: f64,
    horizon: f64,
) -> LegEdges {
    let horizon_ticks = to_ticks(horizon, pwm.clk);
    let latch = Latch::new(pwm, sched, horizon_ticks);
    if latch.deltas.is_empty() {
        return LegEdges {
            events: Vec::new(),
            degenerate_pulses: 0,
        };
    }
    let offset = to_ticks(carrier_offset, pwm.clk);
    leg_edges_with_latch(pwm, &latch, leg, offset, horizon_ticks)
}

/// Merged, time-ordered gate edges for all eight switches.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSchedule {
    pub events: Vec<EdgeEvent>,
    pub degenerate_pulses: usize,
    pub clk: f64,
    pub half_period_ticks: u64,
    pub enable_tick: u64,
    pub t_d_start: f64,
    latched: Vec<u64>,
}

pub fn build_gate_schedule(
    pwm: &PwmConfig,
    sched: &DeadTimeSchedule,
    horizon: f64,
) -> Result<GateSchedule, PwmError> {
    pwm.validate()?;
    sched.validate(pwm.nominal_period())?;
    if !(horizon > 0.0) {
        return Err(PwmError::NonPositiveHorizon(horizon));
    }
    let horizon_ticks = to_ticks(horizon, pwm.clk);
    let latch = Latch::new(pwm, sched, horizon_ticks);
    let half = pwm.half_period_ticks();
    let period = pwm.period_ticks() as i64;
    let phase = pwm.phase_offset_ticks().rem_euclid(period) as u64;

    let mut events = Vec::new();
    let mut degenerate_pulses = 0;
    if !latch.deltas.is_empty() {
        for (leg, offset) in [
            (Leg::PrimaryA, 0),
            (Leg::PrimaryB, half),
            (Leg::SecondaryA, phase),
            (Leg::SecondaryB, phase + half),
        ] {
            let le = leg_edges_with_latch(pwm, &latch, leg, offset, horizon_ticks);
            degenerate_pulses += le.degenerate_pulses;
            events.extend(le.events);
        }
    }
    events.sort_by_key(EdgeEvent::sort_key);
    Ok(GateSchedule {
        events,
        degenerate_pulses,
        clk: pwm.clk,
        half_period_ticks: half,
        enable_tick: latch.enable_tick,
        t_d_start: sched.t_d_start,
        latched: latch.deltas,
    })
}

/// A leg had both gates on at `tick`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("shoot-through on {leg:?} at tick {tick}")]
pub struct ShootThrough {
    pub tick: u64,
    pub leg: Leg,
}

impl GateSchedule {
    /// A schedule with no edges: every gate stays off.
    pub fn all_off(pwm: &PwmConfig) -> Self {
        Self {
            events: Vec::new(),
            degenerate_pulses: 0,
            clk: pwm.clk,
            half_period_ticks: pwm.half_period_ticks(),
            enable_tick: u64::MAX,
            t_d_start: 0.0,
            latched: Vec::new(),
        }
    }

    pub fn period_ticks(&self) -> u64 {
        2 * self.half_period_ticks
    }

    /// Copy of the schedule with the listed gates held off.
    pub fn without_gates(&self, gates: &[u8]) -> Self {
        let mut out = self.clone();
        out.events.retain(|e| !gates.contains(&e.gate));
        out
    }

    /// Per-edge delay latched for the carrier period containing `t`.
    pub fn per_edge_delay_at(&self, t: f64) -> f64 {
        let tick = (t * self.clk).floor();
        if self.latched.is_empty() || tick < self.enable_tick as f64 {
            return self.t_d_start / 2.0;
        }
        let j = ((tick as u64 - self.enable_tick) / self.period_ticks()) as usize;
        self.latched[j.min(self.latched.len() - 1)] as f64 / self.clk
    }

    /// Total dead time per period in force at `t`.
    pub fn dead_time_at(&self, t: f64) -> f64 {
        2.0 * self.per_edge_delay_at(t)
    }

    /// Scans the stream and reports the first instant any leg has both
    /// gates on.
    pub fn check_shoot_through(&self) -> Result<(), ShootThrough> {
        let mut gates = [false; 9];
        for e in &self.events {
            gates[e.gate as usize] = e.direction == EdgeDirection::Rising;
            let leg = Leg::of_gate(e.gate).expect("gate index in 1..=8");
            let (h, l) = leg.gates();
            if gates[h as usize] && gates[l as usize] {
                return Err(ShootThrough { tick: e.tick, leg });
            }
        }
        Ok(())
    }

    /// CSV with header `t_seconds,gate_index,direction`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_seconds,gate_index,direction")?;
        for e in &self.events {
            writeln!(w, "{},{},{}", e.t, e.gate, e.direction.as_str())?;
        }
        Ok(())
    }
}
