//! Switching-level simulator for Dual Active Bridge (DAB) converter startup.
//!
//! The crate is organised bottom-up:
//!
//! * [`pwm`] emulates an up-down counter PWM peripheral and produces the eight
//!   gate edge streams with programmable dead-band and phase shift.
//! * [`circuit`] resolves the instantaneous switched topology (commanded
//!   switches, body-diode freewheeling, zero-current blocking).
//! * [`solver`] advances the two-state model between gate edges with exact
//!   closed-form updates and locates diode commutation events.
//! * [`softstart`] builds dead-time schedules for the startup strategies.
//! * [`analysis`] holds the averaged-model equations, the averaged oracle and
//!   startup metrics.

// Negated comparisons make NaN fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod circuit;
pub mod pwm;
pub mod softstart;
pub mod solver;

pub use analysis::{
    averaged_cap_current, averaged_dvdc_dt, cap_energy, compute_metrics, effective_conduction,
    energy_balance, energy_balance_residual, integrate_averaged_model, power_sps, AnalysisError,
    AveragedState, EnergyBalance, StartupMetrics,
};
pub use circuit::{
    BridgeVoltage, CircuitError, ConverterState, DabParams, GateVector, LegState, LoadModel,
};
pub use pwm::{EdgeDirection, EdgeEvent, GateSchedule, PwmConfig, PwmError};
pub use softstart::{
    default_phase_command, DeadTimeSchedule, ScheduleError, StartupStrategy, StrategyKind,
};
pub use solver::{simulate, simulate_schedule, SolverConfig, SolverError, WaveformTrace};
