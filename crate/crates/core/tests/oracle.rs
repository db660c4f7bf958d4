//! Cross-check of the event-driven solver against a brute-force fixed-step
//! RK4 integration of the same switched network.

use dabsim_core::analysis::{effective_conduction, integrate_averaged_model, AveragedState};
use dabsim_core::circuit::{resolve_topology, RATED_POWER};
use dabsim_core::pwm::{build_gate_schedule, EdgeDirection, DEFAULT_CLOCK_HZ};
use dabsim_core::softstart::{strategy_hard, strategy_variable_ramp};
use dabsim_core::{
    simulate, simulate_schedule, ConverterState, DabParams, GateSchedule, GateVector, LoadModel,
    PwmConfig, SolverConfig,
};

const H: f64 = 1e-9;
/// The brute force snaps diode turn-off to its 1 ns grid, worth about 2e-4.
const REL: f64 = 2e-3;

fn rhs(gates: &GateVector, i: f64, v: f64, p: &DabParams) -> (f64, f64) {
    let topo = resolve_topology(gates, i, v.max(0.0), p).unwrap();
    let i_load = p.load.current(v);
    if topo.blocked {
        return (0.0, -i_load / p.c_out);
    }
    let di = topo.drive(v, p.n) / p.l_e;
    let dv = (topo.s as f64 * i / p.n - i_load) / p.c_out;
    (di, dv)
}

fn rk4_step(gates: &GateVector, i: f64, v: f64, h: f64, p: &DabParams) -> (f64, f64) {
    let topo = resolve_topology(gates, i, v, p).unwrap();
    if topo.blocked {
        let v1 = v - p.load.current(v) * h / p.c_out;
        return (0.0, v1.max(0.0));
    }
    let k1 = rhs(gates, i, v, p);
    let k2 = rhs(gates, i + 0.5 * h * k1.0, v + 0.5 * h * k1.1, p);
    let k3 = rhs(gates, i + 0.5 * h * k2.0, v + 0.5 * h * k2.1, p);
    let k4 = rhs(gates, i + h * k3.0, v + h * k3.1, p);
    let mut i1 = i + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
    let v1 = v + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    // a diode cannot carry reverse current
    if topo.diode_dependent() && i != 0.0 && i1.signum() != i.signum() {
        i1 = 0.0;
    }
    (i1, v1.max(0.0))
}

/// States at every gate edge, integrated from rest.
fn brute_force(p: &DabParams, sched: &GateSchedule, t_end: f64) -> Vec<(f64, f64, f64)> {
    let mut gates = GateVector::all_off();
    let (mut t, mut i, mut v) = (0.0, 0.0, 0.0);
    let mut out = Vec::new();
    let mut k = 0;
    while t < t_end {
        let next_edge = sched.events.get(k).map_or(t_end, |e| e.t.min(t_end));
        while t < next_edge {
            let h = H.min(next_edge - t);
            (i, v) = rk4_step(&gates, i, v, h, p);
            t = if next_edge - t <= H { next_edge } else { t + h };
        }
        while k < sched.events.len() && sched.events[k].t <= t {
            let e = &sched.events[k];
            gates.set(e.gate, e.direction == EdgeDirection::Rising);
            k += 1;
        }
        out.push((t, i, v));
    }
    out
}

struct Case {
    p: DabParams,
    d: f64,
    t_ramp: Option<f64>,
    t_end: f64,
}

/// Largest state differences at the edge instants, relative to the largest
/// current and voltage seen.
fn compare(case: &Case) -> (f64, f64) {
    let pwm = PwmConfig::new(case.p.f_sw, DEFAULT_CLOCK_HZ, case.d, case.t_end).unwrap();
    let sched = match case.t_ramp {
        None => strategy_hard(&pwm, 0.0, 600e-9).unwrap(),
        Some(r) => strategy_variable_ramp(&pwm, 0.0, r, 600e-9).unwrap(),
    };
    let gates = build_gate_schedule(&pwm, &sched, case.t_end).unwrap();
    let cfg = SolverConfig::for_switching_frequency(case.p.f_sw);
    let trace =
        simulate_schedule(&case.p, &gates, &cfg, case.t_end, ConverterState::default()).unwrap();
    let reference = brute_force(&case.p, &gates, case.t_end);

    let i_scale = trace.i_l.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let v_scale = trace.v_dc.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let (mut di, mut dv) = (0.0f64, 0.0f64);
    let mut matched = 0;
    let mut j = 0;
    for &(t, i, v) in &reference {
        while j + 1 < trace.len() && trace.t[j] < t - 1e-12 {
            j += 1;
        }
        if (trace.t[j] - t).abs() <= 1e-12 {
            // the trace keeps the post-edge state; currents are continuous
            di = di.max((trace.i_l[j] - i).abs() / i_scale);
            dv = dv.max((trace.v_dc[j] - v).abs() / v_scale);
            matched += 1;
        }
    }
    assert!(
        matched * 10 > reference.len() * 9,
        "{matched} of {}",
        reference.len()
    );
    (di, dv)
}

fn rated(load: LoadModel) -> DabParams {
    DabParams {
        load,
        ..DabParams::rated()
    }
}

#[test]
fn hard_start_matches_brute_force() {
    let (di, dv) = compare(&Case {
        p: rated(LoadModel::None),
        d: 0.1,
        t_ramp: None,
        t_end: 0.6e-3,
    });
    assert!(di < REL && dv < REL, "di {di:e} dv {dv:e}");
}

#[test]
fn diode_dominated_ramp_matches_brute_force() {
    let (di, dv) = compare(&Case {
        p: rated(LoadModel::None),
        d: 0.0,
        t_ramp: Some(2e-3),
        t_end: 2.5e-3,
    });
    assert!(di < REL && dv < REL, "di {di:e} dv {dv:e}");
}

#[test]
fn loaded_starts_match_brute_force() {
    let r = Case {
        p: rated(LoadModel::Resistive { ohms: 28.0 }),
        d: 0.05,
        t_ramp: Some(1e-3),
        t_end: 1.5e-3,
    };
    let (di, dv) = compare(&r);
    assert!(di < REL && dv < REL, "resistive: di {di:e} dv {dv:e}");
    let c = Case {
        p: rated(LoadModel::ConstantCurrent { amps: 5.0 }),
        d: 0.0,
        t_ramp: Some(1e-3),
        t_end: 1.5e-3,
    };
    let (di, dv) = compare(&c);
    assert!(
        di < REL && dv < REL,
        "constant current: di {di:e} dv {dv:e}"
    );
}

/// The averaged model ignores diode rectification and the dead-time detail,
/// so it only tracks the switching model once the dead time is small. With
/// the rated resistive load it must agree within 15% from 90% of the ramp on.
#[test]
fn averaged_model_tracks_final_ramp_stage() {
    let p = rated(LoadModel::Resistive {
        ohms: 650.0 * 650.0 / RATED_POWER,
    });
    let d = dabsim_core::default_phase_command(&p);
    let (t_en, ramp) = (0.01, 0.150);
    let t_end = t_en + ramp + 0.05;
    let pwm = PwmConfig::new(p.f_sw, DEFAULT_CLOCK_HZ, d, t_end).unwrap();
    let sched = strategy_variable_ramp(&pwm, t_en, ramp, 600e-9).unwrap();
    let cfg = SolverConfig::for_switching_frequency(p.f_sw);
    let trace = simulate(&p, &pwm, &sched, &cfg, t_end, ConverterState::default()).unwrap();
    let t_sw = pwm.effective_period();
    let avg = integrate_averaged_model(
        &p,
        |_| d,
        |t| effective_conduction(sched.dead_time_at(t), t_sw),
        AveragedState::default(),
        t_end,
        1e-5,
    )
    .unwrap();
    assert!(avg.windows(2).all(|w| w[1].v_dc >= w[0].v_dc));

    let mut worst = 0.0f64;
    let mut t = t_en + 0.9 * ramp;
    while t <= t_end {
        let k = trace.t.partition_point(|&x| x < t).min(trace.len() - 1);
        let j = avg.partition_point(|s| s.t < t).min(avg.len() - 1);
        worst = worst.max((trace.v_dc[k] - avg[j].v_dc).abs() / avg[j].v_dc);
        t += 1e-3;
    }
    assert!(worst < 0.15, "worst relative gap {worst}");
}
