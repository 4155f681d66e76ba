//! Ghost states at external segment ends: prescribed inflow, absorbing
//! outflow, a terminal resistance, and the RCR Windkessel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vessel::{CellState, End, Ghost, TubeLaw};

/// Knot positions (fractions of the period) of the inflow velocity profile:
/// flat zero, rise to the systolic peak, fall to the diastolic minimum, back to zero.
pub const DEFAULT_KNOTS: [f64; 4] = [0.15, 0.25, 0.42, 0.45];

/// Piecewise-linear velocity waveform over one cardiac cycle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflowWaveform {
    /// Peak systolic velocity (cm/s).
    pub ps: f64,
    /// Diastolic minimum (cm/s); negative for back-flow.
    pub ed: f64,
    pub period: f64,
    /// Velocity-time integral target (cm). When set the profile is rescaled
    /// so its cycle integral matches it.
    pub vti: Option<f64>,
    pub knots: [f64; 4],
}

impl InflowWaveform {
    pub fn new(ps: f64, ed: f64, period: f64) -> Self {
        Self { ps, ed, period, vti: None, knots: DEFAULT_KNOTS }
    }

    pub fn from_heart_rate(ps: f64, ed: f64, heart_rate: f64) -> Self {
        Self::new(ps, ed, 60.0 / heart_rate)
    }

    pub fn with_vti(mut self, vti: f64) -> Self {
        self.vti = Some(vti);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(crate::error::domain(format!("period must be positive, got {}", self.period)));
        }
        if !(self.ps >= 0.0) {
            return Err(crate::error::domain(format!("peak systolic velocity must be non-negative, got {}", self.ps)));
        }
        let k = self.knots;
        if !(0.0 <= k[0] && k[0] < k[1] && k[1] < k[2] && k[2] < k[3] && k[3] <= 1.0) {
            return Err(crate::error::domain("waveform knots must increase within [0, 1]"));
        }
        Ok(())
    }

    /// Cycle integral of the unscaled profile.
    pub fn raw_integral(&self) -> f64 {
        let [k0, k1, k2, k3] = self.knots;
        self.period * (0.5 * self.ps * (k1 - k0) + 0.5 * (self.ps + self.ed) * (k2 - k1) + 0.5 * self.ed * (k3 - k2))
    }

    pub fn amplitude_scale(&self) -> f64 {
        match self.vti {
            Some(vti) => {
                let raw = self.raw_integral();
                if raw == 0.0 {
                    1.0
                } else {
                    vti / raw
                }
            }
            None => 1.0,
        }
    }

    /// Mean velocity over a cycle.
    pub fn mean_velocity(&self) -> f64 {
        self.raw_integral() * self.amplitude_scale() / self.period
    }
}

/// Velocity of the waveform at time `t` (reduced modulo the period).
pub fn inflow_velocity(t: f64, w: &InflowWaveform) -> f64 {
    let phase = (t / w.period).rem_euclid(1.0);
    let [k0, k1, k2, k3] = w.knots;
    let lerp = |x0: f64, y0: f64, x1: f64, y1: f64| y0 + (y1 - y0) * (phase - x0) / (x1 - x0);
    let raw = if phase <= k0 {
        0.0
    } else if phase <= k1 {
        lerp(k0, 0.0, k1, w.ps)
    } else if phase <= k2 {
        lerp(k1, w.ps, k2, w.ed)
    } else if phase <= k3 {
        lerp(k2, w.ed, k3, 0.0)
    } else {
        0.0
    };
    raw * w.amplitude_scale()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalResistance {
    pub r: f64,
    pub p_out: f64,
}

/// Three-element Windkessel with capacitor pressure state `p_c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcrState {
    pub r_p: f64,
    pub r_d: f64,
    pub c: f64,
    pub p_out: f64,
    pub p_c: f64,
}

impl RcrState {
    /// Capacitor starts at zero pressure.
    pub fn new(r_p: f64, r_d: f64, c: f64, p_out: f64) -> Self {
        Self { r_p, r_d, c, p_out, p_c: 0.0 }
    }

    /// Split a total resistance 10% proximal / 90% distal.
    pub fn from_total(r_tot: f64, c: f64, p_out: f64) -> Self {
        Self::new(0.1 * r_tot, 0.9 * r_tot, c, p_out)
    }

    /// Explicit Euler update of the capacitor pressure for an outflow `q`.
    pub fn advance_capacitor(&mut self, q: f64, dt: f64) {
        self.p_c += dt * (q - (self.p_c - self.p_out) / self.r_d) / self.c;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InflowProfile {
    Pulsatile(InflowWaveform),
    Constant(f64),
}

impl InflowProfile {
    pub fn velocity(&self, t: f64) -> f64 {
        match self {
            InflowProfile::Pulsatile(w) => inflow_velocity(t, w),
            InflowProfile::Constant(v) => *v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundaryCondition {
    /// Prescribed velocity; `v` is measured along +x.
    Inflow(InflowProfile),
    Absorbing { reference: CellState },
    Terminal(TerminalResistance),
    Rcr(RcrState),
}

impl BoundaryCondition {
    /// Ghost for this step. The RCR capacitor is advanced by `dt` first.
    pub fn resolve(&mut self, t: f64, dt: f64, end: End, trace: CellState, law: &TubeLaw, rho: f64) -> Result<Ghost> {
        match self {
            BoundaryCondition::Inflow(profile) => {
                let s = apply_inflow(trace, profile.velocity(t), law, rho, end)?;
                Ok(Ghost::Interface(s))
            }
            BoundaryCondition::Absorbing { reference } => Ok(apply_absorbing(*reference)),
            BoundaryCondition::Terminal(tr) => Ok(Ghost::Interface(apply_terminal_resistance(trace, tr, law, rho, end)?)),
            BoundaryCondition::Rcr(rcr) => Ok(Ghost::Interface(apply_rcr(trace, rcr, law, rho, dt, end)?)),
        }
    }
}

/// Time-independent external state at the reference values.
pub fn apply_absorbing(reference: CellState) -> Ghost {
    Ghost::Neighbor(reference)
}

/// Interface state carrying the prescribed velocity `v_in`, with the area
/// fixed by the invariant leaving the segment through this end.
pub fn apply_inflow(trace: CellState, v_in: f64, law: &TubeLaw, rho: f64, end: End) -> Result<CellState> {
    let s = end.sign();
    let w_out = trace.v + s * law.potential(trace.a, rho);
    let phi = s * (w_out - v_in);
    let a = law
        .area_for_potential(phi, rho)
        .ok_or_else(|| Error::Boundary(format!("no area matches prescribed velocity {v_in} (outgoing invariant {w_out})")))?;
    Ok(CellState::new(a, v_in))
}

const NEWTON_MAX: usize = 60;

/// Solve `r * q(a) = P(a) - p_down` where `q(a) = sign * a * v(a)` is the
/// outflow and `v(a)` follows from the outgoing invariant.
fn resistive_area(trace: CellState, r: f64, p_down: f64, law: &TubeLaw, rho: f64, end: End) -> Result<f64> {
    let s = end.sign();
    let w = trace.v + s * law.potential(trace.a, rho);
    let residual = |a: f64| {
        let v = w - s * law.potential(a, rho);
        let q = s * a * v;
        (r * q - (law.pressure(a) - p_down), v)
    };
    let mut a = trace.a;
    for _ in 0..NEWTON_MAX {
        let (f, v) = residual(a);
        let c = law.wave_speed(a, rho);
        let df = r * (s * v - c) - law.dp_da(a);
        if df == 0.0 || !df.is_finite() {
            break;
        }
        let delta = -f / df;
        let mut step = 1.0;
        let mut halvings = 0;
        while !(a + step * delta > 0.0) {
            step *= 0.5;
            halvings += 1;
            if halvings > 60 {
                return Err(Error::Boundary("area iterate stays non-positive".into()));
            }
        }
        let next = a + step * delta;
        let done = (next - a).abs() <= 1e-14 * a;
        a = next;
        if done {
            return Ok(a);
        }
    }
    let (f, _) = residual(a);
    let scale = (law.pressure(a) - p_down).abs().max(law.p0.abs()).max(1.0);
    if f.abs() <= 1e-9 * scale {
        Ok(a)
    } else {
        Err(Error::Boundary(format!("resistance coupling did not converge (residual {f:e})")))
    }
}

fn resistive_state(a: f64, r: f64, p_down: f64, law: &TubeLaw, end: End) -> CellState {
    let q = (law.pressure(a) - p_down) / r;
    CellState::new(a, end.sign() * q / a)
}

/// Interface state for a vessel end draining through resistance `r` into `p_out`.
pub fn apply_terminal_resistance(trace: CellState, tr: &TerminalResistance, law: &TubeLaw, rho: f64, end: End) -> Result<CellState> {
    let a = resistive_area(trace, tr.r, tr.p_out, law, rho, end)?;
    Ok(resistive_state(a, tr.r, tr.p_out, law, end))
}

/// Advance the capacitor with the trace outflow, then couple the proximal
/// resistance against the capacitor pressure.
pub fn apply_rcr(trace: CellState, rcr: &mut RcrState, law: &TubeLaw, rho: f64, dt: f64, end: End) -> Result<CellState> {
    rcr.advance_capacitor(end.sign() * trace.flow(), dt);
    let a = resistive_area(trace, rcr.r_p, rcr.p_c, law, rho, end)?;
    Ok(resistive_state(a, rcr.r_p, rcr.p_c, law, end))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn waveform_knot_values() {
        let w = InflowWaveform::new(80.0, -12.0, 0.8);
        assert_eq!(inflow_velocity(0.0, &w), 0.0);
        assert_relative_eq!(inflow_velocity(0.25 * 0.8, &w), 80.0, max_relative = 1e-12);
        assert_relative_eq!(inflow_velocity(0.20 * 0.8, &w), 40.0, max_relative = 1e-12);
        assert_relative_eq!(inflow_velocity(0.42 * 0.8, &w), -12.0, max_relative = 1e-12);
        assert_eq!(inflow_velocity(0.7 * 0.8, &w), 0.0);
    }

    #[test]
    fn vti_rescale_matches_target_integral() {
        let w = InflowWaveform::new(80.0, -12.0, 0.8).with_vti(15.0);
        // fine trapezoid of the rescaled profile
        let n = 800_000;
        let h = w.period / n as f64;
        let mut sum = 0.0;
        for k in 0..n {
            sum += 0.5 * (inflow_velocity(k as f64 * h, &w) + inflow_velocity((k + 1) as f64 * h, &w)) * h;
        }
        assert!((sum - 15.0).abs() < 1e-9 * 15.0, "{sum}");
        assert_relative_eq!(w.mean_velocity(), 15.0 / 0.8, max_relative = 1e-14);
    }

    #[test]
    fn absorbing_is_time_independent() {
        let r = CellState::new(0.4, 0.0);
        let mut bc = BoundaryCondition::Absorbing { reference: r };
        let law = TubeLaw::artery(4e5, 0.4, 1e5);
        let g1 = bc.resolve(0.0, 1e-4, End::Right, CellState::new(0.5, 10.0), &law, 1.05).unwrap();
        let g2 = bc.resolve(1.0, 1e-4, End::Right, CellState::new(0.3, -2.0), &law, 1.05).unwrap();
        assert_eq!(g1, Ghost::Neighbor(r));
        assert_eq!(g1, g2);
    }

    #[test]
    fn terminal_rest_state() {
        let law = TubeLaw::artery(4e5, 0.4, 1e5);
        let tr = TerminalResistance { r: 2e4, p_out: 1e5 };
        let s = apply_terminal_resistance(CellState::new(0.4, 0.0), &tr, &law, 1.05, End::Right).unwrap();
        assert_relative_eq!(s.a, 0.4, max_relative = 1e-12);
        assert!(s.v.abs() < 1e-9);
    }

    #[test]
    fn terminal_large_resistance_stops_flow() {
        let law = TubeLaw::artery(4e5, 0.4, 1e5);
        let trace = CellState::new(0.42, 15.0);
        let mut last = f64::INFINITY;
        for r in [1e4, 1e6, 1e8, 1e10] {
            let s = apply_terminal_resistance(trace, &TerminalResistance { r, p_out: 0.0 }, &law, 1.05, End::Right).unwrap();
            assert!(s.v.abs() < last);
            last = s.v.abs();
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn terminal_state_keeps_outgoing_invariant() {
        let law = TubeLaw::artery(4e5, 0.4, 1e5);
        let trace = CellState::new(0.42, 15.0);
        let tr = TerminalResistance { r: 5e3, p_out: 2e4 };
        let s = apply_terminal_resistance(trace, &tr, &law, 1.05, End::Right).unwrap();
        let (w_trace, _) = law.riemann(trace, 1.05);
        let (w_star, _) = law.riemann(s, 1.05);
        assert_relative_eq!(w_star, w_trace, max_relative = 1e-10);
        assert_relative_eq!(s.flow() * tr.r, law.pressure(s.a) - tr.p_out, max_relative = 1e-10);
    }

    #[test]
    fn capacitor_hand_value() {
        let mut rcr = RcrState::new(100.0, 1000.0, 4e-5, 0.0);
        rcr.advance_capacitor(10.0, 1e-4);
        assert_relative_eq!(rcr.p_c, 25.0, max_relative = 1e-12);
    }

    #[test]
    fn capacitor_stays_zero_without_flow() {
        let mut rcr = RcrState::new(100.0, 1000.0, 4e-5, 0.0);
        for _ in 0..10_000 {
            rcr.advance_capacitor(0.0, 1e-4);
        }
        assert_eq!(rcr.p_c, 0.0);
    }

    #[test]
    fn capacitor_approaches_fixed_point_without_overshoot() {
        let (q, r_d, c) = (5.0, 1.8e4, 4e-5);
        let mut rcr = RcrState::new(2e3, r_d, c, 0.0);
        let dt = r_d * c / 10.0;
        let target = q * r_d;
        let mut prev = rcr.p_c;
        for _ in 0..500 {
            rcr.advance_capacitor(q, dt);
            assert!(rcr.p_c >= prev && rcr.p_c <= target);
            prev = rcr.p_c;
        }
        assert_relative_eq!(rcr.p_c, target, max_relative = 1e-9);
    }

    #[test]
    fn rcr_with_pinned_capacitor_matches_terminal() {
        let law = TubeLaw::artery(4e5, 0.4, 1e5);
        let trace = CellState::new(0.41, 12.0);
        let r = 3e3;
        let p_out = 1e4;
        // a huge capacitance pins p_c at its initial value
        let mut rcr = RcrState { r_p: r, r_d: 7e4, c: 1e30, p_out, p_c: p_out };
        let a = apply_rcr(trace, &mut rcr, &law, 1.05, 1e-4, End::Right).unwrap();
        let b = apply_terminal_resistance(trace, &TerminalResistance { r, p_out }, &law, 1.05, End::Right).unwrap();
        assert_relative_eq!(a.a, b.a, max_relative = 1e-14);
        assert_relative_eq!(a.v, b.v, max_relative = 1e-12);
    }

    #[test]
    fn inflow_area_follows_outgoing_invariant() {
        let law = TubeLaw::artery(4e5, 0.4, 1e5);
        let trace = CellState::new(0.4, 0.0);
        let s = apply_inflow(trace, 30.0, &law, 1.05, End::Left).unwrap();
        assert_eq!(s.v, 30.0);
        let (_, w2_trace) = law.riemann(trace, 1.05);
        let (_, w2) = law.riemann(s, 1.05);
        assert_relative_eq!(w2, w2_trace, max_relative = 1e-12);
        assert!(s.a > 0.4);
    }

    proptest! {
        #[test]
        fn waveform_is_periodic(t in 0.0f64..10.0, ps in 0.0f64..150.0, ed in -30.0f64..30.0, hr in 40.0f64..120.0) {
            let w = InflowWaveform::from_heart_rate(ps, ed, hr);
            let p = w.period;
            // shift by whole periods on the phase grid to avoid rounding in t itself
            let k = 3.0;
            let a = inflow_velocity(t, &w);
            let b = inflow_velocity(t + k * p, &w);
            prop_assert!((a - b).abs() <= 1e-9 * (ps + ed.abs() + 1.0));
        }
    }
}
