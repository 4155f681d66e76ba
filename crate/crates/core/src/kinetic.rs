//! Kinetic finite-volume update for one vessel segment.
//!
//! Each cell carries a microscopic distribution `M = (a/gamma) chi((xi - v)/gamma)`
//! with `chi` the indicator of `[-sqrt3, sqrt3]` scaled by `1/(2 sqrt3)`. Interface
//! fluxes are the half-moments of `M` over `xi >= 0` from the left cell plus
//! `xi <= 0` from the right cell, which keeps every area non-negative under the
//! CFL bound `dt * max(|v| + sqrt3 gamma) <= dx`.

use crate::error::{domain, Error, Result};
use crate::vessel::{CellState, Ghost, TubeLaw, VesselSegment};

pub const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Default CFL safety factor.
pub const DEFAULT_SAFETY: f64 = 0.9;

/// Half-moments of the distribution: `u*` over `xi >= 0`, `v*` over `xi <= 0`.
/// Index 1 is the mass flux, index 2 the momentum flux.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FluxMoments {
    pub u1: f64,
    pub v1: f64,
    pub u2: f64,
    pub v2: f64,
}

/// Closed-form half-moments for a cell state and its kinetic speed.
///
/// With `xi = v + gamma * omega` the integrals reduce to
/// `a / (2 sqrt3 gamma (q+1)) [xi^(q+1)]` between the clamped support limits.
pub fn flux_moments(state: CellState, gamma: f64) -> FluxMoments {
    let CellState { a, v } = state;
    if gamma <= 0.0 {
        // all mass travels at v
        return if v >= 0.0 {
            FluxMoments { u1: a * v, v1: 0.0, u2: a * v * v, v2: 0.0 }
        } else {
            FluxMoments { u1: 0.0, v1: a * v, u2: 0.0, v2: a * v * v }
        };
    }
    let half_width = SQRT3 * gamma;
    let lo = v - half_width;
    let hi = v + half_width;
    let k1 = a / (4.0 * SQRT3 * gamma);
    let k2 = a / (6.0 * SQRT3 * gamma);

    let (pl, ph) = (lo.max(0.0), hi.max(0.0));
    let (nl, nh) = (lo.min(0.0), hi.min(0.0));
    FluxMoments {
        u1: k1 * (ph * ph - pl * pl),
        v1: k1 * (nh * nh - nl * nl),
        u2: k2 * (ph * ph * ph - pl * pl * pl),
        v2: k2 * (nh * nh * nh - nl * nl * nl),
    }
}

/// Physical flux `(a v, a v^2 + a gamma^2)` of a state.
pub fn physical_flux(state: CellState, gamma: f64) -> (f64, f64) {
    let q = state.a * state.v;
    (q, q * state.v + state.a * gamma * gamma)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub dt_used: f64,
    pub max_courant: f64,
    pub min_area: f64,
    /// Mass flux through the left boundary interface, positive along +x.
    pub left_mass_flux: f64,
    /// Mass flux through the right boundary interface, positive along +x.
    pub right_mass_flux: f64,
}

fn ghost_flux(ghost: Ghost, edge: &FluxMoments, law: &TubeLaw, rho: f64, left: bool) -> (f64, f64) {
    match ghost {
        Ghost::Interface(s) => physical_flux(s, law.gamma(s.a, rho)),
        Ghost::Neighbor(s) => {
            let g = flux_moments(s, law.gamma(s.a, rho));
            if left {
                (g.u1 + edge.v1, g.u2 + edge.v2)
            } else {
                (edge.u1 + g.v1, edge.u2 + g.v2)
            }
        }
    }
}

fn signal_speed(s: CellState, gamma: f64) -> f64 {
    s.v.abs() + SQRT3 * gamma
}

/// Advance every cell of `segment` by `dt`, reading (never writing) its ghosts.
pub fn step_interior(segment: &mut VesselSegment, dt: f64) -> Result<StepReport> {
    let law = segment.law;
    let fluid = segment.fluid;
    let rho = fluid.rho;
    let lambda = dt / segment.dx;

    let mut max_speed = 0.0_f64;
    let moments: Vec<FluxMoments> = segment
        .cells
        .iter()
        .map(|&c| {
            let g = law.gamma(c.a, rho);
            max_speed = max_speed.max(signal_speed(c, g));
            flux_moments(c, g)
        })
        .collect();
    let max_courant = max_speed * lambda;
    if max_courant > 1.0 + 1e-12 {
        return Err(Error::Unstable { courant: max_courant });
    }

    let n = moments.len();
    let (left_mass, left_mom) = ghost_flux(segment.left, &moments[0], &law, rho, true);
    let (right_mass, right_mom) = ghost_flux(segment.right, &moments[n - 1], &law, rho, false);

    let mut flux_in = (left_mass, left_mom);
    let mut min_area = f64::INFINITY;
    for i in 0..n {
        let flux_out = if i + 1 < n {
            (moments[i].u1 + moments[i + 1].v1, moments[i].u2 + moments[i + 1].v2)
        } else {
            (right_mass, right_mom)
        };
        let cell = segment.cells[i];
        let a_new = cell.a - lambda * (flux_out.0 - flux_in.0);
        let x_new = cell.a * cell.v - lambda * (flux_out.1 - flux_in.1)
            + dt * (fluid.g * cell.a - fluid.k_f * cell.v);
        if !(a_new > 0.0) || !a_new.is_finite() {
            return Err(Error::NonPositiveArea { cell: i, area: a_new });
        }
        segment.cells[i] = CellState::new(a_new, x_new / a_new);
        min_area = min_area.min(a_new);
        flux_in = flux_out;
    }

    Ok(StepReport {
        dt_used: dt,
        max_courant,
        min_area,
        left_mass_flux: left_mass,
        right_mass_flux: right_mass,
    })
}

/// Largest stable step scaled by `safety`: `safety * dx / max(|v| + sqrt3 gamma)`.
pub fn stable_dt(segment: &VesselSegment, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(domain(format!("safety factor must lie in (0, 1], got {safety}")));
    }
    let rho = segment.fluid.rho;
    let max_speed = segment
        .cells
        .iter()
        .map(|&c| signal_speed(c, segment.law.gamma(c.a, rho)))
        .fold(0.0_f64, f64::max);
    if !(max_speed > 0.0) || !max_speed.is_finite() {
        return Err(domain("segment has no signal speed; stable step undefined"));
    }
    Ok(safety * segment.dx / max_speed)
}

/// Mean of the tube-law pressure over a recorded series of end-cell areas.
pub fn boundary_pressure(law: &TubeLaw, areas: &[f64]) -> Result<f64> {
    if areas.is_empty() {
        return Err(domain("empty area series"));
    }
    let mut sum = 0.0;
    for &a in areas {
        sum += crate::vessel::tube_pressure(a, law)?;
    }
    Ok(sum / areas.len() as f64)
}
