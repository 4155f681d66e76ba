//! Three-lobe lumped liver: hepatic artery and portal vein trees filling the
//! lobes, the hepatic vein tree draining them, and a lobe compliance
//! `c_l * m_i` per lobe.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Tree resistances (dyn s/cm^5), per-gram compliance `c_l` and lobe masses (g).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiverParams {
    pub r_ha: f64,
    pub r_pv: f64,
    pub r_l: f64,
    pub c_l: f64,
    pub lobe_masses: [f64; 3],
}

pub const DEFAULT_C_L: f64 = 1.5;
pub const DEFAULT_MASS: f64 = 1500.0;

impl LiverParams {
    /// Equal lobes of `DEFAULT_MASS / 3`.
    pub fn new(r_ha: f64, r_pv: f64, r_l: f64) -> Self {
        Self { r_ha, r_pv, r_l, c_l: DEFAULT_C_L, lobe_masses: [DEFAULT_MASS / 3.0; 3] }
    }

    pub fn mass(&self) -> f64 {
        self.lobe_masses.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_ha > 0.0 && self.r_pv > 0.0 && self.r_l > 0.0) {
            return Err(domain("liver resistances must be positive"));
        }
        if !(self.c_l > 0.0) {
            return Err(domain("liver compliance must be positive"));
        }
        if !self.lobe_masses.iter().all(|&m| m > 0.0) {
            return Err(domain("lobe masses must be positive"));
        }
        Ok(())
    }

    fn capacitance(&self) -> f64 {
        self.c_l * self.mass()
    }
}

/// Pressures at the three tree roots (dyn/cm^2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiverBoundary {
    pub p_a: f64,
    pub p_pv: f64,
    pub p_v: f64,
}

pub const DEFAULT_P_PV: f64 = 8000.0;
pub const DEFAULT_P_V: f64 = 4500.0;

fn coefficients(params: &LiverParams, bound: &LiverBoundary) -> (f64, f64) {
    let cm = params.capacitance();
    let c1 = (bound.p_a / params.r_ha + bound.p_pv / params.r_pv + bound.p_v / params.r_l) / cm;
    let c2 = -(1.0 / params.r_ha + 1.0 / params.r_pv + 1.0 / params.r_l) / cm;
    (c1, c2)
}

/// Right-hand side of `c_l m dp_t/dt = q_a + q_pv - q_v`.
pub fn pt_rate(p_t: f64, params: &LiverParams, bound: &LiverBoundary) -> f64 {
    let (c1, c2) = coefficients(params, bound);
    c1 + c2 * p_t
}

/// Tissue pressure after time `t` from `p_t0` with constant root pressures.
pub fn pt_analytic(t: f64, params: &LiverParams, bound: &LiverBoundary, p_t0: f64) -> f64 {
    let (c1, c2) = coefficients(params, bound);
    let eq = -c1 / c2;
    (p_t0 - eq) * (c2 * t).exp() + eq
}

/// Equilibrium tissue pressure, where inflow equals outflow.
pub fn pt_equilibrium(params: &LiverParams, bound: &LiverBoundary) -> f64 {
    let (c1, c2) = coefficients(params, bound);
    -c1 / c2
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeFlows {
    pub q_a: f64,
    pub q_pv: f64,
    pub q_v: f64,
    /// Per lobe `[q_a, q_pv, q_v]`, proportional to lobe mass.
    pub lobes: [[f64; 3]; 3],
}

pub fn lobe_flows(p_t: f64, params: &LiverParams, bound: &LiverBoundary) -> TreeFlows {
    let q_a = (bound.p_a - p_t) / params.r_ha;
    let q_pv = (bound.p_pv - p_t) / params.r_pv;
    let q_v = (p_t - bound.p_v) / params.r_l;
    let m = params.mass();
    let lobes = params.lobe_masses.map(|mi| {
        let f = mi / m;
        [f * q_a, f * q_pv, f * q_v]
    });
    TreeFlows { q_a, q_pv, q_v, lobes }
}

/// Resistances reproducing the given flows at tissue pressure `p_t`.
pub fn calibrate_resistances(bound: &LiverBoundary, p_t: f64, q_a: f64, q_pv: f64, q_v: f64) -> Result<(f64, f64, f64)> {
    if !(q_a > 0.0 && q_pv > 0.0 && q_v > 0.0) {
        return Err(domain(format!("liver flows must be positive (q_a {q_a}, q_pv {q_pv}, q_v {q_v})")));
    }
    if !(bound.p_a > p_t && bound.p_pv > p_t && p_t > bound.p_v) {
        return Err(domain(format!(
            "pressure ordering violated (p_a {}, p_pv {}, p_t {p_t}, p_v {})",
            bound.p_a, bound.p_pv, bound.p_v
        )));
    }
    Ok(((bound.p_a - p_t) / q_a, (bound.p_pv - p_t) / q_pv, (p_t - bound.p_v) / q_v))
}

/// Portal flow at three times arterial, outflow balancing both, and tissue
/// pressure 80% of the way from portal to venous pressure.
pub fn derive_liver_pressures_flows(q_a: f64, p_pv: f64, p_v: f64) -> Result<(f64, f64, f64)> {
    if !(q_a > 0.0) {
        return Err(domain(format!("hepatic artery flow must be positive, got {q_a}")));
    }
    if !(p_pv >= p_v) {
        return Err(domain(format!("portal pressure {p_pv} below venous pressure {p_v}")));
    }
    let q_pv = 3.0 * q_a;
    let q_v = q_a + q_pv;
    let p_t = p_pv - 0.8 * (p_pv - p_v);
    Ok((q_pv, q_v, p_t))
}
