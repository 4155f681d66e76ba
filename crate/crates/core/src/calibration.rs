//! Per-subject parameter estimation: arterial stiffness from arm flows,
//! peripheral resistance from the right arm, and liver resistances from the
//! abdominal aorta / hepatic artery bifurcation.

use crate::boundary::{BoundaryCondition, InflowProfile, InflowWaveform, RcrState};
use crate::cohort::{area_from_diameter, Site, SubjectRecord};
use crate::config::{HaDiameter, RunConfig};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kinetic::{boundary_pressure, stable_dt};
use crate::liver::{calibrate_resistances, derive_liver_pressures_flows, LiverBoundary, LiverParams};
use crate::network::{cycle_mean, simulate, JunctionSpec, Network, ProbeSeries, SimOptions};
use crate::vessel::{CellState, End, FluidParams, TubeLaw, VesselSegment};

/// Fraction of the rest-state stability limit used when fixing a step for a
/// whole run; leaves room for the faster signals during systole.
pub const REST_CFL_MARGIN: f64 = 0.6;

/// Brachial-to-radial arm: the brachial artery feeds two identical radial
/// branches, one of which is simulated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmSetup {
    pub brachial_a0: f64,
    pub radial_a0: f64,
    pub waveform: InflowWaveform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    /// Sites h (brachial) and g (radial).
    Left,
    /// Sites d (brachial) and c (radial).
    Right,
}

impl Arm {
    pub fn sites(self) -> (Site, Site) {
        match self {
            Arm::Left => (Site::H, Site::G),
            Arm::Right => (Site::D, Site::C),
        }
    }
}

impl ArmSetup {
    pub fn from_subject(subject: &SubjectRecord, arm: Arm) -> Result<Self> {
        let (b, r) = arm.sites();
        subject.require(&[b, r])?;
        Ok(Self {
            brachial_a0: area_from_diameter(subject.diameter(b)?),
            radial_a0: area_from_diameter(subject.diameter(r)?),
            waveform: subject.waveform(b)?,
        })
    }
}

fn artery(length: f64, beta: f64, a0: f64, cfg: &RunConfig, rho: f64) -> Result<VesselSegment> {
    VesselSegment::at_rest(length, cfg.dx, TubeLaw::artery(beta, a0, cfg.p0), FluidParams::new(rho, cfg.mu))
}

/// Probes: radial midpoint, radial far end, brachial midpoint.
pub fn arm_network(setup: &ArmSetup, beta: f64, cfg: &RunConfig) -> Result<Network> {
    let mut net = Network::new();
    let b = net.add_segment("brachial", artery(cfg.arm_length, beta, setup.brachial_a0, cfg, cfg.rho)?);
    let r = net.add_segment("radial", artery(cfg.arm_length, beta, setup.radial_a0, cfg, cfg.rho)?);
    net.add_boundary(b, End::Left, BoundaryCondition::Inflow(InflowProfile::Pulsatile(setup.waveform)));
    net.add_junction(JunctionSpec::Bifurcation { parent: b, children: [r, r] });
    net.add_boundary(r, End::Right, BoundaryCondition::Absorbing { reference: CellState::new(setup.radial_a0, 0.0) });
    net.add_probe(r, 0.5);
    net.add_probe(r, 1.0);
    net.add_probe(b, 0.5);
    Ok(net)
}

/// A step that divides `period` evenly, no larger than `cfg.dt` nor than
/// `REST_CFL_MARGIN` of the rest-state limit of `net`.
pub fn cycle_step(net: &Network, period: f64, cfg: &RunConfig) -> Result<f64> {
    let mut cap = cfg.dt;
    for s in &net.segments {
        cap = cap.min(stable_dt(s, 1.0)? * REST_CFL_MARGIN);
    }
    let n = (period / cap - 1e-9).ceil().max(1.0);
    Ok(period / n)
}

/// The step used for every point of an arm sweep, set by the stiffest vessel.
pub fn arm_step(setup: &ArmSetup, cfg: &RunConfig) -> Result<f64> {
    cycle_step(&arm_network(setup, cfg.sweep.beta_max, cfg)?, setup.waveform.period, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmRun {
    /// Cycle-mean flow at the radial midpoint.
    pub q_mid: f64,
    /// Cycle-mean pressure at the radial far end.
    pub p_end: f64,
    /// Cycle-mean flow at the brachial midpoint.
    pub q_brachial: f64,
    /// Velocity extremes at the radial midpoint over the measured cycle.
    pub v_max: f64,
    pub v_min: f64,
    pub v_mean: f64,
}

fn window_start(series: &ProbeSeries, period: f64) -> usize {
    let n = series.len();
    let t_start = series.times[n - 1] - period;
    series.times.partition_point(|&t| t < t_start - 1e-9 * period)
}

fn window(series: &ProbeSeries, period: f64) -> &[f64] {
    &series.a[window_start(series, period)..series.len() - 1]
}

/// Simulate warm-up cycles plus one measured cycle at a fixed step `dt`.
pub fn run_arm(setup: &ArmSetup, beta: f64, dt: f64, cfg: &RunConfig) -> Result<ArmRun> {
    let mut net = arm_network(setup, beta, cfg)?;
    let period = setup.waveform.period;
    let out = simulate(&mut net, (cfg.warmup_cycles + 1) as f64 * period, &SimOptions::fixed(dt))?;
    let law = net.segments[1].law;
    let mid = &out.probes[0];
    let v = &mid.v[window_start(mid, period)..mid.len() - 1];
    let mean = cycle_mean(mid, period)?;
    Ok(ArmRun {
        q_mid: mean.q,
        p_end: boundary_pressure(&law, window(&out.probes[1], period))?,
        q_brachial: cycle_mean(&out.probes[2], period)?.q,
        v_max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        v_min: v.iter().copied().fold(f64::INFINITY, f64::min),
        v_mean: mean.v,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub beta: f64,
    pub q_sim: f64,
    pub mismatch: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSweep {
    pub arm: Arm,
    pub q_measured: f64,
    pub dt: f64,
    /// One entry per grid point.
    pub coarse: Vec<SweepPoint>,
    /// Golden-section evaluations in order.
    pub refined: Vec<SweepPoint>,
    pub beta: f64,
    pub unimodal: bool,
}

fn local_minima(curve: &[SweepPoint]) -> usize {
    let n = curve.len();
    (0..n)
        .filter(|&i| {
            let f = curve[i].mismatch;
            (i == 0 || f < curve[i - 1].mismatch) && (i + 1 == n || f < curve[i + 1].mismatch)
        })
        .count()
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Grid sweep of `|q_measured - q_sim(beta)|`, then golden-section
/// refinement between the neighbours of the grid minimizer.
pub fn sweep_arm(setup: &ArmSetup, arm: Arm, q_measured: f64, cfg: &RunConfig, exec: Execution) -> Result<ArmSweep> {
    let s = &cfg.sweep;
    let dt = arm_step(setup, cfg)?;
    let step = (s.beta_max - s.beta_min) / (s.points - 1) as f64;
    let grid: Vec<f64> = (0..s.points).map(|k| s.beta_min + k as f64 * step).collect();
    // a stiffness at which the arm cannot be simulated (a choked junction,
    // say) scores as an infinite mismatch
    let eval = |beta: f64| -> SweepPoint {
        match run_arm(setup, beta, dt, cfg) {
            Ok(run) => SweepPoint { beta, q_sim: run.q_mid, mismatch: (q_measured - run.q_mid).abs() },
            Err(e) => {
                log::warn!("{arm:?} arm at beta {beta}: {e}");
                SweepPoint { beta, q_sim: f64::NAN, mismatch: f64::INFINITY }
            }
        }
    };
    let coarse = exec.map(&grid, |&b| eval(b));
    if coarse.iter().all(|p| p.mismatch.is_infinite()) {
        return Err(Error::Calibration(format!("{arm:?} arm could not be simulated anywhere on the stiffness grid")));
    }
    let k = coarse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mismatch.total_cmp(&b.1.mismatch))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let unimodal = local_minima(&coarse) <= 1;
    if !unimodal {
        let curve: Vec<String> = coarse.iter().map(|p| format!("({:.0}, {:.4e})", p.beta, p.mismatch)).collect();
        log::warn!("{arm:?} arm sweep is not unimodal; curve: {}", curve.join(" "));
    }

    let mut lo = grid[k.saturating_sub(1)];
    let mut hi = grid[(k + 1).min(grid.len() - 1)];
    let mut refined = Vec::new();
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = eval(c);
    let mut fd = eval(d);
    refined.push(fc);
    refined.push(fd);
    while hi - lo > s.refine_step {
        if fc.mismatch < fd.mismatch {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = eval(c);
            refined.push(fc);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = eval(d);
            refined.push(fd);
        }
    }
    Ok(ArmSweep { arm, q_measured, dt, coarse, refined, beta: 0.5 * (lo + hi), unimodal })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaEstimate {
    pub beta: f64,
    pub left: ArmSweep,
    pub right: ArmSweep,
}

/// Mean of the left- and right-arm minimizers.
pub fn estimate_beta(subject: &SubjectRecord, cfg: &RunConfig, exec: Execution) -> Result<BetaEstimate> {
    subject.require(&[Site::H, Site::G, Site::D, Site::C])?;
    let left = ArmSetup::from_subject(subject, Arm::Left)?;
    let right = ArmSetup::from_subject(subject, Arm::Right)?;
    let left = sweep_arm(&left, Arm::Left, subject.flow(Site::G)?, cfg, exec)?;
    let right = sweep_arm(&right, Arm::Right, subject.flow(Site::C)?, cfg, exec)?;
    Ok(BetaEstimate { beta: 0.5 * (left.beta + right.beta), left, right })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResistanceEstimate {
    pub r_tot: f64,
    pub r_p: f64,
    pub r_d: f64,
    /// Cycle-mean pressure drop from the radial end to the venous side.
    pub p: f64,
    pub q: f64,
}

/// `r_tot = p / q` split 10% proximal and 90% distal.
pub fn split_resistance(p: f64, q: f64) -> Result<ResistanceEstimate> {
    if !(q > 0.0) {
        return Err(Error::Calibration(format!("flow must be positive to calibrate resistance, got {q}")));
    }
    let r_tot = p / q;
    let r_p = 0.1 * r_tot;
    Ok(ResistanceEstimate { r_tot, r_p, r_d: r_tot - r_p, p, q })
}

/// Right arm (d to c) at `beta`; mean radial end pressure over the measured radial flow.
pub fn estimate_peripheral_resistance(subject: &SubjectRecord, beta: f64, cfg: &RunConfig) -> Result<ResistanceEstimate> {
    let setup = ArmSetup::from_subject(subject, Arm::Right)?;
    let q = subject.flow(Site::C)?;
    if !(q > 0.0) {
        return Err(Error::Calibration(format!("subject {}: radial flow must be positive, got {q}", subject.id)));
    }
    let run = run_arm(&setup, beta, arm_step(&setup, cfg)?, cfg)?;
    split_resistance(run.p_end - cfg.p_out, q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiverEstimate {
    pub q_a: f64,
    pub q_pv: f64,
    pub q_v: f64,
    pub p_a: f64,
    pub p_t: f64,
    pub r_ha: f64,
    pub r_pv: f64,
    pub r_l: f64,
    pub cycles: usize,
    pub settled: bool,
    /// Step used for the abdominal network.
    pub dt: f64,
    /// Hepatic artery outlet pressure at each step of the last cycle.
    pub p_a_wave: Vec<f64>,
}

impl LiverEstimate {
    pub fn params(&self, cfg: &RunConfig) -> LiverParams {
        LiverParams { r_ha: self.r_ha, r_pv: self.r_pv, r_l: self.r_l, c_l: cfg.liver.c_l, lobe_masses: cfg.liver.lobe_masses }
    }

    pub fn boundary(&self, cfg: &RunConfig) -> LiverBoundary {
        LiverBoundary { p_a: self.p_a, p_pv: cfg.liver.p_pv, p_v: cfg.liver.p_v }
    }
}

pub fn hepatic_artery_diameter(subject: &SubjectRecord, choice: HaDiameter) -> Result<f64> {
    let d = subject.site(Site::D).and_then(|m| m.diameter);
    let h = subject.site(Site::H).and_then(|m| m.diameter);
    match (choice, d, h) {
        (HaDiameter::Right, Some(x), _) | (HaDiameter::Left, _, Some(x)) => Ok(x),
        (HaDiameter::Mean, Some(x), Some(y)) => Ok(0.5 * (x + y)),
        (HaDiameter::Mean, Some(x), None) | (HaDiameter::Mean, None, Some(x)) => Ok(x),
        _ => Err(Error::Calibration(format!("subject {}: no brachial diameter for the hepatic artery", subject.id))),
    }
}

/// Abdominal aorta A feeding the hepatic artery (Windkessel outlet) and
/// abdominal aorta B (absorbing, half the area). Probes: first and last
/// hepatic artery cells.
pub fn abdominal_network(subject: &SubjectRecord, beta: f64, resist: &ResistanceEstimate, cfg: &RunConfig) -> Result<Network> {
    subject.require(&[Site::O])?;
    let l = &cfg.liver;
    let a_o = area_from_diameter(subject.diameter(Site::O)?);
    let a_ha = area_from_diameter(hepatic_artery_diameter(subject, l.ha_diameter)?);
    let waveform = subject.waveform(Site::O)?;
    let mut net = Network::new();
    let abo_a = net.add_segment("abdominal_aorta_a", artery(l.segment_length, beta, a_o, cfg, l.rho)?);
    let ha = net.add_segment("hepatic_artery", artery(l.segment_length, beta, a_ha, cfg, l.rho)?);
    let abo_b = net.add_segment("abdominal_aorta_b", artery(l.segment_length, beta, 0.5 * a_o, cfg, l.rho)?);
    net.add_boundary(abo_a, End::Left, BoundaryCondition::Inflow(InflowProfile::Pulsatile(waveform)));
    net.add_junction(JunctionSpec::Bifurcation { parent: abo_a, children: [ha, abo_b] });
    // capacitor starts where a steady flow at the reference pressure would hold it
    let mut rcr = RcrState::new(resist.r_p, resist.r_d, l.rcr_capacitance, cfg.p_out);
    rcr.p_c = cfg.p_out + (cfg.p0 - cfg.p_out) * resist.r_d / (resist.r_p + resist.r_d);
    net.add_boundary(ha, End::Right, BoundaryCondition::Rcr(rcr));
    net.add_boundary(abo_b, End::Right, BoundaryCondition::Absorbing { reference: CellState::new(0.5 * a_o, 0.0) });
    net.add_probe(ha, 0.0);
    net.add_probe(ha, 1.0);
    Ok(net)
}

fn relative_change(new: f64, old: f64) -> f64 {
    (new - old).abs() / new.abs().max(f64::MIN_POSITIVE)
}

/// Cycle-mean hepatic artery inflow and outlet pressure once the Windkessel
/// has settled, then the liver resistances.
pub fn estimate_liver_params(subject: &SubjectRecord, beta: f64, resist: &ResistanceEstimate, cfg: &RunConfig) -> Result<LiverEstimate> {
    let w = subject.waveform(Site::O)?;
    if w.ps == 0.0 && w.ed == 0.0 {
        return Err(Error::Calibration(format!("subject {}: zero inflow at site o", subject.id)));
    }
    let mut net = abdominal_network(subject, beta, resist, cfg)?;
    let period = w.period;
    let dt = cycle_step(&net, period, cfg)?;
    let ha_law = net.segments[1].law;
    let l = &cfg.liver;
    let (mut q_a, mut p_a) = (f64::NAN, f64::NAN);
    let mut p_a_wave = Vec::new();
    let mut settled = false;
    let mut cycles = 0;
    while cycles < l.max_cycles {
        let out = simulate(&mut net, period, &SimOptions::fixed(dt))?;
        cycles += 1;
        let q = cycle_mean(&out.probes[0], period)?.q;
        let outlet = window(&out.probes[1], period);
        let p = boundary_pressure(&ha_law, outlet)?;
        p_a_wave = outlet.iter().map(|&a| ha_law.pressure(a)).collect();
        let converged = relative_change(q, q_a) < l.settle_tolerance && relative_change(p, p_a) < l.settle_tolerance;
        q_a = q;
        p_a = p;
        if converged && cycles > cfg.warmup_cycles {
            settled = true;
            break;
        }
    }
    if !settled {
        log::warn!("subject {}: abdominal network not settled after {cycles} cycles", subject.id);
    }
    if !(q_a > 0.0) {
        return Err(Error::Calibration(format!("subject {}: hepatic artery flow is {q_a}", subject.id)));
    }
    let (q_pv, q_v, p_t) = derive_liver_pressures_flows(q_a, l.p_pv, l.p_v)?;
    let bound = LiverBoundary { p_a, p_pv: l.p_pv, p_v: l.p_v };
    let (r_ha, r_pv, r_l) = calibrate_resistances(&bound, p_t, q_a, q_pv, q_v)?;
    Ok(LiverEstimate { q_a, q_pv, q_v, p_a, p_t, r_ha, r_pv, r_l, cycles, settled, dt, p_a_wave })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectEstimate {
    pub subject: String,
    pub beta: BetaEstimate,
    pub resistance: ResistanceEstimate,
    pub liver: LiverEstimate,
}

/// Stiffness, then peripheral resistance, then the liver.
pub fn calibrate_subject(subject: &SubjectRecord, cfg: &RunConfig, exec: Execution) -> Result<SubjectEstimate> {
    let wrap = |e: Error| Error::Subject { subject: subject.id.clone(), source: Box::new(e) };
    let beta = estimate_beta(subject, cfg, exec).map_err(wrap)?;
    let resistance = estimate_peripheral_resistance(subject, beta.beta, cfg).map_err(wrap)?;
    let liver = estimate_liver_params(subject, beta.beta, &resistance, cfg).map_err(wrap)?;
    Ok(SubjectEstimate { subject: subject.id.clone(), beta, resistance, liver })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn resistance_hand_value() {
        let r = split_resistance(1.0e5, 5.0).unwrap();
        assert_relative_eq!(r.r_tot, 2.0e4, max_relative = 1e-15);
        assert_relative_eq!(r.r_p, 2.0e3, max_relative = 1e-15);
        assert_relative_eq!(r.r_d, 1.8e4, max_relative = 1e-15);
        assert_eq!(r.r_p + r.r_d, r.r_tot);
        let half = split_resistance(1.0e5, 10.0).unwrap();
        assert_relative_eq!(half.r_tot, 0.5 * r.r_tot, max_relative = 1e-15);
        assert!(split_resistance(1e5, 0.0).is_err());
    }

    #[test]
    fn cycle_step_divides_period() {
        let cfg = RunConfig::default();
        let setup = ArmSetup { brachial_a0: 0.13, radial_a0: 0.05, waveform: InflowWaveform::from_heart_rate(80.0, -5.0, 70.0) };
        let dt = arm_step(&setup, &cfg).unwrap();
        let n = setup.waveform.period / dt;
        assert!((n - n.round()).abs() < 1e-9);
        assert!(dt <= cfg.dt);
    }

    #[test]
    fn local_minima_count() {
        let pts = |m: &[f64]| m.iter().map(|&x| SweepPoint { beta: 0.0, q_sim: 0.0, mismatch: x }).collect::<Vec<_>>();
        assert_eq!(local_minima(&pts(&[3.0, 2.0, 1.0, 2.0])), 1);
        assert_eq!(local_minima(&pts(&[1.0, 2.0, 1.0, 2.0])), 2);
        assert_eq!(local_minima(&pts(&[1.0, 2.0, 3.0])), 1);
    }

    #[test]
    fn ha_diameter_choice() {
        let mut s = SubjectRecord::new("x");
        s.sites.insert(Site::D, crate::cohort::SiteMeasurement { diameter: Some(0.4), ..Default::default() });
        assert_eq!(hepatic_artery_diameter(&s, HaDiameter::Mean).unwrap(), 0.4);
        assert!(hepatic_artery_diameter(&s, HaDiameter::Left).is_err());
        s.sites.insert(Site::H, crate::cohort::SiteMeasurement { diameter: Some(0.36), ..Default::default() });
        assert_relative_eq!(hepatic_artery_diameter(&s, HaDiameter::Mean).unwrap(), 0.38, max_relative = 1e-15);
        assert_eq!(hepatic_artery_diameter(&s, HaDiameter::Left).unwrap(), 0.36);
    }
}
