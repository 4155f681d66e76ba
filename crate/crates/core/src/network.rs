//! Segments, junctions and boundaries assembled into one network, advanced
//! with a single global time step.

use std::collections::BTreeMap;
use std::io::Write;

use crate::boundary::BoundaryCondition;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::junction::{solve_bifurcation, solve_confluence, solve_one_to_one};
use crate::kinetic::{stable_dt, step_interior, StepReport};
use crate::vessel::{CellState, End, Ghost, TubeLaw, VesselSegment};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JunctionSpec {
    /// Right end of `parent` feeding the left ends of `children`. Listing the
    /// same child twice models two identical branches with one segment.
    Bifurcation { parent: usize, children: [usize; 2] },
    /// Right ends of `parents` draining into the left end of `child`.
    Confluence { parents: [usize; 2], child: usize },
    OneToOne { left: usize, right: usize },
}

impl JunctionSpec {
    fn ends(&self) -> Vec<(usize, End)> {
        let mut v = match *self {
            JunctionSpec::Bifurcation { parent, children } => {
                vec![(parent, End::Right), (children[0], End::Left), (children[1], End::Left)]
            }
            JunctionSpec::Confluence { parents, child } => {
                vec![(parents[0], End::Right), (parents[1], End::Right), (child, End::Left)]
            }
            JunctionSpec::OneToOne { left, right } => vec![(left, End::Right), (right, End::Left)],
        };
        v.sort();
        v.dedup();
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundarySpec {
    pub segment: usize,
    pub end: End,
    pub condition: BoundaryCondition,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub segment: usize,
    /// Position along the segment, 0 at the left end and 1 at the right end.
    pub fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeSeries {
    pub segment: usize,
    pub fraction: f64,
    pub cell: usize,
    pub times: Vec<f64>,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl ProbeSeries {
    fn push(&mut self, t: f64, s: CellState, law: &TubeLaw) {
        self.times.push(t);
        self.a.push(s.a);
        self.v.push(s.v);
        self.q.push(s.flow());
        self.p.push(law.pressure(s.a));
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Boundary bookkeeping over one `simulate` call. Twin branches count twice.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MassLedger {
    pub initial_volume: f64,
    pub final_volume: f64,
    /// Net volume that entered through boundary ends.
    pub inflow: f64,
}

impl MassLedger {
    pub fn imbalance(&self) -> f64 {
        self.inflow - (self.final_volume - self.initial_volume)
    }

    pub fn relative_imbalance(&self) -> f64 {
        let scale = self.initial_volume.abs().max(self.inflow.abs()).max(f64::MIN_POSITIVE);
        self.imbalance() / scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeStepping {
    Fixed(f64),
    /// Global step `min_segments stable_dt(safety)` recomputed every step.
    Cfl { safety: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    pub stepping: TimeStepping,
    pub execution: Execution,
}

impl SimOptions {
    pub fn fixed(dt: f64) -> Self {
        Self { stepping: TimeStepping::Fixed(dt), execution: Execution::Sequential }
    }

    pub fn cfl(safety: f64) -> Self {
        Self { stepping: TimeStepping::Cfl { safety }, execution: Execution::Sequential }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub probes: Vec<ProbeSeries>,
    pub steps: usize,
    pub ledger: MassLedger,
}

#[derive(Clone, Debug, Default)]
pub struct Network {
    pub names: Vec<String>,
    pub segments: Vec<VesselSegment>,
    pub junctions: Vec<JunctionSpec>,
    pub boundaries: Vec<BoundarySpec>,
    pub probes: Vec<Probe>,
    /// Simulated time reached so far.
    pub time: f64,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_segment(&mut self, name: impl Into<String>, segment: VesselSegment) -> usize {
        self.names.push(name.into());
        self.segments.push(segment);
        self.segments.len() - 1
    }

    pub fn add_junction(&mut self, j: JunctionSpec) {
        self.junctions.push(j);
    }

    pub fn add_boundary(&mut self, segment: usize, end: End, condition: BoundaryCondition) {
        self.boundaries.push(BoundarySpec { segment, end, condition });
    }

    pub fn add_probe(&mut self, segment: usize, fraction: f64) -> usize {
        self.probes.push(Probe { segment, fraction });
        self.probes.len() - 1
    }

    pub fn segment_id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn check_index(&self, seg: usize) -> Result<()> {
        if seg >= self.segments.len() {
            return Err(Error::Network(format!("segment index {seg} out of range ({} segments)", self.segments.len())));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Network("network has no segments".into()));
        }
        let mut claims: BTreeMap<(usize, End), usize> = BTreeMap::new();
        for j in &self.junctions {
            for (seg, end) in j.ends() {
                self.check_index(seg)?;
                *claims.entry((seg, end)).or_default() += 1;
            }
            if let JunctionSpec::Bifurcation { parent, children } = j {
                if children.contains(parent) {
                    return Err(Error::Network(format!("segment {} feeds itself", self.names[*parent])));
                }
            }
        }
        for b in &self.boundaries {
            self.check_index(b.segment)?;
            *claims.entry((b.segment, b.end)).or_default() += 1;
        }
        for (k, name) in self.names.iter().enumerate() {
            for end in [End::Left, End::Right] {
                match claims.get(&(k, end)).copied().unwrap_or(0) {
                    1 => {}
                    0 => return Err(Error::Network(format!("{end:?} end of segment {name} is not connected"))),
                    n => return Err(Error::Network(format!("{end:?} end of segment {name} is claimed {n} times"))),
                }
            }
        }
        for p in &self.probes {
            self.check_index(p.segment)?;
            if !(0.0..=1.0).contains(&p.fraction) {
                return Err(Error::Network(format!("probe position {} outside [0, 1]", p.fraction)));
            }
        }
        Ok(())
    }

    /// How many physical copies each segment stands for.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![1.0; self.segments.len()];
        for j in &self.junctions {
            match *j {
                JunctionSpec::Bifurcation { children: [a, b], .. } if a == b => w[a] = 2.0,
                JunctionSpec::Confluence { parents: [a, b], .. } if a == b => w[a] = 2.0,
                _ => {}
            }
        }
        w
    }

    /// Stored volume, counting twin branches twice.
    pub fn volume(&self) -> f64 {
        self.segments.iter().zip(self.weights()).map(|(s, w)| w * s.volume()).sum()
    }

    fn global_dt(&self, safety: f64) -> Result<f64> {
        let mut dt = f64::INFINITY;
        for s in &self.segments {
            dt = dt.min(stable_dt(s, safety)?);
        }
        Ok(dt)
    }

    fn resolve_boundaries(&mut self, dt: f64) -> Result<()> {
        let t = self.time;
        for b in self.boundaries.iter_mut() {
            let seg = &self.segments[b.segment];
            let ghost = b
                .condition
                .resolve(t, dt, b.end, seg.trace(b.end), &seg.law, seg.fluid.rho)
                .map_err(|e| locate(e, 0, format!("boundary at {:?} end of {}", b.end, self.names[b.segment])))?;
            self.segments[b.segment].set_ghost(b.end, ghost);
        }
        Ok(())
    }

    fn resolve_junctions(&mut self) -> Result<()> {
        for (k, j) in self.junctions.iter().enumerate() {
            let at = |seg: usize, end: End| {
                let s = &self.segments[seg];
                (s.trace(end), s.law)
            };
            let rho = self.segments[0].fluid.rho;
            let (ends, states) = match *j {
                JunctionSpec::Bifurcation { parent, children } => {
                    let sol = solve_bifurcation(at(parent, End::Right), [at(children[0], End::Left), at(children[1], End::Left)], rho);
                    (vec![(parent, End::Right), (children[0], End::Left), (children[1], End::Left)], sol)
                }
                JunctionSpec::Confluence { parents, child } => {
                    let sol = solve_confluence([at(parents[0], End::Right), at(parents[1], End::Right)], at(child, End::Left), rho);
                    (vec![(parents[0], End::Right), (parents[1], End::Right), (child, End::Left)], sol)
                }
                JunctionSpec::OneToOne { left, right } => {
                    let sol = solve_one_to_one(at(left, End::Right), at(right, End::Left), rho);
                    (vec![(left, End::Right), (right, End::Left)], sol)
                }
            };
            let sol = states.map_err(|e| locate(e, 0, format!("junction {k}")))?;
            for ((seg, end), s) in ends.into_iter().zip(sol.states) {
                self.segments[seg].set_ghost(end, Ghost::Interface(s));
            }
        }
        Ok(())
    }

    /// One global step of size `dt`: boundaries, junctions, then every segment.
    pub fn step(&mut self, dt: f64, execution: Execution) -> Result<Vec<StepReport>> {
        self.resolve_boundaries(dt)?;
        self.resolve_junctions()?;
        let reports = execution.map_mut(&mut self.segments, |s| step_interior(s, dt));
        let mut out = Vec::with_capacity(reports.len());
        for (k, r) in reports.into_iter().enumerate() {
            out.push(r.map_err(|e| locate(e, 0, format!("segment {}", self.names[k])))?);
        }
        Ok(out)
    }

    fn sample(&self, series: &mut [ProbeSeries]) {
        for (p, s) in self.probes.iter().zip(series.iter_mut()) {
            let seg = &self.segments[p.segment];
            s.push(self.time, seg.cells[s.cell], &seg.law);
        }
    }
}

fn locate(e: Error, step: usize, location: String) -> Error {
    match e {
        Error::Simulation { .. } => e,
        other => Error::Simulation { step, location, source: Box::new(other) },
    }
}

fn restep(e: Error, step: usize) -> Error {
    match e {
        Error::Simulation { location, source, .. } => Error::Simulation { step, location, source },
        other => other,
    }
}

/// Advance `net` by `duration`, sampling every probe after each step (and once
/// at the start). The network keeps its final state.
pub fn simulate(net: &mut Network, duration: f64, opts: &SimOptions) -> Result<SimOutput> {
    net.validate()?;
    if !(duration > 0.0) {
        return Err(crate::error::domain(format!("duration must be positive, got {duration}")));
    }
    let mut series: Vec<ProbeSeries> = net
        .probes
        .iter()
        .map(|p| ProbeSeries {
            segment: p.segment,
            fraction: p.fraction,
            cell: net.segments[p.segment].probe_index(p.fraction),
            ..Default::default()
        })
        .collect();
    let weights = net.weights();
    let boundary_ends: Vec<(usize, End)> = net.boundaries.iter().map(|b| (b.segment, b.end)).collect();
    let mut ledger = MassLedger { initial_volume: net.volume(), ..Default::default() };
    net.sample(&mut series);

    let start = net.time;
    let mut steps = 0usize;
    let record = |reports: &[StepReport], dt: f64, ledger: &mut MassLedger| {
        for &(seg, end) in &boundary_ends {
            let r = &reports[seg];
            let into = match end {
                End::Left => r.left_mass_flux,
                End::Right => -r.right_mass_flux,
            };
            ledger.inflow += weights[seg] * into * dt;
        }
    };

    match opts.stepping {
        TimeStepping::Fixed(dt) => {
            if !(dt > 0.0) {
                return Err(crate::error::domain(format!("time step must be positive, got {dt}")));
            }
            let ratio = duration / dt;
            let n = if (ratio - ratio.round()).abs() < 1e-6 { ratio.round() as usize } else { ratio.ceil() as usize };
            for k in 0..n {
                let t_next = if k + 1 == n { start + duration } else { start + (k + 1) as f64 * dt };
                let h = t_next - net.time;
                let reports = net.step(h, opts.execution).map_err(|e| restep(e, k))?;
                record(&reports, h, &mut ledger);
                net.time = t_next;
                steps += 1;
                net.sample(&mut series);
            }
        }
        TimeStepping::Cfl { safety } => {
            let end = start + duration;
            while net.time < end {
                let mut h = net.global_dt(safety).map_err(|e| restep(locate(e, steps, "time step".into()), steps))?;
                let last = net.time + h >= end - 1e-12 * duration;
                if last {
                    h = end - net.time;
                }
                let reports = net.step(h, opts.execution).map_err(|e| restep(e, steps))?;
                record(&reports, h, &mut ledger);
                net.time = if last { end } else { net.time + h };
                steps += 1;
                net.sample(&mut series);
            }
        }
    }
    ledger.final_volume = net.volume();
    Ok(SimOutput { probes: series, steps, ledger })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleMean {
    pub q: f64,
    pub p: f64,
    pub a: f64,
    pub v: f64,
}

/// Time-weighted means over the half-open window `[t_end - period, t_end)`.
/// Each sample is weighted by the time to the next one.
pub fn cycle_mean(series: &ProbeSeries, period: f64) -> Result<CycleMean> {
    let n = series.len();
    if n < 3 || !(period > 0.0) {
        return Err(crate::error::domain("probe series too short for a cycle mean"));
    }
    let t_end = series.times[n - 1];
    let t_start = t_end - period;
    let tol = 1e-9 * period;
    if series.times[0] > t_start + tol {
        return Err(crate::error::domain(format!(
            "series spans {} s, shorter than one period ({period} s)",
            t_end - series.times[0]
        )));
    }
    let first = series.times.partition_point(|&t| t < t_start - tol);
    let (mut q, mut p, mut a, mut v, mut w) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in first..n - 1 {
        let h = series.times[i + 1] - series.times[i];
        q += h * series.q[i];
        p += h * series.p[i];
        a += h * series.a[i];
        v += h * series.v[i];
        w += h;
    }
    if !(w > 0.0) {
        return Err(crate::error::domain("empty averaging window"));
    }
    Ok(CycleMean { q: q / w, p: p / w, a: a / w, v: v / w })
}

/// Onset time of a rising wave front by the intersecting-tangent rule: the
/// tangent at the steepest upstroke meets the baseline (the first sample).
pub fn foot_time(times: &[f64], values: &[f64]) -> Option<f64> {
    if times.len() < 3 || times.len() != values.len() {
        return None;
    }
    let base = values[0];
    let (mut best, mut slope) = (0, 0.0);
    for i in 0..times.len() - 1 {
        let s = (values[i + 1] - values[i]) / (times[i + 1] - times[i]);
        if s > slope {
            slope = s;
            best = i;
        }
    }
    if !(slope > 0.0) {
        return None;
    }
    let tm = 0.5 * (times[best] + times[best + 1]);
    let vm = 0.5 * (values[best] + values[best + 1]);
    Some(tm - (vm - base) / slope)
}

/// Write a probe series as `t,A,v,Q,p` rows.
pub fn write_probe_csv<W: Write>(out: W, series: &ProbeSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "A", "v", "Q", "p"])?;
    for i in 0..series.len() {
        w.write_record([
            series.times[i].to_string(),
            series.a[i].to_string(),
            series.v[i].to_string(),
            series.q[i].to_string(),
            series.p[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{InflowProfile, InflowWaveform};
    use crate::vessel::FluidParams;
    use approx::assert_relative_eq;

    fn artery(len: f64, dx: f64, beta: f64, a0: f64) -> VesselSegment {
        VesselSegment::at_rest(len, dx, TubeLaw::artery(beta, a0, 1e5), FluidParams::new(1.05, 0.04)).unwrap()
    }

    fn absorbing(seg: &VesselSegment) -> BoundaryCondition {
        BoundaryCondition::Absorbing { reference: CellState::new(seg.law.a0, 0.0) }
    }

    #[test]
    fn rest_network_stays_at_rest() {
        let mut net = Network::new();
        let s = artery(5.0, 0.1, 4e5, 0.4);
        let bc = absorbing(&s);
        let id = net.add_segment("a", s);
        net.add_boundary(id, End::Left, bc);
        net.add_boundary(id, End::Right, bc);
        net.add_probe(id, 0.5);
        let out = simulate(&mut net, 0.05, &SimOptions::fixed(1e-4)).unwrap();
        assert_eq!(out.steps, 500);
        let pr = &out.probes[0];
        assert!(pr.a.iter().all(|&a| a == 0.4));
        assert!(pr.v.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unclaimed_end_is_rejected() {
        let mut net = Network::new();
        let s = artery(5.0, 0.1, 4e5, 0.4);
        let bc = absorbing(&s);
        let id = net.add_segment("a", s);
        net.add_boundary(id, End::Left, bc);
        assert!(matches!(net.validate(), Err(Error::Network(_))));
        net.add_boundary(id, End::Right, bc);
        net.add_boundary(id, End::Right, bc);
        assert!(matches!(net.validate(), Err(Error::Network(_))));
    }

    #[test]
    fn bad_probe_is_rejected() {
        let mut net = Network::new();
        let s = artery(5.0, 0.1, 4e5, 0.4);
        let bc = absorbing(&s);
        let id = net.add_segment("a", s);
        net.add_boundary(id, End::Left, bc);
        net.add_boundary(id, End::Right, bc);
        net.add_probe(id, 1.5);
        assert!(net.validate().is_err());
    }

    fn twin_network(dx: f64) -> (Network, usize, usize) {
        let mut net = Network::new();
        let p = artery(10.0, dx, 4e5, 0.5);
        let c = artery(10.0, dx, 4e5, 0.2);
        let bc_c = absorbing(&c);
        let pi = net.add_segment("brachial", p);
        let ci = net.add_segment("radial", c);
        let w = InflowWaveform::new(60.0, -5.0, 0.8);
        net.add_boundary(pi, End::Left, BoundaryCondition::Inflow(InflowProfile::Pulsatile(w)));
        net.add_junction(JunctionSpec::Bifurcation { parent: pi, children: [ci, ci] });
        net.add_boundary(ci, End::Right, bc_c);
        net.add_probe(pi, 1.0);
        net.add_probe(ci, 0.0);
        (net, pi, ci)
    }

    #[test]
    fn twin_children_carry_half_the_parent_flow() {
        let (mut net, pi, ci) = twin_network(0.1);
        simulate(&mut net, 0.3, &SimOptions::cfl(0.9)).unwrap();
        let qp = net.segments[pi].right.state().flow();
        let qc = net.segments[ci].left.state().flow();
        assert!(qp.abs() > 1.0);
        assert_relative_eq!(qc, 0.5 * qp, max_relative = 1e-9);
    }

    #[test]
    fn open_network_mass_ledger_closes() {
        let (mut net, _, _) = twin_network(0.1);
        let out = simulate(&mut net, 0.5, &SimOptions::cfl(0.9)).unwrap();
        assert!(out.ledger.relative_imbalance().abs() < 1e-10, "{:?}", out.ledger);
    }

    #[test]
    fn runs_are_deterministic_and_mode_independent() {
        let (mut a, _, _) = twin_network(0.1);
        let (mut b, _, _) = twin_network(0.1);
        let oa = simulate(&mut a, 0.2, &SimOptions::fixed(1e-4)).unwrap();
        let ob = simulate(&mut b, 0.2, &SimOptions::fixed(1e-4).with_execution(Execution::Parallel)).unwrap();
        assert_eq!(oa.probes, ob.probes);
    }

    #[test]
    fn probes_do_not_change_dynamics() {
        let (mut a, _, ci) = twin_network(0.1);
        let (mut b, _, _) = twin_network(0.1);
        b.add_probe(ci, 0.3);
        b.add_probe(0, 0.7);
        simulate(&mut a, 0.1, &SimOptions::fixed(1e-4)).unwrap();
        simulate(&mut b, 0.1, &SimOptions::fixed(1e-4)).unwrap();
        for (x, y) in a.segments.iter().zip(&b.segments) {
            assert_eq!(x.cells, y.cells);
        }
    }

    #[test]
    fn oversized_fixed_step_reports_location() {
        let (mut net, _, _) = twin_network(0.1);
        let err = simulate(&mut net, 0.01, &SimOptions::fixed(1e-2)).unwrap_err();
        match err {
            Error::Simulation { step, location, source } => {
                assert_eq!(step, 0);
                assert!(location.contains("segment"));
                assert!(matches!(*source, Error::Unstable { .. }));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    fn series(times: Vec<f64>, q: Vec<f64>) -> ProbeSeries {
        let n = times.len();
        ProbeSeries { times, p: q.clone(), q, a: vec![1.0; n], v: vec![0.0; n], ..Default::default() }
    }

    #[test]
    fn cycle_mean_of_constant() {
        let t: Vec<f64> = (0..=200).map(|k| k as f64 * 0.01).collect();
        let m = cycle_mean(&series(t.clone(), vec![3.5; t.len()]), 1.0).unwrap();
        assert_relative_eq!(m.q, 3.5, max_relative = 1e-14);
        assert_relative_eq!(m.p, 3.5, max_relative = 1e-14);
    }

    #[test]
    fn cycle_mean_of_sine() {
        let n = 1000;
        let t: Vec<f64> = (0..=2 * n).map(|k| k as f64 / n as f64).collect();
        let q: Vec<f64> = t.iter().map(|&t| 5.0 + (2.0 * std::f64::consts::PI * t).sin()).collect();
        let m = cycle_mean(&series(t, q), 1.0).unwrap();
        assert!((m.q - 5.0).abs() < 1e-6);
    }

    #[test]
    fn cycle_mean_recovers_vti() {
        let w = InflowWaveform::new(70.0, -10.0, 0.9).with_vti(14.0);
        let n = 9000;
        let t: Vec<f64> = (0..=n).map(|k| k as f64 * w.period / n as f64).collect();
        let v: Vec<f64> = t.iter().map(|&t| crate::boundary::inflow_velocity(t, &w)).collect();
        let m = cycle_mean(&series(t, v), w.period).unwrap();
        assert!((m.q - 14.0 / 0.9).abs() < 1e-6, "{}", m.q);
    }

    #[test]
    fn cycle_mean_needs_a_full_cycle() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.01).collect();
        assert!(cycle_mean(&series(t.clone(), vec![1.0; t.len()]), 1.0).is_err());
    }

    #[test]
    fn foot_of_a_ramp() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.01).collect();
        let y: Vec<f64> = t.iter().map(|&t| if t < 0.3 { 0.0 } else { 2.0 * (t - 0.3) }).collect();
        assert_relative_eq!(foot_time(&t, &y).unwrap(), 0.3, max_relative = 1e-9);
    }

    #[test]
    fn probe_csv_columns() {
        let s = series(vec![0.0, 0.5], vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_probe_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,A,v,Q,p");
        assert_eq!(text.lines().count(), 3);
    }
}
