//! Coupled interface states where segments meet.
//!
//! Every port keeps its outgoing Riemann invariant from the adjacent cell; the
//! remaining equations are conservation of mass and equality of total pressure
//! `rho v^2 / 2 + p` across ports. Substituting `v(a)` from the invariants leaves
//! one unknown area per port, solved by Newton with an analytic Jacobian.

use crate::error::{Error, Result};
use crate::vessel::{CellState, End, TubeLaw};

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-10;
const MAX_HALVINGS: usize = 30;
/// Accepted residual for a bracketed state that Newton cannot polish.
const BRACKET_TOLERANCE: f64 = 1e-9;

/// One segment end taking part in a junction. `trace` is the edge cell next to
/// the junction; `multiplicity` counts identical branches represented by it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Port {
    pub law: TubeLaw,
    pub end: End,
    pub trace: CellState,
    pub multiplicity: u32,
}

impl Port {
    pub fn new(law: TubeLaw, end: End, trace: CellState) -> Self {
        Self { law, end, trace, multiplicity: 1 }
    }

    fn outgoing_invariant(&self, rho: f64) -> f64 {
        self.trace.v + self.end.sign() * self.law.potential(self.trace.a, rho)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JunctionSolution {
    /// Interface state per port, in input order.
    pub states: Vec<CellState>,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JunctionKind {
    Bifurcation,
    Confluence,
    OneToOne,
}

struct PortEval {
    v: f64,
    c: f64,
    h: f64,
}

fn eval(port: &Port, w: f64, a: f64, rho: f64) -> PortEval {
    let s = port.end.sign();
    let v = w - s * port.law.potential(a, rho);
    PortEval {
        v,
        c: port.law.wave_speed(a, rho),
        h: 0.5 * rho * v * v + port.law.pressure(a),
    }
}

#[allow(clippy::needless_range_loop)]
fn solve_dense(mut m: [[f64; 3]; 3], mut b: [f64; 3], n: usize) -> Option<[f64; 3]> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col] == 0.0 || !m[pivot][col].is_finite() {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

struct System<'a> {
    ports: &'a [Port],
    w: Vec<f64>,
    rho: f64,
    q_scale: f64,
    h_scale: f64,
}

impl System<'_> {
    fn velocity(&self, k: usize, a: f64) -> f64 {
        self.w[k] - self.ports[k].end.sign() * self.ports[k].law.potential(a, self.rho)
    }

    fn residual(&self, a: &[f64]) -> ([f64; 3], f64, Vec<PortEval>) {
        let n = self.ports.len();
        let evals: Vec<PortEval> = self.ports.iter().zip(&self.w).zip(a).map(|((p, &w), &a)| eval(p, w, a, self.rho)).collect();
        let mut f = [0.0; 3];
        for (k, p) in self.ports.iter().enumerate() {
            f[0] += p.multiplicity as f64 * p.end.sign() * a[k] * evals[k].v;
        }
        f[0] /= self.q_scale;
        for j in 1..n {
            f[j] = (evals[0].h - evals[j].h) / self.h_scale;
        }
        let norm = f[..n].iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        (f, norm, evals)
    }

    #[allow(clippy::needless_range_loop)]
    fn newton(&self, mut a: Vec<f64>) -> Result<JunctionSolution> {
        let ports = self.ports;
        let n = ports.len();
        let rho = self.rho;
        let mut polished = false;
        for iteration in 0..=MAX_ITERATIONS {
            let (f, norm, evals) = self.residual(&a);
            if !norm.is_finite() {
                return Err(Error::Junction { iterations: iteration, residual: norm, reason: "non-finite residual".into() });
            }
            if norm < TOLERANCE {
                if evals.iter().any(|e| e.v.abs() >= e.c) {
                    return Err(Error::Junction { iterations: iteration, residual: norm, reason: "converged to a supersonic state".into() });
                }
                if polished {
                    return Ok(JunctionSolution {
                        states: a.iter().zip(&evals).map(|(&a, e)| CellState::new(a, e.v)).collect(),
                        residual_norm: norm,
                        iterations: iteration,
                    });
                }
                polished = true;
            }
            if iteration == MAX_ITERATIONS {
                return Err(Error::Junction { iterations: iteration, residual: norm, reason: "Newton did not converge".into() });
            }

            let mut jac = [[0.0; 3]; 3];
            for (k, p) in ports.iter().enumerate() {
                let s = p.end.sign();
                let e = &evals[k];
                jac[0][k] = p.multiplicity as f64 * (s * e.v - e.c) / self.q_scale;
            }
            let dh = |k: usize| {
                let e = &evals[k];
                rho * e.c / a[k] * (e.c - ports[k].end.sign() * e.v)
            };
            for j in 1..n {
                jac[j][0] = dh(0) / self.h_scale;
                jac[j][j] = -dh(j) / self.h_scale;
            }
            let rhs = [-f[0], -f[1], -f[2]];
            let delta = solve_dense(jac, rhs, n).ok_or_else(|| Error::Junction {
                iterations: iteration,
                residual: norm,
                reason: "singular Jacobian (sonic port?)".into(),
            })?;

            let mut step = 1.0;
            let mut halvings = 0;
            while (0..n).any(|k| !(a[k] + step * delta[k] > 0.0)) {
                step *= 0.5;
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(Error::Junction {
                        iterations: iteration,
                        residual: norm,
                        reason: "iterate area stays non-positive after damping".into(),
                    });
                }
            }
            for k in 0..n {
                a[k] += step * delta[k];
            }
        }
        unreachable!()
    }

    /// `c - |v|` at area `a`; positive where the port is subsonic.
    fn subsonic_margin(&self, k: usize, a: f64) -> f64 {
        self.ports[k].law.wave_speed(a, self.rho) - self.velocity(k, a).abs()
    }

    /// Subsonic area interval of port `k`: the one holding the trace, else the
    /// one with the widest margin found on a log scan.
    fn subsonic_interval(&self, k: usize) -> Option<(f64, f64)> {
        let a_ref = self.ports[k].trace.a;
        let grid: Vec<f64> = (0..=SCAN_POINTS).map(|i| a_ref * 10f64.powf(-3.0 + 6.0 * i as f64 / SCAN_POINTS as f64)).collect();
        let margin: Vec<f64> = grid.iter().map(|&a| self.subsonic_margin(k, a)).collect();
        let centre = if self.subsonic_margin(k, a_ref) > 0.0 {
            grid.iter().position(|&a| a >= a_ref).unwrap_or(SCAN_POINTS)
        } else {
            (0..=SCAN_POINTS).filter(|&i| margin[i] > 0.0).max_by(|&i, &j| margin[i].total_cmp(&margin[j]))?
        };
        let mut i = centre;
        while i > 0 && margin[i - 1] > 0.0 {
            i -= 1;
        }
        let mut j = centre;
        while j < SCAN_POINTS && margin[j + 1] > 0.0 {
            j += 1;
        }
        let lo = if i == 0 { grid[0] } else { bisect(grid[i - 1], grid[i], |a| self.subsonic_margin(k, a) > 0.0) };
        let hi = if j == SCAN_POINTS { grid[j] } else { bisect(grid[j + 1], grid[j], |a| self.subsonic_margin(k, a) > 0.0) };
        Some((lo, hi))
    }

    fn total_pressure(&self, k: usize, a: f64) -> f64 {
        let v = self.velocity(k, a);
        0.5 * self.rho * v * v + self.ports[k].law.pressure(a)
    }

    /// On a subsonic branch total pressure rises with area and junction inflow
    /// falls, so the net inflow is monotone in the shared total pressure `H`.
    /// Bisecting on `H` either finds the state or shows there is none.
    fn bracket(&self) -> Option<Vec<f64>> {
        let n = self.ports.len();
        let intervals: Vec<(f64, f64)> = (0..n).map(|k| self.subsonic_interval(k)).collect::<Option<_>>()?;
        let area_at = |k: usize, h: f64| {
            let (lo, hi) = intervals[k];
            bisect(lo, hi, |a| self.total_pressure(k, a) < h)
        };
        let inflow = |h: f64| -> (f64, Vec<f64>) {
            let a: Vec<f64> = (0..n).map(|k| area_at(k, h)).collect();
            let q = (0..n)
                .map(|k| {
                    let p = &self.ports[k];
                    p.multiplicity as f64 * p.end.sign() * a[k] * self.velocity(k, a[k])
                })
                .sum();
            (q, a)
        };
        let h_lo = (0..n).map(|k| self.total_pressure(k, intervals[k].0)).fold(f64::NEG_INFINITY, f64::max);
        let h_hi = (0..n).map(|k| self.total_pressure(k, intervals[k].1)).fold(f64::INFINITY, f64::min);
        if !(h_lo < h_hi) || inflow(h_lo).0 < 0.0 || inflow(h_hi).0 > 0.0 {
            return None;
        }
        let h = bisect(h_lo, h_hi, |h| inflow(h).0 > 0.0);
        Some(inflow(h).1)
    }
}

const SCAN_POINTS: usize = 600;

/// Point where `inside` flips, between `yes` (where it holds) and `no`.
fn bisect(mut yes: f64, mut no: f64, inside: impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (yes + no);
        if mid == yes || mid == no {
            break;
        }
        if inside(mid) {
            yes = mid;
        } else {
            no = mid;
        }
    }
    0.5 * (yes + no)
}

/// Solve a junction of two or three distinct ports.
///
/// Newton from the edge traces handles ordinary states. When it fails, a
/// bracketed search on the shared total pressure either recovers the state
/// (near-sonic ports) or reports that no subsonic state exists.
pub fn solve_ports(ports: &[Port], rho: f64) -> Result<JunctionSolution> {
    let n = ports.len();
    if !(2..=3).contains(&n) {
        return Err(Error::Junction {
            iterations: 0,
            residual: f64::NAN,
            reason: format!("junctions take 2 or 3 ports, got {n}"),
        });
    }
    let w: Vec<f64> = ports.iter().map(|p| p.outgoing_invariant(rho)).collect();
    let mut q_scale = 0.0_f64;
    let mut c_max = 0.0_f64;
    for p in ports {
        let c = p.law.wave_speed(p.trace.a, rho);
        q_scale = q_scale.max(p.multiplicity as f64 * p.trace.a * c);
        c_max = c_max.max(c);
    }
    let sys = System { ports, w, rho, q_scale, h_scale: rho * c_max * c_max };

    let first = match sys.newton(ports.iter().map(|p| p.trace.a).collect()) {
        Ok(sol) => return Ok(sol),
        Err(e) => e,
    };
    let Some(a) = sys.bracket() else {
        let residual = match first {
            Error::Junction { residual, .. } => residual,
            _ => f64::NAN,
        };
        return Err(Error::Junction { iterations: MAX_ITERATIONS, residual, reason: "no subsonic junction state (choked)".into() });
    };
    sys.newton(a.clone()).or_else(|e| {
        let (_, norm, evals) = sys.residual(&a);
        if norm < BRACKET_TOLERANCE {
            Ok(JunctionSolution {
                states: a.iter().zip(&evals).map(|(&a, e)| CellState::new(a, e.v)).collect(),
                residual_norm: norm,
                iterations: MAX_ITERATIONS,
            })
        } else {
            Err(e)
        }
    })
}

fn merged(first: Port, twins: [Port; 2]) -> Vec<Port> {
    if twins[0] == twins[1] {
        let mut twin = twins[0];
        twin.multiplicity *= 2;
        vec![first, twin]
    } else {
        vec![first, twins[0], twins[1]]
    }
}

fn expand(sol: JunctionSolution, twin: bool) -> JunctionSolution {
    if twin {
        let s = sol.states[1];
        JunctionSolution { states: vec![sol.states[0], s, s], ..sol }
    } else {
        sol
    }
}

/// One parent (right end) feeding two children (left ends). Identical
/// children collapse into one port carrying twice the flow.
pub fn solve_bifurcation(parent: (CellState, TubeLaw), children: [(CellState, TubeLaw); 2], rho: f64) -> Result<JunctionSolution> {
    let p = Port::new(parent.1, End::Right, parent.0);
    let c = children.map(|(s, law)| Port::new(law, End::Left, s));
    let ports = merged(p, c);
    let twin = ports.len() == 2;
    solve_ports(&ports, rho).map(|s| expand(s, twin))
}

/// Two parents (right ends) merging into one child (left end). States are
/// returned as `[parent0, parent1, child]`.
pub fn solve_confluence(parents: [(CellState, TubeLaw); 2], child: (CellState, TubeLaw), rho: f64) -> Result<JunctionSolution> {
    let c = Port::new(child.1, End::Left, child.0);
    let p = parents.map(|(s, law)| Port::new(law, End::Right, s));
    let ports = merged(c, p);
    let twin = ports.len() == 2;
    let sol = expand(solve_ports(&ports, rho)?, twin);
    let s = &sol.states;
    Ok(JunctionSolution { states: vec![s[1], s[2], s[0]], ..sol })
}

/// Right end of `left` joined to the left end of `right`.
pub fn solve_one_to_one(left: (CellState, TubeLaw), right: (CellState, TubeLaw), rho: f64) -> Result<JunctionSolution> {
    solve_ports(
        &[Port::new(left.1, End::Right, left.0), Port::new(right.1, End::Left, right.0)],
        rho,
    )
}

/// Mass imbalance `sum(flow into junction)` and the largest total-pressure
/// spread for a candidate set of port states.
pub fn residuals(ports: &[Port], states: &[CellState], rho: f64) -> (f64, f64) {
    let mass: f64 = ports
        .iter()
        .zip(states)
        .map(|(p, s)| p.multiplicity as f64 * p.end.sign() * s.a * s.v)
        .sum();
    let h: Vec<f64> = ports.iter().zip(states).map(|(p, s)| 0.5 * rho * s.v * s.v + p.law.pressure(s.a)).collect();
    let spread = h.iter().map(|x| (x - h[0]).abs()).fold(0.0, f64::max);
    (mass, spread)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const RHO: f64 = 1.05;

    /// Independent route: nested bisection. For subsonic ports the total
    /// pressure is increasing in area and the junction inflow decreases with
    /// total pressure, so both levels are monotone.
    pub(crate) fn bisection_oracle(ports: &[Port], rho: f64) -> Vec<CellState> {
        let w: Vec<f64> = ports.iter().map(|p| p.trace.v + p.end.sign() * p.law.potential(p.trace.a, rho)).collect();
        let area_for = |k: usize, h: f64| {
            let p = &ports[k];
            let tp = |a: f64| {
                let v = w[k] - p.end.sign() * p.law.potential(a, rho);
                0.5 * rho * v * v + p.law.pressure(a)
            };
            let (mut lo, mut hi) = (p.trace.a * 0.2, p.trace.a * 5.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if tp(mid) < h {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let inflow = |h: f64| -> f64 {
            (0..ports.len())
                .map(|k| {
                    let a = area_for(k, h);
                    let v = w[k] - ports[k].end.sign() * ports[k].law.potential(a, rho);
                    ports[k].multiplicity as f64 * ports[k].end.sign() * a * v
                })
                .sum()
        };
        let h0: Vec<f64> = ports.iter().map(|p| 0.5 * rho * p.trace.v.powi(2) + p.law.pressure(p.trace.a)).collect();
        let spread = h0.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let (mut lo, mut hi) = (h0.iter().cloned().fold(f64::INFINITY, f64::min) - 0.5 * spread, h0.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.5 * spread);
        assert!(inflow(lo) > 0.0 && inflow(hi) < 0.0, "oracle bracket failed");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if inflow(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let h = 0.5 * (lo + hi);
        (0..ports.len())
            .map(|k| {
                let a = area_for(k, h);
                CellState::new(a, w[k] - ports[k].end.sign() * ports[k].law.potential(a, rho))
            })
            .collect()
    }

    fn art(beta: f64, a0: f64) -> TubeLaw {
        TubeLaw::artery(beta, a0, 1e5)
    }

    #[test]
    fn rest_state_is_a_solution() {
        let law = art(4e5, 0.5);
        let rest = CellState::new(0.5, 0.0);
        let sol = solve_bifurcation((rest, law), [(rest, law), (rest, law)], RHO).unwrap();
        for s in &sol.states {
            assert_relative_eq!(s.a, 0.5, max_relative = 1e-14);
            assert!(s.v.abs() < 1e-10);
        }
        let sol = solve_confluence([(rest, law), (rest, law)], (rest, law), RHO).unwrap();
        for s in &sol.states {
            assert_relative_eq!(s.a, 0.5, max_relative = 1e-14);
        }
    }

    #[test]
    fn identical_children_are_bitwise_equal_and_halve_flow() {
        let parent = (CellState::new(0.55, 30.0), art(4e5, 0.5));
        let child = (CellState::new(0.26, 10.0), art(5e5, 0.25));
        let sol = solve_bifurcation(parent, [child, child], RHO).unwrap();
        assert_eq!(sol.states[1], sol.states[2]);
        let qp = sol.states[0].flow();
        let qc = sol.states[1].flow();
        assert_relative_eq!(qp, 2.0 * qc, max_relative = 1e-12);
    }

    #[test]
    fn asymmetric_bifurcation_matches_oracle() {
        let parent = (CellState::new(0.52, 25.0), art(4e5, 0.5));
        let c1 = (CellState::new(0.31, 18.0), art(5e5, 0.3));
        let c2 = (CellState::new(0.18, 9.0), art(6e5, 0.2));
        let sol = solve_bifurcation(parent, [c1, c2], RHO).unwrap();
        let ports = [
            Port::new(parent.1, End::Right, parent.0),
            Port::new(c1.1, End::Left, c1.0),
            Port::new(c2.1, End::Left, c2.0),
        ];
        let oracle = bisection_oracle(&ports, RHO);
        for (s, o) in sol.states.iter().zip(&oracle) {
            assert_relative_eq!(s.a, o.a, max_relative = 1e-9);
            assert_relative_eq!(s.v, o.v, max_relative = 1e-8, epsilon = 1e-8);
        }
        let (mass, spread) = residuals(&ports, &sol.states, RHO);
        assert!(mass.abs() < 1e-12 * sol.states[0].flow().abs());
        assert!(spread < 1e-8);
    }

    #[test]
    fn confluence_mirrors_bifurcation() {
        let parent = (CellState::new(0.52, 25.0), art(4e5, 0.5));
        let c1 = (CellState::new(0.31, 18.0), art(5e5, 0.3));
        let c2 = (CellState::new(0.18, 9.0), art(6e5, 0.2));
        let bif = solve_bifurcation(parent, [c1, c2], RHO).unwrap();
        // reverse time: every velocity flips and the roles of the ends swap
        let flip = |s: CellState| CellState::new(s.a, -s.v);
        let solved = [flip(bif.states[1]), flip(bif.states[2]), flip(bif.states[0])];
        let conf = solve_confluence([(solved[0], c1.1), (solved[1], c2.1)], (solved[2], parent.1), RHO).unwrap();
        for (s, e) in conf.states.iter().zip(&solved) {
            assert_relative_eq!(s.a, e.a, max_relative = 1e-10);
            assert_relative_eq!(s.v, e.v, max_relative = 1e-8);
        }
    }

    #[test]
    fn one_to_one_identical_laws_pass_through() {
        let law = art(4e5, 0.5);
        let s = CellState::new(0.53, 20.0);
        let sol = solve_one_to_one((s, law), (s, law), RHO).unwrap();
        for st in &sol.states {
            assert_relative_eq!(st.a, s.a, max_relative = 1e-12);
            assert_relative_eq!(st.v, s.v, max_relative = 1e-10);
        }
    }

    #[test]
    fn one_to_one_beta_jump_balances_total_pressure() {
        let l = (CellState::new(0.53, 20.0), art(4e5, 0.5));
        let r = (CellState::new(0.51, 19.0), art(8e5, 0.5));
        let sol = solve_one_to_one(l, r, RHO).unwrap();
        let ports = [Port::new(l.1, End::Right, l.0), Port::new(r.1, End::Left, r.0)];
        let (mass, spread) = residuals(&ports, &sol.states, RHO);
        assert!(mass.abs() < 1e-10 * l.0.flow());
        assert!(spread < 1e-8);
        let oracle = bisection_oracle(&ports, RHO);
        assert_relative_eq!(sol.states[1].a, oracle[1].a, max_relative = 1e-9);
    }

    #[test]
    fn one_to_one_area_jump_keeps_rest() {
        let l = (CellState::new(0.5, 0.0), TubeLaw::artery(4e5, 0.5, 1e5));
        let r = (CellState::new(0.2, 0.0), TubeLaw::artery(4e5, 0.2, 1e5));
        let sol = solve_one_to_one(l, r, RHO).unwrap();
        assert_relative_eq!(sol.states[0].a, 0.5, max_relative = 1e-12);
        assert_relative_eq!(sol.states[1].a, 0.2, max_relative = 1e-12);
        assert!(sol.states[0].v.abs() < 1e-9);
    }

    #[test]
    fn vein_junction_converges() {
        let law = TubeLaw::vein(2e3, 0.6, 1e4);
        let sol = solve_one_to_one((CellState::new(0.62, 5.0), law), (CellState::new(0.58, 4.0), law), RHO).unwrap();
        let ports = [Port::new(law, End::Right, CellState::new(0.62, 5.0)), Port::new(law, End::Left, CellState::new(0.58, 4.0))];
        let (mass, spread) = residuals(&ports, &sol.states, RHO);
        assert!(mass.abs() < 1e-9);
        assert!(spread < 1e-8);
    }

    #[test]
    fn choked_junction_reports_error() {
        // small parent draining into a much larger, slacker child: no subsonic state exists
        let parent = (CellState::new(0.035, 0.0), art(1e5, 0.05));
        let big = (CellState::new(1.6, 0.0), art(1e5, 2.29));
        let small = (CellState::new(0.035, 0.0), art(1e5, 0.05));
        assert!(matches!(solve_bifurcation(parent, [big, small], RHO), Err(Error::Junction { .. })));
    }

    /// Closed-form existence check for artery ports: port `k` is subsonic for
    /// `c` in `(s w / 5, s w / 3)`, along which total pressure rises and
    /// junction inflow falls. `None` marks a near tie.
    fn artery_state_exists(ports: &[Port], rho: f64) -> Option<bool> {
        let mut branch = Vec::new();
        for p in ports {
            let s = p.end.sign();
            let k = (p.law.beta / (2.0 * rho)).sqrt();
            let w = p.trace.v + 4.0 * s * k * p.trace.a.powf(0.25);
            if !(s * w > 0.0) {
                return Some(false);
            }
            branch.push((s, k, w, s * w / 5.0, s * w / 3.0, *p));
        }
        let h = |b: &(f64, f64, f64, f64, f64, Port), c: f64| {
            let v = b.2 - 4.0 * b.0 * c;
            0.5 * rho * v * v + b.5.law.pressure((c / b.1).powi(4))
        };
        let h_lo = branch.iter().map(|b| h(b, b.3)).fold(f64::NEG_INFINITY, f64::max);
        let h_hi = branch.iter().map(|b| h(b, b.4)).fold(f64::INFINITY, f64::min);
        if !(h_lo < h_hi) {
            return Some(false);
        }
        let inflow = |target: f64| -> f64 {
            branch
                .iter()
                .map(|b| {
                    let (mut lo, mut hi) = (b.3, b.4);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if h(b, mid) < target {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    let c = 0.5 * (lo + hi);
                    b.5.multiplicity as f64 * b.0 * (c / b.1).powi(4) * (b.2 - 4.0 * b.0 * c)
                })
                .sum()
        };
        let scale = branch.iter().map(|b| (b.3 / b.1).powi(4) * b.3).fold(0.0, f64::max);
        let (at_lo, at_hi) = (inflow(h_lo) / scale, inflow(h_hi) / scale);
        if at_lo > 1e-6 && at_hi < -1e-6 {
            Some(true)
        } else if at_lo < -1e-6 || at_hi > 1e-6 {
            Some(false)
        } else {
            None
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn random_bifurcations_converge_or_choke(
            beta in prop::array::uniform3(1e5f64..1e6),
            parent_a0 in 0.05f64..3.0,
            child_frac in prop::array::uniform2(0.2f64..1.0),
            dp in prop::array::uniform3(-1.5e4f64..1.5e4),
            vel in prop::array::uniform3(-30.0f64..60.0),
        ) {
            let a0 = [parent_a0, parent_a0 * child_frac[0], parent_a0 * child_frac[1]];
            let mk = |k: usize| {
                // a drop beyond beta sqrt(a0) has no area; stay well inside it
                let a = (a0[k].sqrt() + dp[k].max(-0.5 * beta[k] * a0[k].sqrt()) / beta[k]).powi(2);
                (CellState::new(a, vel[k]), art(beta[k], a0[k]))
            };
            let ports: Vec<Port> = (0..3).map(|k| Port::new(mk(k).1, if k == 0 { End::Right } else { End::Left }, mk(k).0)).collect();
            let exists = artery_state_exists(&ports, RHO);
            prop_assume!(exists.is_some());
            match solve_bifurcation(mk(0), [mk(1), mk(2)], RHO) {
                Ok(sol) => {
                    prop_assert_eq!(exists, Some(true));
                    let (mass, spread) = residuals(&ports, &sol.states, RHO);
                    let scale = ports.iter().zip(&sol.states).map(|(p, s)| s.a * (s.v.abs() + p.law.wave_speed(s.a, RHO))).fold(0.0, f64::max);
                    prop_assert!(mass.abs() / scale < 1e-12);
                    prop_assert!(spread < 1e-8);
                }
                Err(e) => {
                    prop_assert_eq!(exists, Some(false));
                    let is_junction = matches!(e, Error::Junction { .. });
                    prop_assert!(is_junction);
                }
            }
        }
    }

    #[test]
    fn near_sonic_state_is_recovered() {
        // Newton from the traces stalls here; the parent ends up near Mach 0.98
        let ports = [
            Port::new(art(1.293e5, 0.09806697537841248), End::Right, CellState::new(0.15452318914084326, 58.472751399655635)),
            Port::new(art(3.819e5, 0.07488784940607578), End::Left, CellState::new(0.060889563032697894, 53.31007088356384)),
            Port::new(art(8.535e5, 0.09699882286530732), End::Left, CellState::new(0.10762371990015725, 56.58629491007282)),
        ];
        assert_eq!(artery_state_exists(&ports, RHO), Some(true));
        let sol = solve_ports(&ports, RHO).unwrap();
        let (mass, spread) = residuals(&ports, &sol.states, RHO);
        assert!(mass.abs() < 1e-10 * sol.states[0].flow());
        assert!(spread < 1e-8);
        let c = ports[0].law.wave_speed(sol.states[0].a, RHO);
        assert!(sol.states[0].v / c > 0.95);
    }
}

