//! TOML run configuration and declarative network descriptions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryCondition, InflowProfile, InflowWaveform, RcrState, TerminalResistance};
use crate::error::{Error, Result};
use crate::liver::{DEFAULT_C_L, DEFAULT_MASS, DEFAULT_P_PV, DEFAULT_P_V};
use crate::network::{JunctionSpec, Network, SimOptions, TimeStepping};
use crate::vessel::{CellState, End, FluidParams, TubeLaw, VesselKind, VesselSegment};

/// Which brachial measurement stands in for the hepatic artery diameter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HaDiameter {
    /// Mean of sites d and h, or whichever is present.
    #[default]
    Mean,
    Right,
    Left,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    pub points: usize,
    /// Bracket width at which golden-section refinement stops.
    pub refine_step: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { beta_min: 1e5, beta_max: 1e6, points: 91, refine_step: 1e3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiverConfig {
    pub p_pv: f64,
    pub p_v: f64,
    pub c_l: f64,
    pub lobe_masses: [f64; 3],
    pub ha_diameter: HaDiameter,
    /// Windkessel capacitance at the hepatic artery outlet (cm^5/dyn).
    pub rcr_capacitance: f64,
    pub segment_length: f64,
    pub rho: f64,
    /// Relative change of cycle-mean `(P_a, Q_a)` below which the run counts as settled.
    pub settle_tolerance: f64,
    pub max_cycles: usize,
}

impl Default for LiverConfig {
    fn default() -> Self {
        Self {
            p_pv: DEFAULT_P_PV,
            p_v: DEFAULT_P_V,
            c_l: DEFAULT_C_L,
            lobe_masses: [DEFAULT_MASS / 3.0; 3],
            ha_diameter: HaDiameter::Mean,
            rcr_capacitance: 4e-5,
            segment_length: 5.0,
            rho: 1.06,
            settle_tolerance: 1e-5,
            max_cycles: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Upper bound on the time step (s); the step actually used divides the
    /// cardiac period evenly and respects the stability limit.
    pub dt: f64,
    pub dx: f64,
    pub safety: f64,
    pub warmup_cycles: usize,
    pub sweep: SweepConfig,
    /// Density for the arm networks (g/cm^3).
    pub rho: f64,
    pub mu: f64,
    pub p0: f64,
    pub p_out: f64,
    pub arm_length: f64,
    pub liver: LiverConfig,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Write per-probe time series alongside the estimates.
    pub probe_dumps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            dx: 0.1,
            safety: 0.9,
            warmup_cycles: 2,
            sweep: SweepConfig::default(),
            rho: 1.05,
            mu: 0.04,
            p0: 1e5,
            p_out: 0.0,
            arm_length: 10.0,
            liver: LiverConfig::default(),
            output_dir: None,
            workers: None,
            probe_dumps: false,
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {x}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        positive("dt", self.dt)?;
        positive("dx", self.dx)?;
        positive("safety", self.safety)?;
        if self.safety > 1.0 {
            return Err(Error::Config("safety must not exceed 1".into()));
        }
        positive("rho", self.rho)?;
        positive("mu", self.mu)?;
        positive("p0", self.p0)?;
        positive("arm_length", self.arm_length)?;
        let s = &self.sweep;
        positive("sweep.beta_min", s.beta_min)?;
        positive("sweep.refine_step", s.refine_step)?;
        if !(s.beta_max > s.beta_min) || s.points < 3 {
            return Err(Error::Config("sweep needs beta_max > beta_min and at least 3 points".into()));
        }
        let l = &self.liver;
        for (name, x) in [
            ("liver.p_pv", l.p_pv),
            ("liver.p_v", l.p_v),
            ("liver.c_l", l.c_l),
            ("liver.rcr_capacitance", l.rcr_capacitance),
            ("liver.segment_length", l.segment_length),
            ("liver.rho", l.rho),
            ("liver.settle_tolerance", l.settle_tolerance),
        ] {
            positive(name, x)?;
        }
        if !l.lobe_masses.iter().all(|&m| m > 0.0) {
            return Err(Error::Config("lobe masses must be positive".into()));
        }
        if !(l.p_pv > l.p_v) {
            return Err(Error::Config("liver.p_pv must exceed liver.p_v".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSpec {
    pub rho: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
}

fn default_mu() -> f64 {
    0.04
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub name: String,
    pub length: f64,
    pub dx: f64,
    #[serde(default = "default_kind")]
    pub kind: VesselKind,
    pub beta: f64,
    /// Reference area (cm^2); give either this or `diameter`.
    pub a0: Option<f64>,
    pub diameter: Option<f64>,
    #[serde(default)]
    pub p0: f64,
}

fn default_kind() -> VesselKind {
    VesselKind::Artery
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JunctionFileSpec {
    Bifurcation { parent: String, children: [String; 2] },
    Confluence { parents: [String; 2], child: String },
    OneToOne { left: String, right: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryKindSpec {
    Inflow { ps: f64, ed: f64, heart_rate: f64, vti: Option<f64> },
    ConstantInflow { velocity: f64 },
    Absorbing,
    Terminal { r: f64, p_out: f64 },
    Rcr { r_p: f64, r_d: f64, c: f64, p_out: f64, #[serde(default)] p_c: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFileSpec {
    pub segment: String,
    pub end: End,
    #[serde(flatten)]
    pub condition: BoundaryKindSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFileSpec {
    pub segment: String,
    pub position: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub duration: f64,
    /// Fixed step; when absent the step follows the stability limit scaled by `safety`.
    pub dt: Option<f64>,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_safety() -> f64 {
    crate::kinetic::DEFAULT_SAFETY
}

/// A network description file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub fluid: FluidSpec,
    #[serde(rename = "segment")]
    pub segments: Vec<SegmentSpec>,
    #[serde(rename = "junction", default)]
    pub junctions: Vec<JunctionFileSpec>,
    #[serde(rename = "boundary", default)]
    pub boundaries: Vec<BoundaryFileSpec>,
    #[serde(rename = "probe", default)]
    pub probes: Vec<ProbeFileSpec>,
    pub run: RunSpec,
}

impl NetworkFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn options(&self) -> SimOptions {
        let stepping = match self.run.dt {
            Some(dt) => TimeStepping::Fixed(dt),
            None => TimeStepping::Cfl { safety: self.run.safety },
        };
        SimOptions { stepping, execution: Default::default() }
    }

    pub fn build(&self) -> Result<Network> {
        let fluid = FluidParams::new(self.fluid.rho, self.fluid.mu);
        let mut net = Network::new();
        for s in &self.segments {
            if net.segment_id(&s.name).is_some() {
                return Err(Error::Config(format!("duplicate segment name {}", s.name)));
            }
            let a0 = match (s.a0, s.diameter) {
                (Some(a), None) => a,
                (None, Some(d)) => crate::cohort::area_from_diameter(d),
                _ => return Err(Error::Config(format!("segment {}: give exactly one of a0 or diameter", s.name))),
            };
            let law = match s.kind {
                VesselKind::Artery => TubeLaw::artery(s.beta, a0, s.p0),
                VesselKind::Vein => TubeLaw::vein(s.beta, a0, s.p0),
            };
            let seg = VesselSegment::at_rest(s.length, s.dx, law, fluid)
                .map_err(|e| Error::Config(format!("segment {}: {e}", s.name)))?;
            net.add_segment(s.name.clone(), seg);
        }
        let id = |name: &str| net.segment_id(name).ok_or_else(|| Error::Config(format!("unknown segment {name:?}")));
        let mut junctions = Vec::new();
        for j in &self.junctions {
            junctions.push(match j {
                JunctionFileSpec::Bifurcation { parent, children } => JunctionSpec::Bifurcation {
                    parent: id(parent)?,
                    children: [id(&children[0])?, id(&children[1])?],
                },
                JunctionFileSpec::Confluence { parents, child } => JunctionSpec::Confluence {
                    parents: [id(&parents[0])?, id(&parents[1])?],
                    child: id(child)?,
                },
                JunctionFileSpec::OneToOne { left, right } => JunctionSpec::OneToOne { left: id(left)?, right: id(right)? },
            });
        }
        let mut boundaries = Vec::new();
        for b in &self.boundaries {
            let seg = id(&b.segment)?;
            let a0 = net.segments[seg].law.a0;
            let condition = match b.condition {
                BoundaryKindSpec::Inflow { ps, ed, heart_rate, vti } => {
                    let mut w = InflowWaveform::from_heart_rate(ps, ed, heart_rate);
                    w.vti = vti;
                    w.validate()?;
                    BoundaryCondition::Inflow(InflowProfile::Pulsatile(w))
                }
                BoundaryKindSpec::ConstantInflow { velocity } => BoundaryCondition::Inflow(InflowProfile::Constant(velocity)),
                BoundaryKindSpec::Absorbing => BoundaryCondition::Absorbing { reference: CellState::new(a0, 0.0) },
                BoundaryKindSpec::Terminal { r, p_out } => BoundaryCondition::Terminal(TerminalResistance { r, p_out }),
                BoundaryKindSpec::Rcr { r_p, r_d, c, p_out, p_c } => BoundaryCondition::Rcr(RcrState { r_p, r_d, c, p_out, p_c }),
            };
            boundaries.push((seg, b.end, condition));
        }
        let mut probes = Vec::new();
        for p in &self.probes {
            probes.push((id(&p.segment)?, p.position));
        }
        for j in junctions {
            net.add_junction(j);
        }
        for (seg, end, c) in boundaries {
            net.add_boundary(seg, end, c);
        }
        for (seg, f) in probes {
            net.add_probe(seg, f);
        }
        net.validate()?;
        Ok(net)
    }
}
