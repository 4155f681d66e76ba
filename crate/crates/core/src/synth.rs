//! Synthetic cohorts with known parameters. Each subject's measurable site
//! quantities come from forward simulation at drawn true values, so the
//! calibration can be checked against them.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boundary::InflowWaveform;
use crate::calibration::{arm_step, estimate_liver_params, run_arm, split_resistance, Arm, ArmRun, ArmSetup};
use crate::cohort::{area_from_diameter, Site, SiteMeasurement, SubjectRecord};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruthRanges {
    pub beta: (f64, f64),
    pub r_tot: (f64, f64),
    pub heart_rate: (f64, f64),
}

impl Default for TruthRanges {
    fn default() -> Self {
        Self { beta: (2e5, 8e5), r_tot: (1e5, 2.5e5), heart_rate: (55.0, 90.0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectTruth {
    pub subject: String,
    pub beta: f64,
    pub r_tot: f64,
    pub r_ha: f64,
    pub r_pv: f64,
    pub r_l: f64,
}

const MAX_SCALE_ITERATIONS: usize = 40;

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..hi)
}

fn radial_row(run: &ArmRun, diameter: f64, hr: f64, period: f64) -> SiteMeasurement {
    SiteMeasurement {
        ps: Some(run.v_max),
        ed: Some(run.v_min),
        vti: Some(run.v_mean * period),
        heart_rate: Some(hr),
        diameter: Some(diameter),
        flow: Some(run.q_mid),
    }
}

fn waveform_row(w: &InflowWaveform, diameter: f64, hr: f64, flow: f64) -> SiteMeasurement {
    SiteMeasurement {
        ps: Some(w.ps),
        ed: Some(w.ed),
        vti: Some(w.raw_integral()),
        heart_rate: Some(hr),
        diameter: Some(diameter),
        flow: Some(flow),
    }
}

/// One subject from its own seed.
pub fn synth_subject(id: &str, seed: u64, ranges: &TruthRanges, cfg: &RunConfig) -> Result<(SubjectRecord, SubjectTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hr = draw(&mut rng, ranges.heart_rate);
    let period = 60.0 / hr;
    let beta = draw(&mut rng, ranges.beta);
    let r_target = draw(&mut rng, ranges.r_tot);
    let d_o = draw(&mut rng, (1.5, 2.1));
    let d_e = draw(&mut rng, (0.55, 0.75));
    let d_f = draw(&mut rng, (0.55, 0.75));
    let d_d = draw(&mut rng, (0.36, 0.46));
    let d_h = draw(&mut rng, (0.36, 0.46));
    let d_c = draw(&mut rng, (0.22, 0.30));
    let d_g = draw(&mut rng, (0.22, 0.30));
    let w_o = InflowWaveform::new(draw(&mut rng, (80.0, 120.0)), draw(&mut rng, (-15.0, 0.0)), period);
    let w_e = InflowWaveform::new(draw(&mut rng, (60.0, 100.0)), draw(&mut rng, (10.0, 25.0)), period);
    let w_f = InflowWaveform::new(draw(&mut rng, (60.0, 100.0)), draw(&mut rng, (10.0, 25.0)), period);
    let w_h = InflowWaveform::new(draw(&mut rng, (60.0, 100.0)), draw(&mut rng, (-10.0, 5.0)), period);
    let base_d = InflowWaveform::new(draw(&mut rng, (60.0, 100.0)), draw(&mut rng, (-10.0, 5.0)), period);

    let left = ArmSetup { brachial_a0: area_from_diameter(d_h), radial_a0: area_from_diameter(d_g), waveform: w_h };
    let left_run = run_arm(&left, beta, arm_step(&left, cfg)?, cfg)?;

    // scale the right brachial waveform until the right arm's p/q hits the target
    let mut right = ArmSetup { brachial_a0: area_from_diameter(d_d), radial_a0: area_from_diameter(d_c), waveform: base_d };
    let dt = arm_step(&right, cfg)?;
    let mut scale = 1.0;
    let mut right_run = run_arm(&right, beta, dt, cfg)?;
    for _ in 0..MAX_SCALE_ITERATIONS {
        let r = (right_run.p_end - cfg.p_out) / right_run.q_mid;
        if (r - r_target).abs() <= 1e-6 * r_target {
            break;
        }
        scale *= r / r_target;
        right.waveform.ps = base_d.ps * scale;
        right.waveform.ed = base_d.ed * scale;
        right_run = run_arm(&right, beta, dt, cfg)?;
    }
    let resist = split_resistance(right_run.p_end - cfg.p_out, right_run.q_mid)?;

    let mut s = SubjectRecord::new(id);
    let flow_of = |w: &InflowWaveform, d: f64| area_from_diameter(d) * w.mean_velocity();
    s.sites.insert(Site::O, waveform_row(&w_o, d_o, hr, flow_of(&w_o, d_o)));
    s.sites.insert(Site::E, waveform_row(&w_e, d_e, hr, flow_of(&w_e, d_e)));
    s.sites.insert(Site::F, waveform_row(&w_f, d_f, hr, flow_of(&w_f, d_f)));
    s.sites.insert(Site::D, waveform_row(&right.waveform, d_d, hr, right_run.q_brachial));
    s.sites.insert(Site::H, waveform_row(&w_h, d_h, hr, left_run.q_brachial));
    s.sites.insert(Site::C, radial_row(&right_run, d_c, hr, period));
    s.sites.insert(Site::G, radial_row(&left_run, d_g, hr, period));

    let liver = estimate_liver_params(&s, beta, &resist, cfg)?;
    let truth = SubjectTruth { subject: id.to_string(), beta, r_tot: resist.r_tot, r_ha: liver.r_ha, r_pv: liver.r_pv, r_l: liver.r_l };
    Ok((s, truth))
}

/// `n` subjects named `S001..`; subject seeds are drawn in order from `seed`.
pub fn synth_cohort(
    n: usize,
    seed: u64,
    ranges: &TruthRanges,
    cfg: &RunConfig,
    exec: Execution,
) -> Result<(Vec<SubjectRecord>, Vec<SubjectTruth>)> {
    if n == 0 {
        return Err(crate::error::domain("cohort size must be at least 1"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(String, u64)> = (0..n).map(|k| (format!("S{:03}", k + 1), master.gen())).collect();
    let made = exec.map(&jobs, |(id, s)| {
        synth_subject(id, *s, ranges, cfg).map_err(|e| Error::Subject { subject: id.clone(), source: Box::new(e) })
    });
    let mut subjects = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for r in made {
        let (s, t) = r?;
        subjects.push(s);
        truths.push(t);
    }
    Ok((subjects, truths))
}

pub const TRUTH_COLUMNS: [&str; 6] = ["subject_id", "beta", "r_tot", "r_ha", "r_pv", "r_l"];

pub fn write_truth<W: Write>(out: W, truths: &[SubjectTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRUTH_COLUMNS)?;
    for t in truths {
        w.write_record([
            t.subject.clone(),
            t.beta.to_string(),
            t.r_tot.to_string(),
            t.r_ha.to_string(),
            t.r_pv.to_string(),
            t.r_l.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth<R: Read>(input: R) -> Result<Vec<SubjectTruth>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != TRUTH_COLUMNS.len() {
            return Err(Error::Parse { line, message: format!("expected {} fields", TRUTH_COLUMNS.len()) });
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::Parse { line, message: format!("{}: {:?} is not a number", TRUTH_COLUMNS[k], &rec[k]) })
        };
        out.push(SubjectTruth { subject: rec[0].to_string(), beta: num(1)?, r_tot: num(2)?, r_ha: num(3)?, r_pv: num(4)?, r_l: num(5)? });
    }
    Ok(out)
}

/// Right arm of a subject, for tests that need the forward model directly.
pub fn right_arm(subject: &SubjectRecord) -> Result<ArmSetup> {
    ArmSetup::from_subject(subject, Arm::Right)
}
