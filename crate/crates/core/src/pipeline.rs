//! Cohort pipeline: calibrate every subject, verify venous return and write
//! the result tables.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::calibration::{arm_network, arm_step, calibrate_subject, Arm, ArmSetup, SubjectEstimate};
use crate::cohort::{Site, SubjectRecord};
use crate::config::RunConfig;
use crate::liver::{LiverBoundary, LiverParams};
use crate::error::{Error, Result};
use crate::exec::{with_workers, Execution};
use crate::network::{simulate, write_probe_csv, SimOptions};
use crate::verification::{ivc_flow, superior_return, venous_return_check, ArterialPressure, SubjectCheck, VerificationReport};

pub const ESTIMATE_COLUMNS: [&str; 17] = [
    "subject_id", "beta", "beta_left", "beta_right", "r_tot", "r_p", "r_d", "q_a", "q_pv", "q_v", "p_a", "p_t", "r_ha", "r_pv",
    "r_l", "cycles", "settled",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectFailure {
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct PipelineOutput {
    pub estimates: Vec<SubjectEstimate>,
    pub report: VerificationReport,
    pub failures: Vec<SubjectFailure>,
}

impl PipelineOutput {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn write_estimates<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ESTIMATE_COLUMNS)?;
        for e in &self.estimates {
            let l = &e.liver;
            let r = &e.resistance;
            w.write_record([
                e.subject.clone(),
                e.beta.beta.to_string(),
                e.beta.left.beta.to_string(),
                e.beta.right.beta.to_string(),
                r.r_tot.to_string(),
                r.r_p.to_string(),
                r.r_d.to_string(),
                l.q_a.to_string(),
                l.q_pv.to_string(),
                l.q_v.to_string(),
                l.p_a.to_string(),
                l.p_t.to_string(),
                l.r_ha.to_string(),
                l.r_pv.to_string(),
                l.r_l.to_string(),
                l.cycles.to_string(),
                l.settled.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_failures<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subject_id", "error"])?;
        for f in &self.failures {
            w.write_record([&f.subject, &f.message])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `estimates.csv`, `verification.csv`, `failures.csv` and `summary.txt`
    /// under `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_estimates(BufWriter::new(File::create(dir.join("estimates.csv"))?))?;
        self.report.write_csv(BufWriter::new(File::create(dir.join("verification.csv"))?))?;
        self.write_failures(BufWriter::new(File::create(dir.join("failures.csv"))?))?;
        let mut s = File::create(dir.join("summary.txt"))?;
        writeln!(s, "{} failed={}", self.report.summary_line(), self.failures.len())?;
        Ok(())
    }
}

/// Inferior vena cava flow over one cycle of the calibrated hepatic artery
/// pressure, starting from the calibrated tissue pressure.
pub fn verify_subject(subject: &SubjectRecord, est: &SubjectEstimate, cfg: &RunConfig) -> Result<SubjectCheck> {
    let l = &est.liver;
    let p_a = if l.p_a_wave.is_empty() { ArterialPressure::Mean(l.p_a) } else { ArterialPressure::Waveform(l.p_a_wave.clone()) };
    let period = subject.waveform(Site::O)?.period;
    let q_ivc = ivc_flow(&l.params(cfg), &l.boundary(cfg), &p_a, l.p_t, period, l.dt, subject.flow(Site::O)?)?;
    venous_return_check(subject, q_ivc, superior_return(subject)?)
}

fn process(subject: &SubjectRecord, cfg: &RunConfig, exec: Execution) -> Result<(SubjectEstimate, SubjectCheck)> {
    let est = calibrate_subject(subject, cfg, exec)?;
    let check = verify_subject(subject, &est, cfg).map_err(|e| Error::Subject { subject: subject.id.clone(), source: Box::new(e) })?;
    Ok((est, check))
}

/// Subjects run concurrently on `cfg.workers` threads; the output order is the
/// cohort order regardless.
pub fn run_pipeline(cfg: &RunConfig, cohort: &[SubjectRecord], exec: Execution) -> Result<PipelineOutput> {
    cfg.validate()?;
    let results = with_workers(cfg.workers, || exec.map(cohort, |s| process(s, cfg, exec)));
    let mut out = PipelineOutput::default();
    for (s, r) in cohort.iter().zip(results) {
        match r {
            Ok((est, check)) => {
                out.estimates.push(est);
                out.report.subjects.push(check);
            }
            Err(e) => {
                log::error!("{e}");
                out.failures.push(SubjectFailure { subject: s.id.clone(), message: e.to_string() });
            }
        }
    }
    Ok(out)
}

/// Right-arm probe series at the estimated stiffness, one CSV per probe:
/// `<dir>/<subject>_<segment>_<position>.csv`.
pub fn dump_arm_probes(subject: &SubjectRecord, est: &SubjectEstimate, cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let setup = ArmSetup::from_subject(subject, Arm::Right)?;
    let mut net = arm_network(&setup, est.beta.beta, cfg)?;
    let dt = arm_step(&setup, cfg)?;
    let out = simulate(&mut net, (cfg.warmup_cycles + 1) as f64 * setup.waveform.period, &SimOptions::fixed(dt))?;
    for p in &out.probes {
        let name = format!("{}_{}_{}.csv", subject.id, net.names[p.segment], p.fraction);
        write_probe_csv(BufWriter::new(File::create(dir.join(name))?), p)?;
    }
    Ok(())
}

/// The columns of an estimates file that verification needs.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRow {
    pub subject: String,
    pub p_a: f64,
    pub p_t: f64,
    pub r_ha: f64,
    pub r_pv: f64,
    pub r_l: f64,
}

pub fn read_estimates<R: Read>(input: R) -> Result<Vec<EstimateRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(ESTIMATE_COLUMNS) {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", ESTIMATE_COLUMNS.join(",")) });
    }
    let col = |name: &str| ESTIMATE_COLUMNS.iter().position(|c| *c == name).unwrap_or(0);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |name: &str| -> Result<f64> {
            let k = col(name);
            rec[k].parse().map_err(|_| Error::Parse { line, message: format!("{name}: {:?} is not a number", &rec[k]) })
        };
        out.push(EstimateRow { subject: rec[0].to_string(), p_a: num("p_a")?, p_t: num("p_t")?, r_ha: num("r_ha")?, r_pv: num("r_pv")?, r_l: num("r_l")? });
    }
    Ok(out)
}

/// Verification from saved estimates, with the cycle-mean hepatic artery
/// pressure held constant and steps of `cfg.dt`.
pub fn verify_estimates(cohort: &[SubjectRecord], rows: &[EstimateRow], cfg: &RunConfig) -> (VerificationReport, Vec<SubjectFailure>) {
    let mut report = VerificationReport::default();
    let mut failures = Vec::new();
    for row in rows {
        let check = (|| {
            let s = cohort
                .iter()
                .find(|s| s.id == row.subject)
                .ok_or_else(|| Error::Calibration("subject not in the cohort".to_string()))?;
            let params = LiverParams { r_ha: row.r_ha, r_pv: row.r_pv, r_l: row.r_l, c_l: cfg.liver.c_l, lobe_masses: cfg.liver.lobe_masses };
            let bound = LiverBoundary { p_a: row.p_a, p_pv: cfg.liver.p_pv, p_v: cfg.liver.p_v };
            let period = s.waveform(Site::O)?.period;
            let q_ivc = ivc_flow(&params, &bound, &ArterialPressure::Mean(row.p_a), row.p_t, period, cfg.dt, s.flow(Site::O)?)?;
            venous_return_check(s, q_ivc, superior_return(s)?)
        })();
        match check {
            Ok(c) => report.subjects.push(c),
            Err(e) => failures.push(SubjectFailure { subject: row.subject.clone(), message: e.to_string() }),
        }
    }
    (report, failures)
}
