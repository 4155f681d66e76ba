//! Inferior vena cava flow from a calibrated liver, venous return against
//! cardiac output, and stroke volume variation.

use std::io::Write;

use crate::cohort::{Site, SubjectRecord};
use crate::error::{domain, Error, Result};
use crate::liver::{lobe_flows, pt_analytic, LiverBoundary, LiverParams};

/// Hepatic artery pressure seen by the liver: a cycle mean, or one value per
/// time step over a cycle.
#[derive(Clone, Debug, PartialEq)]
pub enum ArterialPressure {
    Mean(f64),
    Waveform(Vec<f64>),
}

/// Step the tissue pressure over `n = 0..=T`, `T = floor(period / dt)`, from
/// `p_t0`, average the three tree flows over those `T + 1` samples and return
/// `q_o - q_a - q_pv + q_v`.
pub fn ivc_flow(
    params: &LiverParams,
    bound: &LiverBoundary,
    p_a: &ArterialPressure,
    p_t0: f64,
    period: f64,
    dt: f64,
    q_o: f64,
) -> Result<f64> {
    params.validate()?;
    if !(period > 0.0) || !(dt > 0.0) {
        return Err(domain("period and dt must be positive"));
    }
    let t_steps = (period / dt + 1e-9).floor() as usize;
    if let ArterialPressure::Waveform(w) = p_a {
        if w.is_empty() {
            return Err(domain("empty arterial pressure waveform"));
        }
    }
    let p_a_at = |n: usize| match p_a {
        ArterialPressure::Mean(p) => *p,
        ArterialPressure::Waveform(w) => w[n % w.len()],
    };
    let (mut qa, mut qpv, mut qv) = (0.0, 0.0, 0.0);
    let mut p_t = p_t0;
    for n in 0..=t_steps {
        let b = LiverBoundary { p_a: p_a_at(n), ..*bound };
        let f = lobe_flows(p_t, params, &b);
        qa += f.q_a;
        qpv += f.q_pv;
        qv += f.q_v;
        p_t = pt_analytic(dt, params, &b, p_t);
    }
    let k = (t_steps + 1) as f64;
    Ok(q_o - qa / k - qpv / k + qv / k)
}

pub const OUTPUT_SITES: [Site; 5] = [Site::D, Site::E, Site::F, Site::H, Site::O];
pub const SUPERIOR_SITES: [Site; 4] = [Site::D, Site::E, Site::F, Site::H];

fn site_sum(subject: &SubjectRecord, sites: &[Site]) -> Result<f64> {
    let missing: Vec<Site> = sites.iter().copied().filter(|s| subject.site(*s).and_then(|m| m.flow).is_none()).collect();
    if !missing.is_empty() {
        return Err(subject.missing(&missing));
    }
    Ok(sites.iter().map(|s| subject.site(*s).and_then(|m| m.flow).unwrap_or(0.0)).sum())
}

/// Cardiac output taken as the summed flow at d, e, f, h and o.
pub fn cardiac_output(subject: &SubjectRecord) -> Result<f64> {
    site_sum(subject, &OUTPUT_SITES)
}

/// Superior vena cava return, equal to the upper-body flow at d, e, f and h.
pub fn superior_return(subject: &SubjectRecord) -> Result<f64> {
    site_sum(subject, &SUPERIOR_SITES)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectCheck {
    pub subject: String,
    pub q_ivc: f64,
    pub venous_return: f64,
    pub cardiac_output: f64,
    pub relative_error: f64,
}

pub fn relative_error(venous_return: f64, cardiac_output: f64) -> Result<f64> {
    if !(cardiac_output > 0.0) {
        return Err(domain(format!("cardiac output must be positive, got {cardiac_output}")));
    }
    Ok((venous_return - cardiac_output).abs() / cardiac_output)
}

pub fn venous_return_check(subject: &SubjectRecord, q_ivc: f64, q_superior: f64) -> Result<SubjectCheck> {
    let co = cardiac_output(subject)?;
    let vr = q_superior + q_ivc;
    Ok(SubjectCheck {
        subject: subject.id.clone(),
        q_ivc,
        venous_return: vr,
        cardiac_output: co,
        relative_error: relative_error(vr, co)?,
    })
}

/// `(max - min) / mean` over per-cycle stroke volumes.
pub fn svv(stroke_volumes: &[f64]) -> Result<f64> {
    if stroke_volumes.len() < 2 {
        return Err(domain("stroke volume variation needs at least two cycles"));
    }
    let max = stroke_volumes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = stroke_volumes.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = stroke_volumes.iter().sum::<f64>() / stroke_volumes.len() as f64;
    if !(mean > 0.0) {
        return Err(domain("mean stroke volume must be positive"));
    }
    Ok((max - min) / mean)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerificationReport {
    pub subjects: Vec<SubjectCheck>,
    pub svv: Option<f64>,
}

impl VerificationReport {
    pub fn mre(&self) -> Option<f64> {
        if self.subjects.is_empty() {
            return None;
        }
        Some(self.subjects.iter().map(|s| s.relative_error).sum::<f64>() / self.subjects.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["subject_id", "q_ivc", "venous_return", "cardiac_output", "relative_error"])?;
        for s in &self.subjects {
            w.write_record([
                s.subject.clone(),
                s.q_ivc.to_string(),
                s.venous_return.to_string(),
                s.cardiac_output.to_string(),
                s.relative_error.to_string(),
            ])?;
        }
        w.flush().map_err(Error::from)
    }

    pub fn summary_line(&self) -> String {
        match self.mre() {
            Some(m) => format!("subjects={} mre={:.6} mre_percent={:.4}", self.subjects.len(), m, 100.0 * m),
            None => "subjects=0 mre=nan".to_string(),
        }
    }
}
