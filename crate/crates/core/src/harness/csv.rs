//! CSV writers for every harness result.

use std::io::Write;

use ::csv::Writer;

use super::audit::AuditReport;
use super::convergence::ConvergenceReport;
use super::ensemble::ReferenceRun;
use super::stability::StabilityRow;
use super::stats::EnsembleSeries;
use super::HarnessError;

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `t,observable,mean,std,ci_halfwidth,n_samples`
pub fn write_ensemble<W: Write>(out: W, s: &EnsembleSeries) -> Result<(), HarnessError> {
    let mut w = Writer::from_writer(out);
    w.write_record(["t", "observable", "mean", "std", "ci_halfwidth", "n_samples"])?;
    for (k, t) in s.times.iter().enumerate() {
        for (j, name) in s.observables.iter().enumerate() {
            w.write_record([
                t.to_string(),
                name.clone(),
                s.mean[k][j].to_string(),
                s.std[k][j].to_string(),
                s.halfwidth[k][j].to_string(),
                s.n_samples.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t,observable,value`
pub fn write_reference<W: Write>(out: W, r: &ReferenceRun) -> Result<(), HarnessError> {
    let mut w = Writer::from_writer(out);
    w.write_record(["t", "observable", "value"])?;
    for (t, row) in r.series.times.iter().zip(&r.series.values) {
        for (name, v) in r.observables.iter().zip(row) {
            w.write_record([t.to_string(), name.clone(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `dt,abs_error,mc_halfwidth,bias_dominated`
pub fn write_convergence<W: Write>(out: W, r: &ConvergenceReport) -> Result<(), HarnessError> {
    let mut w = Writer::from_writer(out);
    w.write_record(["dt", "abs_error", "mc_halfwidth", "bias_dominated"])?;
    for p in &r.points {
        w.write_record([
            p.dt.to_string(),
            p.abs_error.to_string(),
            p.mc_halfwidth.to_string(),
            p.bias_dominated.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `cell,expected_re,expected_im,estimate_re,estimate_im,se_re,se_im,pass`
pub fn write_audit<W: Write>(out: W, r: &AuditReport) -> Result<(), HarnessError> {
    let mut w = Writer::from_writer(out);
    w.write_record([
        "cell",
        "expected_re",
        "expected_im",
        "estimate_re",
        "estimate_im",
        "se_re",
        "se_im",
        "pass",
    ])?;
    for c in &r.cells {
        w.write_record([
            c.cell.clone(),
            c.expected.re.to_string(),
            c.expected.im.to_string(),
            c.estimate.re.to_string(),
            c.estimate.im.to_string(),
            c.se.0.to_string(),
            c.se.1.to_string(),
            c.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `dt,diverged,time,trajectory`; the last two are empty for stable runs.
pub fn write_stability<W: Write>(out: W, rows: &[StabilityRow]) -> Result<(), HarnessError> {
    let mut w = Writer::from_writer(out);
    w.write_record(["dt", "diverged", "time", "trajectory"])?;
    for r in rows {
        w.write_record([r.dt.to_string(), r.diverged.to_string(), opt(r.time), opt(r.trajectory)])?;
    }
    w.flush()?;
    Ok(())
}
