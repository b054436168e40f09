use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use entangler::pipeline::{run_end_to_end, BellLabel, JsonlSink, ProtocolModes, RunReport, TraceRecord, TraceSink};
use entangler::rng::Sampler;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Format, Overrides};
use crate::CliError;

fn write_trace(path: &Path, runs: &[&[TraceRecord]]) -> Result<(), CliError> {
    let sink = JsonlSink::new(BufWriter::new(File::create(path)?));
    for r in runs {
        sink.append_run(r)?;
    }
    sink.into_inner().flush()?;
    Ok(())
}

/// One end-to-end run; stream 0 draws a random input, stream 1 the outcomes.
pub fn single_run(s: &Overrides) -> Result<RunReport, CliError> {
    let seed = s.require_seed()?;
    let cfg = s.run_config()?;
    let modes = ProtocolModes::new();
    let input = s.input_state(&mut Sampler::substream(seed, 0))?;
    Ok(run_end_to_end(&input, &cfg, &modes, &mut Sampler::substream(seed, 1), 0)?)
}

pub fn cmd_run(s: &Overrides, out: &mut dyn Write) -> Result<(), CliError> {
    let report = single_run(s)?;
    if let Some(p) = s.output_path(&s.trace, "run_trace.jsonl") {
        write_trace(&p, &[&report.trace])?;
    }
    let o = &report.outcome;
    let s1 = &report.stage1;
    let label = o.bell.map_or_else(|| "none".to_string(), |b| b.to_string());
    match s.format() {
        Format::Text => {
            writeln!(out, "design      {}", s1.design)?;
            writeln!(out, "pattern     {} ports {}{} p={:.16e}", s1.pattern, s1.ports.0, s1.ports.1, s1.probability)?;
            writeln!(out, "detector    {} p={:.16e}", o.detector, o.probability)?;
            writeln!(out, "outcome     {label} success={}", o.success)?;
            match o.fidelity {
                Some(f) => writeln!(out, "fidelity    {f:.16e}")?,
                None => writeln!(out, "fidelity    n/a")?,
            }
            for (name, p) in &o.branch_probabilities {
                writeln!(out, "branch      {name} {p:.16e}")?;
            }
        }
        Format::Json => {
            let branches: Vec<_> = o.branch_probabilities.iter().map(|(n, p)| json!({"name": n, "p": p})).collect();
            let v = json!({
                "design": s1.design.to_string(),
                "pattern": s1.pattern.to_string(),
                "ports": format!("{}{}", s1.ports.0, s1.ports.1),
                "pattern_probability": s1.probability,
                "detector": o.detector,
                "detector_probability": o.probability,
                "outcome": label,
                "success": o.success,
                "fidelity": o.fidelity,
                "branches": branches,
            });
            writeln!(out, "{v}")?;
        }
    }
    Ok(())
}

/// Compact result of one sampled run.
#[derive(Debug, Clone)]
pub struct Trial {
    pub success: bool,
    pub bell: Option<BellLabel>,
    pub pattern: String,
    pub fidelity: Option<f64>,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSummary {
    pub trials: usize,
    pub successes: usize,
    pub labels: BTreeMap<String, usize>,
    pub patterns: BTreeMap<String, usize>,
    pub mean_fidelity: Option<f64>,
}

impl SampleSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// `samples` independent runs; run `i` uses substream `i + 1` and the input
/// is drawn once from substream 0.
pub fn sample_trials(s: &Overrides, keep_trace: bool) -> Result<(SampleSummary, Vec<Trial>), CliError> {
    let seed = s.require_seed()?;
    let n = s.samples.unwrap_or(1000);
    if n == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let cfg = s.run_config()?;
    let modes = ProtocolModes::new();
    let input = s.input_state(&mut Sampler::substream(seed, 0))?;
    let trials: Vec<Trial> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let r = run_end_to_end(&input, &cfg, &modes, &mut Sampler::substream(seed, i + 1), i)?;
            Ok(Trial {
                success: r.outcome.success,
                bell: r.outcome.bell,
                pattern: r.stage1.pattern.to_string(),
                fidelity: r.outcome.fidelity,
                trace: if keep_trace { r.trace } else { Vec::new() },
            })
        })
        .collect::<Result<_, entangler::Error>>()?;
    let mut labels = BTreeMap::new();
    let mut patterns = BTreeMap::new();
    let (mut fsum, mut fcount) = (0.0, 0usize);
    for t in &trials {
        let l = t.bell.map_or_else(|| "none".to_string(), |b| b.to_string());
        *labels.entry(l).or_insert(0) += 1;
        *patterns.entry(t.pattern.clone()).or_insert(0) += 1;
        if let (true, Some(f)) = (t.success, t.fidelity) {
            fsum += f;
            fcount += 1;
        }
    }
    let summary = SampleSummary {
        trials: n,
        successes: trials.iter().filter(|t| t.success).count(),
        labels,
        patterns,
        mean_fidelity: (fcount > 0).then(|| fsum / fcount as f64),
    };
    Ok((summary, trials))
}

pub fn cmd_sample(s: &Overrides, out: &mut dyn Write) -> Result<(), CliError> {
    let trace_path = s.output_path(&s.trace, "sample_trace.jsonl");
    let (sum, trials) = sample_trials(s, trace_path.is_some())?;
    if let Some(p) = trace_path {
        let runs: Vec<&[TraceRecord]> = trials.iter().map(|t| t.trace.as_slice()).collect();
        write_trace(&p, &runs)?;
    }
    let rate = sum.success_rate();
    let err = (rate * (1.0 - rate) / sum.trials as f64).sqrt();
    match s.format() {
        Format::Text => {
            writeln!(out, "trials      {}", sum.trials)?;
            writeln!(out, "success     {} rate={rate:.6} std_err={err:.6}", sum.successes)?;
            for (l, c) in &sum.labels {
                writeln!(out, "label       {l} {c}")?;
            }
            for (p, c) in &sum.patterns {
                writeln!(out, "pattern     {p} {c}")?;
            }
            if let Some(f) = sum.mean_fidelity {
                writeln!(out, "fidelity    {f:.16e}")?;
            }
        }
        Format::Json => {
            let v = json!({
                "trials": sum.trials,
                "successes": sum.successes,
                "rate": rate,
                "std_err": err,
                "labels": sum.labels,
                "patterns": sum.patterns,
                "mean_fidelity": sum.mean_fidelity,
            });
            writeln!(out, "{v}")?;
        }
    }
    Ok(())
}
