use std::fs::File;
use std::io::{BufWriter, Write};

use entangler::detection::pnr_distribution;
use entangler::hybrid_state::{Pol, C64};
use entangler::loss::{alpha_for_fidelity, success_bound, ChannelParams};
use entangler::pipeline::{
    parity_projection, pre_detection_state, stage1_outcomes, Backend, Design, GateConfig, InputPairState, Parity,
    ProtocolModes, QndConfig, StageOneResult,
};
use entangler::rng::{CumulativeTable, Sampler};
use rayon::prelude::*;

use crate::config::{Overrides, DEFAULT_ETAS};
use crate::CliError;

pub const SCHEMA: &str = "# schema: figure4/v1";
pub const HEADER: &str = "eta,F,P_closed,P_sim,n,std_err";

/// Default XPM phase of the sweep; small enough that the small-angle law holds.
pub const DEFAULT_THETA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub eta: f64,
    pub f: f64,
    pub p_closed: f64,
    pub p_sim: f64,
    pub n: usize,
    pub std_err: f64,
}

impl Row {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.eta, self.f, self.p_closed, self.p_sim, self.n, self.std_err)
    }
}

pub fn grid(s: &Overrides) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let etas = s.etas.clone().unwrap_or_else(|| DEFAULT_ETAS.to_vec());
    let (lo, hi, k) = (s.f_min.unwrap_or(0.51), s.f_max.unwrap_or(0.99), s.f_points.unwrap_or(21));
    if etas.is_empty() || k == 0 || !(lo <= hi) {
        return Err(CliError::Usage("empty sweep grid".into()));
    }
    let fs = if k == 1 { vec![lo] } else { (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect() };
    Ok((etas, fs))
}

/// Success of one grid point: `n` photon-number draws on the odd-parity
/// output, counting nonzero results.
fn point(
    stage1: &StageOneResult,
    modes: &ProtocolModes,
    eta: f64,
    f: f64,
    theta: f64,
    n: usize,
    sampler: &mut Sampler,
) -> Result<Row, entangler::Error> {
    let p_closed = success_bound(f, eta)?;
    let alpha = alpha_for_fidelity(f, eta, theta)?;
    let gate = GateConfig::new(C64::new(alpha, 0.0), theta, Backend::Pnr).with_channel(ChannelParams::new(eta)?);
    let pre = pre_detection_state(stage1, modes, &gate)?;
    let (_, odd) = parity_projection(&pre, modes, Parity::Odd).ok_or(entangler::Error::ZeroNorm)?;
    let table = CumulativeTable::new(&pnr_distribution(&odd, modes.p[0])?);
    let hits = (0..n).filter(|_| table.sample(sampler) > 0).count();
    Ok(Row {
        eta,
        f,
        p_closed,
        p_sim: hits as f64 / n as f64,
        n,
        std_err: (p_closed * (1.0 - p_closed) / n as f64).sqrt(),
    })
}

/// All grid points in row-major (eta, F) order; point `i` draws from
/// substream `i`. Points outside the model domain come back as errors.
pub fn rows(s: &Overrides) -> Result<Vec<Result<Row, entangler::Error>>, CliError> {
    let seed = s.require_seed()?;
    let n = s.samples.unwrap_or(10_000);
    if n == 0 {
        return Err(CliError::Usage("--samples must be positive".into()));
    }
    let theta = s.theta.unwrap_or(DEFAULT_THETA);
    let (etas, fs) = grid(s)?;
    let modes = ProtocolModes::new();
    let stage1 =
        stage1_outcomes(&InputPairState::basis(Pol::H, Pol::H), Design::Fig1, &modes, &QndConfig::default())?.remove(0);
    let pts: Vec<(f64, f64)> = etas.iter().flat_map(|&e| fs.iter().map(move |&f| (e, f))).collect();
    Ok(pts
        .par_iter()
        .enumerate()
        .map(|(i, &(eta, f))| point(&stage1, &modes, eta, f, theta, n, &mut Sampler::substream(seed, i as u64)))
        .collect())
}

pub fn cmd_figure4(s: &Overrides, out: &mut dyn Write) -> Result<(), CliError> {
    let (etas, fs) = grid(s)?;
    let results = rows(s)?;
    let mut csv = vec![SCHEMA.to_string(), HEADER.to_string()];
    let mut notes = Vec::new();
    let n = s.samples.unwrap_or(10_000);
    let pts = etas.iter().flat_map(|&e| fs.iter().map(move |&f| (e, f)));
    for ((eta, f), r) in pts.zip(results) {
        match r {
            Ok(row) => csv.push(row.to_csv()),
            Err(e) => {
                notes.push(format!("eta={eta} F={f}: {e}"));
                csv.push(format!("{eta},{f},NaN,NaN,{n},NaN"));
            }
        }
    }
    match s.output_path(&s.out, "figure4.csv") {
        Some(p) => {
            let mut w = BufWriter::new(File::create(&p)?);
            for l in &csv {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
            writeln!(out, "wrote {}", p.display())?;
        }
        None => {
            for l in &csv {
                writeln!(out, "{l}")?;
            }
        }
    }
    for note in notes {
        eprintln!("skipped {note}");
    }
    Ok(())
}
