use std::path::{Path, PathBuf};

use clap::Args;
use entangler::detection::ApdModel;
use entangler::hybrid_state::{Diag, Pol};
use entangler::loss::ChannelParams;
use entangler::pipeline::{random_input, Backend, Design, GateConfig, Heralding, InputPairState, QndConfig, RunConfig};
use entangler::rng::Sampler;
use num_complex::Complex64;
use serde::Deserialize;

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ENTANGLER_OUT_DIR";

pub const DEFAULT_ETAS: [f64; 5] = [0.67, 0.50, 0.33, 0.24, 0.13];

/// Settings shared by the config file and the command line. Every field is
/// optional; command-line values win over file values.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Decomposition circuit: fig1 (H/V split) or fig3 (± split)
    #[arg(long)]
    pub design: Option<Design>,
    /// Parity-gate qubus amplitude (real)
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Parity-gate XPM phase
    #[arg(long)]
    pub theta: Option<f64>,
    /// Channel transmission
    #[arg(long)]
    pub eta: Option<f64>,
    /// Fiber loss rate; with --dt gives eta = exp(-gamma dt)
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Detector efficiency
    #[arg(long)]
    pub eta_d: Option<f64>,
    #[arg(long)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// QND module amplitude in the decomposition stage
    #[arg(long)]
    pub qnd_alpha: Option<f64>,
    #[arg(long)]
    pub qnd_theta: Option<f64>,
    /// ideal or povm
    #[arg(long)]
    pub heralding: Option<Heralding>,
    /// HH, HV, VH, VV, ++, +-, -+, -- or random
    #[arg(long, allow_hyphen_values = true)]
    pub input: Option<String>,
    /// Rank of a random input
    #[arg(long)]
    pub rank: Option<usize>,
    /// Report odd photon counts as |Ψ+> after a Z on photon A
    #[arg(long)]
    pub canonical_frame: Option<bool>,
    /// Trace file (line-delimited JSON)
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Output file for CSV results
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format: text or json
    #[arg(long)]
    pub format: Option<Format>,
    /// Transmissions for the efficiency sweep
    #[arg(long, value_delimiter = ',')]
    pub etas: Option<Vec<f64>>,
    #[arg(long)]
    pub f_min: Option<f64>,
    #[arg(long)]
    pub f_max: Option<f64>,
    #[arg(long)]
    pub f_points: Option<usize>,
    /// Random inputs checked by table1
    #[arg(long)]
    pub trials: Option<usize>,
    /// Oracle checks to run: elements, channel, measurement or all
    #[arg(long, value_delimiter = ',')]
    pub scope: Option<Vec<String>>,
}

impl Overrides {
    /// Field-wise merge; `self` wins.
    pub fn or(self, file: Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: self.$f.or(file.$f)),* } };
        }
        pick!(
            design,
            alpha,
            theta,
            eta,
            gamma,
            dt,
            eta_d,
            backend,
            samples,
            seed,
            qnd_alpha,
            qnd_theta,
            heralding,
            input,
            rank,
            canonical_frame,
            trace,
            out,
            format,
            etas,
            f_min,
            f_max,
            f_points,
            trials,
            scope
        )
    }

    pub fn load(path: &Path) -> Result<Overrides, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Usage("--seed is required for this command".into()))
    }

    pub fn channel(&self) -> Result<ChannelParams, CliError> {
        let ch = match (self.eta, self.gamma, self.dt) {
            (Some(eta), Some(g), Some(dt)) => ChannelParams::with_loss_rate(eta, g, dt)?,
            (None, Some(g), Some(dt)) => ChannelParams::from_loss_rate(g, dt)?,
            (Some(eta), None, None) => ChannelParams::new(eta)?,
            (None, None, None) => ChannelParams::lossless(),
            _ => return Err(CliError::Usage("--gamma and --dt must be given together".into())),
        };
        Ok(ch)
    }

    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let apd = ApdModel::new(self.eta_d.unwrap_or(1.0))?;
        let qnd = QndConfig {
            alpha: Complex64::new(self.qnd_alpha.unwrap_or(100.0), 0.0),
            theta: self.qnd_theta.unwrap_or(0.3),
            apd,
            heralding: self.heralding.unwrap_or(Heralding::Ideal),
        };
        qnd.validate()?;
        let mut gate = GateConfig::new(
            Complex64::new(self.alpha.unwrap_or(10.0), 0.0),
            self.theta.unwrap_or(0.3),
            self.backend.unwrap_or(Backend::Pnr),
        )
        .with_channel(self.channel()?);
        gate.apd = apd;
        gate.canonical_frame = self.canonical_frame.unwrap_or(false);
        entangler::elements::XpmParams::new(gate.theta)?;
        Ok(RunConfig { design: self.design.unwrap_or(Design::Fig1), qnd, gate })
    }

    /// The two-photon input; random inputs draw from `sampler`.
    pub fn input_state(&self, sampler: &mut Sampler) -> Result<InputPairState, CliError> {
        let spec = self.input.as_deref().unwrap_or("HH");
        parse_input(spec, self.rank.unwrap_or(4), sampler)
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Text)
    }

    /// Explicit path, else `name` inside the output directory if one is set.
    pub fn output_path(&self, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
        explicit.clone().or_else(|| std::env::var_os(OUT_DIR_ENV).map(|d| PathBuf::from(d).join(name)))
    }
}

pub fn parse_input(spec: &str, rank: usize, sampler: &mut Sampler) -> Result<InputPairState, CliError> {
    if spec.eq_ignore_ascii_case("random") {
        return Ok(random_input(sampler, rank)?);
    }
    let chars: Vec<char> = spec.chars().collect();
    let bad = || CliError::Usage(format!("unknown input '{spec}'"));
    if chars.len() != 2 {
        return Err(bad());
    }
    let pol = |c: char| match c {
        'H' | 'h' => Some(Pol::H),
        'V' | 'v' => Some(Pol::V),
        _ => None,
    };
    let diag = |c: char| match c {
        '+' => Some(Diag::Plus),
        '-' => Some(Diag::Minus),
        _ => None,
    };
    match (pol(chars[0]), pol(chars[1]), diag(chars[0]), diag(chars[1])) {
        (Some(a), Some(b), _, _) => Ok(InputPairState::basis(a, b)),
        (_, _, Some(a), Some(b)) => Ok(InputPairState::diagonal(a, b)),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
}
