use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::Result;
use crate::rng::Sampler;

use super::parity::{
    frame_correct, pnr_backend, pre_detection_state, threshold_backend, usd_backend, EntangleOutcome, GateConfig,
};
use super::stage1::{stage1_decompose, QndConfig, StageOneResult};
use super::{Backend, Design, InputPairState, ProtocolModes};

/// One pipeline stage of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run: u64,
    pub stage: String,
    pub outcome: String,
    pub probability: f64,
    pub checksum: String,
}

#[derive(Serialize)]
struct Line<'a> {
    run: u64,
    stage: &'a str,
    outcome: &'a str,
    probability: &'a RawValue,
    checksum: &'a str,
}

impl TraceRecord {
    /// JSON object on one line; the probability keeps 17 significant digits.
    pub fn to_json_line(&self) -> String {
        let p = format!("{:.16e}", self.probability);
        let raw = RawValue::from_string(p).expect("formatted float is a JSON number");
        serde_json::to_string(&Line {
            run: self.run,
            stage: &self.stage,
            outcome: &self.outcome,
            probability: &raw,
            checksum: &self.checksum,
        })
        .expect("trace record serializes")
    }
}

/// Append-only destination for run traces. A run's records are appended as
/// one block, so concurrent runs never interleave.
pub trait TraceSink: Send + Sync {
    fn append_run(&self, records: &[TraceRecord]) -> std::io::Result<()>;
}

#[derive(Debug, Default)]
pub struct MemorySink {
    records: Mutex<Vec<TraceRecord>>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.records.lock().expect("trace lock").clone()
    }
}

impl TraceSink for MemorySink {
    fn append_run(&self, records: &[TraceRecord]) -> std::io::Result<()> {
        self.records.lock().expect("trace lock").extend_from_slice(records);
        Ok(())
    }
}

/// Line-delimited JSON writer.
pub struct JsonlSink<W: Write + Send> {
    out: Mutex<W>,
}

impl<W: Write + Send> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        JsonlSink { out: Mutex::new(out) }
    }

    pub fn into_inner(self) -> W {
        self.out.into_inner().expect("trace lock")
    }
}

impl<W: Write + Send> TraceSink for JsonlSink<W> {
    fn append_run(&self, records: &[TraceRecord]) -> std::io::Result<()> {
        let mut block = String::new();
        for r in records {
            block.push_str(&r.to_json_line());
            block.push('\n');
        }
        let mut out = self.out.lock().expect("trace lock");
        out.write_all(block.as_bytes())?;
        out.flush()
    }
}

/// Everything needed for one end-to-end run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub design: Design,
    pub qnd: QndConfig,
    pub gate: GateConfig,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub stage1: StageOneResult,
    pub outcome: EntangleOutcome,
    pub trace: Vec<TraceRecord>,
}

/// Decomposition, heralding, parity gate and detection, with a trace record
/// per stage.
pub fn run_end_to_end(
    input: &InputPairState,
    config: &RunConfig,
    modes: &ProtocolModes,
    sampler: &mut Sampler,
    run: u64,
) -> Result<RunReport> {
    let mut trace = Vec::new();
    let mut rec = |stage: &str, outcome: String, probability: f64, checksum: String| {
        trace.push(TraceRecord { run, stage: stage.into(), outcome, probability, checksum });
    };
    let x0 = input.to_mixed(modes.registry.clone(), modes.a.input, modes.b.input)?;
    rec("input", format!("rank={}", input.rank()), 1.0, x0.checksum());

    let s1 = stage1_decompose(input, config.design, modes, &config.qnd, sampler)?;
    rec("stage1", format!("{} {}{}", s1.pattern, s1.ports.0, s1.ports.1), s1.probability, s1.post_state.checksum());
    rec(
        "frame",
        format!("flip={}{}", u8::from(s1.sign_flip.0), u8::from(s1.sign_flip.1)),
        1.0,
        frame_correct(&s1)?.checksum(),
    );

    let pre = pre_detection_state(&s1, modes, &config.gate)?;
    rec("pre_detection", config.gate.backend.to_string(), 1.0, pre.checksum());

    let outcome = match config.gate.backend {
        Backend::Pnr => pnr_backend(&pre, modes, &config.gate, sampler)?,
        Backend::Threshold => threshold_backend(&pre, modes, &config.gate, sampler)?,
        Backend::Usd => usd_backend(&pre, modes, &config.gate, sampler)?,
    };
    rec("detection", outcome.detector.clone(), outcome.probability, outcome.pair_state.checksum());
    let label = outcome.bell.map_or_else(|| "none".to_string(), |b| b.to_string());
    rec(
        "output",
        format!("{label} success={}", outcome.success),
        s1.probability * outcome.probability,
        outcome.pair_state.checksum(),
    );
    Ok(RunReport { stage1: s1, outcome, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_keeps_seventeen_digits() {
        let r = TraceRecord {
            run: 3,
            stage: "stage1".into(),
            outcome: "off-on".into(),
            probability: 0.1,
            checksum: "00ff".into(),
        };
        let line = r.to_json_line();
        assert!(line.contains("\"probability\":1.0000000000000001e-1"), "{line}");
        let back: TraceRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn concurrent_runs_do_not_interleave() {
        let sink = JsonlSink::new(Vec::new());
        std::thread::scope(|s| {
            for run in 0..8u64 {
                let sink = &sink;
                s.spawn(move || {
                    let recs: Vec<TraceRecord> = (0..50)
                        .map(|i| TraceRecord {
                            run,
                            stage: format!("s{i}"),
                            outcome: String::new(),
                            probability: 1.0,
                            checksum: String::new(),
                        })
                        .collect();
                    sink.append_run(&recs).unwrap();
                });
            }
        });
        let text = String::from_utf8(sink.into_inner()).unwrap();
        let lines: Vec<TraceRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 400);
        for block in lines.chunks(50) {
            assert!(block.iter().all(|r| r.run == block[0].run));
            for (i, r) in block.iter().enumerate() {
                assert_eq!(r.stage, format!("s{i}"));
            }
        }
    }
}
