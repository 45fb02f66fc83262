//! Event counters of the datapath.
//!
//! | counter            | meaning                                                                 |
//! |--------------------|-------------------------------------------------------------------------|
//! | `adds_performed`   | adder-tree positions holding a non-zero code                            |
//! | `adds_skipped`     | real (non-padding) positions holding code 0                             |
//! | `padding_slots`    | positions beyond the layer width in the last tile of a row              |
//! | `basis_adds`       | per-basis additions, the popcount of every non-zero code                |
//! | `mults`            | MAC-array multiplications, 4 per row per tile                           |
//! | `fifo_pops`        | weight-ID FIFO pops                                                     |
//! | `fifo_repeat_pops` | pops returning the same code as the previous pop of that queue          |
//! | `bytes_offchip`    | weight payload loaded from external memory, once per model load         |
//! | `bytes_onchip`     | payload re-read, activations loaded and outputs written per sample      |
//! | `overflow_events`  | adder-tree or accumulator results outside their register width          |
//! | `act_clamps`       | next-layer activations clamped to the int8 range                        |
//!
//! For every layer run `adds_performed + adds_skipped + padding_slots = 256 · rows · tiles`.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatapathTrace {
    pub adds_performed: u64,
    pub adds_skipped: u64,
    pub padding_slots: u64,
    pub basis_adds: u64,
    pub mults: u64,
    pub fifo_pops: u64,
    pub fifo_repeat_pops: u64,
    pub bytes_offchip: u64,
    pub bytes_onchip: u64,
    pub overflow_events: u64,
    pub act_clamps: u64,
}

impl std::ops::AddAssign for DatapathTrace {
    fn add_assign(&mut self, o: Self) {
        self.adds_performed += o.adds_performed;
        self.adds_skipped += o.adds_skipped;
        self.padding_slots += o.padding_slots;
        self.basis_adds += o.basis_adds;
        self.mults += o.mults;
        self.fifo_pops += o.fifo_pops;
        self.fifo_repeat_pops += o.fifo_repeat_pops;
        self.bytes_offchip += o.bytes_offchip;
        self.bytes_onchip += o.bytes_onchip;
        self.overflow_events += o.overflow_events;
        self.act_clamps += o.act_clamps;
    }
}

impl std::ops::Add for DatapathTrace {
    type Output = Self;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl std::iter::Sum for DatapathTrace {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

impl DatapathTrace {
    /// Every adder-tree slot visited.
    pub fn slots(&self) -> u64 {
        self.adds_performed + self.adds_skipped + self.padding_slots
    }
}

/// One CSV row per layer, counters summed over all samples.
pub fn write_trace_csv<W: std::io::Write>(out: W, per_layer: &[DatapathTrace]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "layer",
        "adds_performed",
        "adds_skipped",
        "padding_slots",
        "basis_adds",
        "mults",
        "fifo_pops",
        "fifo_repeat_pops",
        "bytes_offchip",
        "bytes_onchip",
        "overflow_events",
        "act_clamps",
    ])?;
    for (layer, t) in per_layer.iter().enumerate() {
        w.write_record(
            [
                layer as u64,
                t.adds_performed,
                t.adds_skipped,
                t.padding_slots,
                t.basis_adds,
                t.mults,
                t.fifo_pops,
                t.fifo_repeat_pops,
                t.bytes_offchip,
                t.bytes_onchip,
                t.overflow_events,
                t.act_clamps,
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// A line of the JSON event log: one event per (sample, layer) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub sample: usize,
    pub layer: usize,
    #[serde(flatten)]
    pub trace: DatapathTrace,
}

pub fn write_trace_jsonl<W: std::io::Write>(mut out: W, events: &[TraceEvent]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
