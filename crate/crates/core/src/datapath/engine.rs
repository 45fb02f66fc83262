use super::fifo::{csr_row_to_bitmask, generate_weight_ids, WeightIdFifo};
use super::float::{fixed_to_float, FloatRounding};
use super::tile::{adder_tree, mac_array, ActivationTile};
use super::trace::{DatapathTrace, TraceEvent};
use super::DatapathError;
use crate::codec::{tile_width, tiles_per_row, ContainerLayer, LayerPayload, ModelContainer, TileMask, TILE_WIDTH};
use crate::codes::CodeMatrix;

/// Rows streamed per FIFO fill; matches the queue depth.
pub const ROW_BLOCK: usize = 256;

/// Per-output float chain: `α1` scale, bias, optional ReLU, `α2` scale, then
/// rounding half away from zero into the signed 16-bit range.
pub fn postprocess(mac_f: f32, alpha1: f32, bias: f32, alpha2: f32, relu: bool, rounding: FloatRounding) -> i16 {
    let mut x = rounding.add(rounding.mul(mac_f, alpha1), bias);
    if relu && !(x > 0.0) {
        x = 0.0;
    }
    let y = rounding.mul(x, alpha2).round();
    if y.is_nan() {
        0
    } else {
        y.clamp(i16::MIN as f32, i16::MAX as f32) as i16
    }
}

/// Narrows a layer output to the next layer's int8 input.
pub fn clamp_to_i8(v: i16) -> (i8, bool) {
    let c = v.clamp(i8::MIN as i16, i8::MAX as i16);
    (c as i8, c != v)
}

/// Quantizes a real input with `scale` (one int8 unit), rounding half away
/// from zero and saturating.
pub fn quantize_input(x: f64, scale: f64) -> (i8, bool) {
    let q = (x / scale).round();
    let c = q.clamp(i8::MIN as f64, i8::MAX as f64);
    (c as i8, c != q)
}

enum Occupancy {
    Masks(Vec<TileMask>),
    Csr { counts: Vec<u8>, starts: Vec<usize>, positions: Vec<u8> },
    Dense(CodeMatrix),
}

/// Output of one layer on one input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRun {
    pub outputs: Vec<i16>,
    pub trace: DatapathTrace,
    /// FIFO pops per input column (zero for dense layers, which bypass the FIFOs).
    pub column_pops: Vec<u64>,
}

/// A layer with its payload parsed and FIFO contents staged, ready to run on
/// any number of inputs.
pub struct LoadedLayer<'a> {
    layer: &'a ContainerLayer,
    rows: usize,
    cols: usize,
    tiles: usize,
    occupancy: Occupancy,
    /// `queues[block · tiles + tile][j]`: codes of column `j` of that tile for
    /// the rows of that block, in row order.
    queues: Vec<Vec<Vec<u8>>>,
}

impl<'a> LoadedLayer<'a> {
    pub fn load(layer: &'a ContainerLayer) -> Result<Self, DatapathError> {
        let (rows, cols) = (layer.rows(), layer.cols());
        if layer.alpha1.len() != rows || layer.bias.len() != rows {
            return Err(DatapathError::Dim {
                what: "per-row scales",
                expected: rows,
                found: layer.alpha1.len().min(layer.bias.len()),
            });
        }
        let tiles = tiles_per_row(cols);
        let blocks = rows.div_ceil(ROW_BLOCK);
        let mut queues = vec![vec![Vec::new(); TILE_WIDTH]; blocks * tiles];
        let occupancy = match layer.weights.payload()? {
            LayerPayload::Dense4(d) => Occupancy::Dense(d.codes),
            LayerPayload::Bitmask(b) => {
                let mut values = b.values.iter();
                for r in 0..rows {
                    for t in 0..tiles {
                        for j in b.masks[r * tiles + t].ones() {
                            queues[(r / ROW_BLOCK) * tiles + t][j].push(*values.next().expect("payload validated"));
                        }
                    }
                }
                Occupancy::Masks(b.masks)
            }
            LayerPayload::Csr(c) => {
                let mut starts = Vec::with_capacity(c.counts.len());
                let mut k = 0;
                for r in 0..rows {
                    for t in 0..tiles {
                        starts.push(k);
                        for _ in 0..c.counts[r * tiles + t] {
                            queues[(r / ROW_BLOCK) * tiles + t][c.positions[k] as usize].push(c.values[k]);
                            k += 1;
                        }
                    }
                }
                Occupancy::Csr {
                    counts: c.counts,
                    starts,
                    positions: c.positions,
                }
            }
        };
        Ok(Self {
            layer,
            rows,
            cols,
            tiles,
            occupancy,
            queues,
        })
    }

    /// Bytes moved from external memory to load the weights.
    pub fn offchip_bytes(&self) -> u64 {
        self.layer.weights.byte_len() as u64
    }

    fn row_mask(&self, row: usize, tile: usize) -> Result<TileMask, DatapathError> {
        let idx = row * self.tiles + tile;
        match &self.occupancy {
            Occupancy::Masks(m) => Ok(m[idx]),
            Occupancy::Csr { counts, starts, positions } => {
                let count = counts[idx] as usize;
                csr_row_to_bitmask(&positions[starts[idx]..starts[idx] + count], count)
            }
            Occupancy::Dense(_) => unreachable!("dense rows are read positionally"),
        }
    }

    pub fn run(&self, input: &[i8], rounding: FloatRounding) -> Result<LayerRun, DatapathError> {
        if input.len() != self.cols {
            return Err(DatapathError::Dim {
                what: "input activations",
                expected: self.cols,
                found: input.len(),
            });
        }
        let layer = self.layer;
        let mut trace = DatapathTrace {
            bytes_onchip: layer.weights.byte_len() as u64 + input.len() as u64 + 8 * self.rows as u64 + 4 + 2 * self.rows as u64,
            ..Default::default()
        };
        let act_tiles: Vec<ActivationTile> = (0..self.tiles)
            .map(|t| ActivationTile::load(&input[t * TILE_WIDTH..t * TILE_WIDTH + tile_width(self.cols, t)], layer.half_select))
            .collect();
        let mut column_pops = vec![0u64; self.cols];
        let mut acc = vec![0i32; self.rows];
        let mut fifo = WeightIdFifo::new();
        for block in 0..self.rows.div_ceil(ROW_BLOCK) {
            let block_rows = block * ROW_BLOCK..((block + 1) * ROW_BLOCK).min(self.rows);
            for (t, tile) in act_tiles.iter().enumerate() {
                let width = tile.width();
                let dense = matches!(self.occupancy, Occupancy::Dense(_));
                if !dense {
                    fifo.load(&self.queues[block * self.tiles + t])?;
                }
                let pops_before = fifo.pops();
                let repeats_before = fifo.repeat_pops();
                for r in block_rows.clone() {
                    let ids = match &self.occupancy {
                        Occupancy::Dense(codes) => {
                            let mut ids = [0u8; TILE_WIDTH];
                            ids[..width].copy_from_slice(&codes.row(r)[t * TILE_WIDTH..t * TILE_WIDTH + width]);
                            ids
                        }
                        _ => {
                            let mask = self.row_mask(r, t)?;
                            for j in mask.ones() {
                                column_pops[t * TILE_WIDTH + j] += 1;
                            }
                            generate_weight_ids(&mask, &mut fifo)?
                        }
                    };
                    let nonzero = ids[..width].iter().filter(|&&c| c != 0).count() as u64;
                    trace.adds_performed += nonzero;
                    trace.adds_skipped += width as u64 - nonzero;
                    trace.padding_slots += (TILE_WIDTH - width) as u64;
                    trace.basis_adds += ids[..width].iter().map(|c| c.count_ones() as u64).sum::<u64>();
                    let out = adder_tree(tile, &ids, layer.sign_mode);
                    trace.overflow_events += out.overflows as u64;
                    trace.mults += 4;
                    let mac = mac_array(&out.sums, &layer.omega).ok_or(DatapathError::AccumulatorOverflow { row: r })?;
                    acc[r] = acc[r]
                        .checked_add(mac)
                        .ok_or(DatapathError::AccumulatorOverflow { row: r })?;
                }
                if !dense {
                    if !fifo.is_empty() {
                        return Err(DatapathError::FifoResidue { block, tile: t });
                    }
                    trace.fifo_pops += fifo.pops() - pops_before;
                    trace.fifo_repeat_pops += fifo.repeat_pops() - repeats_before;
                }
            }
        }
        let outputs = acc
            .iter()
            .enumerate()
            .map(|(r, &a)| {
                postprocess(
                    fixed_to_float(a),
                    layer.alpha1[r],
                    layer.bias[r],
                    layer.alpha2,
                    layer.relu,
                    rounding,
                )
            })
            .collect();
        Ok(LayerRun {
            outputs,
            trace,
            column_pops,
        })
    }
}

/// Loads and runs one layer; the trace includes the off-chip weight load.
pub fn simulate_layer(layer: &ContainerLayer, input: &[i8], rounding: FloatRounding) -> Result<LayerRun, DatapathError> {
    let loaded = LoadedLayer::load(layer)?;
    let mut run = loaded.run(input, rounding)?;
    run.trace.bytes_offchip += loaded.offchip_bytes();
    Ok(run)
}

/// Result of running a batch through a whole container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelRun {
    /// Final-layer outputs per sample (quantized inputs for a 0-layer model).
    pub logits: Vec<Vec<i16>>,
    /// Counters per layer summed over the batch; weights are loaded once.
    pub per_layer: Vec<DatapathTrace>,
    /// Inputs clamped while quantizing the batch.
    pub input_clamps: u64,
    /// Per-sample, per-layer events when requested.
    pub events: Vec<TraceEvent>,
}

impl ModelRun {
    pub fn total(&self) -> DatapathTrace {
        self.per_layer.iter().copied().sum()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .iter()
            .map(|l| {
                let mut best = 0;
                for (k, &v) in l.iter().enumerate() {
                    if v > l[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SimOptions {
    pub rounding: FloatRounding,
    pub record_events: bool,
}

/// Runs every sample (rows of `inputs`, real-valued) through the container.
/// Inputs are quantized with the container's input scale; each layer's output
/// is clamped to int8 before feeding the next.
pub fn simulate_model<'s>(
    model: &ModelContainer,
    inputs: impl IntoIterator<Item = &'s [f64]>,
    opts: SimOptions,
) -> Result<ModelRun, DatapathError> {
    model.validate()?;
    let loaded = model.layers.iter().map(LoadedLayer::load).collect::<Result<Vec<_>, _>>()?;
    let mut per_layer: Vec<DatapathTrace> = loaded
        .iter()
        .map(|l| DatapathTrace {
            bytes_offchip: l.offchip_bytes(),
            ..Default::default()
        })
        .collect();
    let mut logits = Vec::new();
    let mut events = Vec::new();
    let mut input_clamps = 0;
    for (sample, x) in inputs.into_iter().enumerate() {
        if x.len() != model.input_dim {
            return Err(DatapathError::Dim {
                what: "sample features",
                expected: model.input_dim,
                found: x.len(),
            });
        }
        let mut act: Vec<i8> = x
            .iter()
            .map(|&v| {
                let (q, clamped) = quantize_input(v, model.input_scale as f64);
                input_clamps += clamped as u64;
                q
            })
            .collect();
        let mut out: Vec<i16> = act.iter().map(|&a| a as i16).collect();
        for (i, layer) in loaded.iter().enumerate() {
            let mut run = layer.run(&act, opts.rounding)?;
            out = run.outputs;
            if i + 1 < loaded.len() {
                act = out
                    .iter()
                    .map(|&v| {
                        let (a, clamped) = clamp_to_i8(v);
                        run.trace.act_clamps += clamped as u64;
                        a
                    })
                    .collect();
            }
            if opts.record_events {
                events.push(TraceEvent {
                    sample,
                    layer: i,
                    trace: run.trace,
                });
            }
            per_layer[i] += run.trace;
        }
        logits.push(out);
    }
    Ok(ModelRun {
        logits,
        per_layer,
        input_clamps,
        events,
    })
}
