//! Stacked LSTM encoder whose upper layers halve temporal resolution by
//! concatenating consecutive frame pairs at their input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{LstmCache, LstmCell, LstmState};
use crate::error::{Error, Result};
use crate::numerics::ParamStore;

/// How a pyramid layer merges frame pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ReductionMode {
    #[default]
    ConcatPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// How many of the topmost layers halve time. Each such layer reads
    /// concatenated pairs of its predecessor's outputs, dropping a trailing
    /// odd frame.
    pub pyramid_layers: usize,
    pub reduction_mode: ReductionMode,
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            hidden_dim: 32,
            num_layers: 2,
            pyramid_layers: 1,
            reduction_mode: ReductionMode::ConcatPairs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.input_dim == 0 || self.num_layers == 0 {
            return Err(Error::InvalidArgument(
                "encoder dimensions must be positive".into(),
            ));
        }
        if self.pyramid_layers > self.num_layers {
            return Err(Error::InvalidArgument(format!(
                "pyramid_layers {} exceeds num_layers {}",
                self.pyramid_layers, self.num_layers
            )));
        }
        Ok(())
    }

    /// Output length for `t` input frames.
    pub fn output_len(&self, t: usize) -> usize {
        (0..self.pyramid_layers).fold(t, |acc, _| acc / 2)
    }

    pub fn min_input_len(&self) -> usize {
        1 << self.pyramid_layers
    }
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// Per layer: the input sequence it consumed and one cache per step.
    layers: Vec<(Vec<Vec<f64>>, Vec<LstmCache>)>,
    /// Raw frame count fed to layer 0, before any pairing.
    input_len: usize,
}

/// Encoder parameters live under `enc.l{i}.*`.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    cells: Vec<LstmCell>,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let first_pyramid = cfg.num_layers - cfg.pyramid_layers;
        let cells = (0..cfg.num_layers)
            .map(|l| {
                let base = if l == 0 {
                    cfg.input_dim
                } else {
                    cfg.hidden_dim
                };
                let input = if l >= first_pyramid { 2 * base } else { base };
                LstmCell::new(format!("enc.l{l}"), input, cfg.hidden_dim)
            })
            .collect();
        Ok(Encoder { cfg, cells })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for cell in &self.cells {
            cell.init(store, rng)?;
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        self.cells
            .iter()
            .flat_map(|c| c.param_names().into_iter())
            .collect()
    }

    fn is_pyramid(&self, layer: usize) -> bool {
        layer >= self.cfg.num_layers - self.cfg.pyramid_layers
    }

    /// Runs all layers over `frames`, returning the top layer's hidden states
    /// and a cache for [`Encoder::backward`].
    pub fn encode(
        &self,
        store: &ParamStore,
        frames: &[Vec<f64>],
    ) -> Result<(Vec<Vec<f64>>, EncoderCache)> {
        if frames.len() < self.cfg.min_input_len() {
            return Err(Error::InputTooShort {
                min: self.cfg.min_input_len(),
                got: frames.len(),
            });
        }
        let mut seq: Vec<Vec<f64>> = frames.to_vec();
        let mut layers = Vec::with_capacity(self.cells.len());
        for (l, cell) in self.cells.iter().enumerate() {
            let input: Vec<Vec<f64>> = if self.is_pyramid(l) {
                seq.chunks_exact(2)
                    .map(|pair| {
                        let mut merged = pair[0].clone();
                        merged.extend_from_slice(&pair[1]);
                        merged
                    })
                    .collect()
            } else {
                seq
            };
            let mut state = LstmState::zeros(self.cfg.hidden_dim);
            let mut outputs = Vec::with_capacity(input.len());
            let mut caches = Vec::with_capacity(input.len());
            for x in &input {
                let (next, cache) = cell.step(store, x, &state)?;
                outputs.push(next.h.clone());
                caches.push(cache);
                state = next;
            }
            layers.push((input, caches));
            seq = outputs;
        }
        Ok((
            seq,
            EncoderCache {
                layers,
                input_len: frames.len(),
            },
        ))
    }

    /// Backpropagates per-state gradients on the top layer's outputs down to
    /// the parameter store. Gradients on the raw input frames are returned
    /// (useful for diagnostics; callers usually discard them).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &EncoderCache,
        d_states: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let h = self.cfg.hidden_dim;
        let mut d_out: Vec<Vec<f64>> = d_states.to_vec();
        for (l, cell) in self.cells.iter().enumerate().rev() {
            let (input, caches) = &cache.layers[l];
            if d_out.len() != caches.len() {
                return Err(Error::Shape {
                    op: "Encoder::backward",
                    expected: format!("{} gradient rows for layer {l}", caches.len()),
                    got: format!("{}", d_out.len()),
                });
            }
            let mut d_inputs: Vec<Vec<f64>> = vec![Vec::new(); input.len()];
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            for t in (0..caches.len()).rev() {
                let dh: Vec<f64> = d_out[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                let (dx, dh_prev, dc_prev) = cell.backward(store, &caches[t], &dh, &dc_next)?;
                d_inputs[t] = dx;
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            // Translate input gradients back into the previous layer's output
            // space, splitting concatenated pairs. A dropped odd frame gets
            // zero gradient.
            if self.is_pyramid(l) {
                let below = if l == 0 {
                    self.cfg.input_dim
                } else {
                    self.cfg.hidden_dim
                };
                let orig_len = if l == 0 {
                    cache.input_len
                } else {
                    cache.layers[l - 1].1.len()
                };
                let mut d_prev = vec![vec![0.0; below]; orig_len];
                for (pair, dx) in d_inputs.iter().enumerate() {
                    d_prev[2 * pair].copy_from_slice(&dx[..below]);
                    d_prev[2 * pair + 1].copy_from_slice(&dx[below..]);
                }
                d_out = d_prev;
            } else {
                d_out = d_inputs;
            }
        }
        Ok(d_out)
    }
}
