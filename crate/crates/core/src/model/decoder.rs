//! Frame-synchronous attention decoder.
//!
//! For each encoder state the decoder LSTM consumes the previous output
//! state and its own previous hidden vector, then queries one attention over
//! the encoder states and one over the embeddings of all labels it has
//! emitted so far (greedy argmax, starting from a beginning-of-sequence
//! row). Both contexts merge into the output state that produces the frame's
//! label logits. The argmax history is treated as constant by the backward
//! pass; embedding rows still receive gradients through the attended keys.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{Attention, AttentionCache};
use super::lstm::{LstmCache, LstmCell, LstmState};
use crate::error::{Error, Result};
use crate::numerics::{affine, uniform_init, Matrix, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Output classes, blank included.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
}

impl DecoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        DecoderConfig {
            vocab_size,
            embed_dim: 16,
            hidden_dim: 32,
            attention_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "decoder vocabulary must hold blank plus one label, got {}",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.attention_dim == 0 {
            return Err(Error::InvalidArgument(
                "decoder dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Index of the beginning-of-sequence row in the embedding table: one past
/// the last class.
pub fn bos_index(vocab_size: usize) -> usize {
    vocab_size
}

#[derive(Debug, Clone)]
struct StepCache {
    lstm: LstmCache,
    att_x: AttentionCache,
    att_y: AttentionCache,
    /// `[ctx_x ; ctx_y]`, the input of the output-state projection.
    ctx_cat: Vec<f64>,
    s: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    steps: Vec<StepCache>,
    /// BOS followed by the argmax label of each step.
    history: Vec<usize>,
}

impl DecoderCache {
    /// The greedy frame labels the decoder produced (without the BOS).
    pub fn frame_labels(&self) -> &[usize] {
        &self.history[1..]
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub enc_hidden: usize,
    lstm: LstmCell,
    att_x: Attention,
    att_y: Attention,
}

impl Decoder {
    pub fn new(cfg: DecoderConfig, enc_hidden: usize) -> Result<Self> {
        cfg.validate()?;
        let hd = cfg.hidden_dim;
        Ok(Decoder {
            lstm: LstmCell::new("dec.lstm", 2 * hd, hd),
            att_x: Attention::new("attx", hd, enc_hidden, cfg.attention_dim),
            att_y: Attention::new("atty", hd, cfg.embed_dim, cfg.attention_dim),
            cfg,
            enc_hidden,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let v = self.cfg.vocab_size;
        let e = self.cfg.embed_dim;
        let hd = self.cfg.hidden_dim;
        store.insert("dec.embed", uniform_init(v + 1, e, e, rng))?;
        self.lstm.init(store, rng)?;
        self.att_x.init(store, rng)?;
        self.att_y.init(store, rng)?;
        let ctx = self.enc_hidden + e;
        store.insert("dec.w_s", uniform_init(hd, ctx, ctx, rng))?;
        store.insert("dec.b_s", Matrix::zeros(hd, 1))?;
        store.insert("dec.w_out", uniform_init(v, hd, hd, rng))?;
        store.insert("dec.b_out", Matrix::zeros(v, 1))?;
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "dec.embed".to_string(),
            "dec.w_s".to_string(),
            "dec.b_s".to_string(),
            "dec.w_out".to_string(),
            "dec.b_out".to_string(),
        ];
        names.extend(self.lstm.param_names());
        names.extend(self.att_x.param_names());
        names.extend(self.att_y.param_names());
        names
    }

    /// Runs one decoder step per encoder state; returns the logit matrix
    /// (one row per step) and the cache for [`Decoder::backward`].
    pub fn forward(
        &self,
        store: &ParamStore,
        enc_states: &[Vec<f64>],
    ) -> Result<(Matrix, DecoderCache)> {
        if enc_states.is_empty() {
            return Err(Error::EmptyInput("decoder over zero encoder states"));
        }
        let v = self.cfg.vocab_size;
        let hd = self.cfg.hidden_dim;
        let embed = store.value("dec.embed")?.clone();
        let w_s = store.value("dec.w_s")?.clone();
        let b_s = store.value("dec.b_s")?.clone();
        let w_out = store.value("dec.w_out")?.clone();
        let b_out = store.value("dec.b_out")?.clone();

        let mut history = vec![bos_index(v)];
        let mut s_prev = vec![0.0; hd];
        let mut state = LstmState::zeros(hd);
        let mut logits = Matrix::zeros(enc_states.len(), v);
        let mut steps = Vec::with_capacity(enc_states.len());

        for t in 0..enc_states.len() {
            let mut x = s_prev.clone();
            x.extend_from_slice(&state.h);
            let (next_state, lstm_cache) = self.lstm.step(store, &x, &state)?;

            let (res_x, att_x_cache) = self.att_x.attend(store, &next_state.h, enc_states)?;
            let keys_y: Vec<Vec<f64>> = history.iter().map(|&i| embed.row(i).to_vec()).collect();
            let (res_y, att_y_cache) = self.att_y.attend(store, &next_state.h, &keys_y)?;

            let mut ctx_cat = res_x.context;
            ctx_cat.extend_from_slice(&res_y.context);
            let s: Vec<f64> = affine(&ctx_cat, &w_s, b_s.data())?
                .into_iter()
                .map(f64::tanh)
                .collect();
            let row = affine(&s, &w_out, b_out.data())?;

            let mut best = 0usize;
            for (k, val) in row.iter().enumerate() {
                if *val > row[best] {
                    best = k;
                }
            }
            history.push(best);
            logits.row_mut(t).copy_from_slice(&row);
            steps.push(StepCache {
                lstm: lstm_cache,
                att_x: att_x_cache,
                att_y: att_y_cache,
                ctx_cat,
                s,
            });
            s_prev = steps[t].s.clone();
            state = next_state;
        }
        Ok((logits, DecoderCache { steps, history }))
    }

    /// Backpropagates per-step logit gradients; accumulates parameter
    /// gradients and returns the gradient on each encoder state.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &DecoderCache,
        d_logits: &Matrix,
    ) -> Result<Vec<Vec<f64>>> {
        let m = cache.steps.len();
        if d_logits.rows() != m || d_logits.cols() != self.cfg.vocab_size {
            return Err(Error::Shape {
                op: "Decoder::backward",
                expected: format!("{m}x{} logit gradients", self.cfg.vocab_size),
                got: format!("{}x{}", d_logits.rows(), d_logits.cols()),
            });
        }
        let hd = self.cfg.hidden_dim;
        let w_s = store.value("dec.w_s")?.clone();
        let w_out = store.value("dec.w_out")?.clone();

        let mut d_enc = vec![vec![0.0; self.enc_hidden]; self.att_x_keys_len(cache)?];
        let mut ds_next = vec![0.0; hd];
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];

        for t in (0..m).rev() {
            let step = &cache.steps[t];
            let dlog = d_logits.row(t);

            let (_, g_wout) = store.value_and_grad_mut("dec.w_out")?;
            g_wout.add_outer(dlog, &step.s);
            let g_bout = store.grad_mut("dec.b_out")?;
            for (k, d) in dlog.iter().enumerate() {
                let val = g_bout.get(k, 0) + d;
                g_bout.set(k, 0, val);
            }

            let mut ds = w_out.matvec_t(dlog);
            for (a, b) in ds.iter_mut().zip(&ds_next) {
                *a += b;
            }
            let ds_pre: Vec<f64> = ds
                .iter()
                .zip(&step.s)
                .map(|(d, s)| d * (1.0 - s * s))
                .collect();

            let (_, g_ws) = store.value_and_grad_mut("dec.w_s")?;
            g_ws.add_outer(&ds_pre, &step.ctx_cat);
            let g_bs = store.grad_mut("dec.b_s")?;
            for (k, d) in ds_pre.iter().enumerate() {
                let val = g_bs.get(k, 0) + d;
                g_bs.set(k, 0, val);
            }

            let d_ctx = w_s.matvec_t(&ds_pre);
            let (d_ctx_x, d_ctx_y) = d_ctx.split_at(self.enc_hidden);

            let (dq_x, dk_x) = self.att_x.backward(store, &step.att_x, d_ctx_x)?;
            for (acc, dk) in d_enc.iter_mut().zip(dk_x) {
                for (a, b) in acc.iter_mut().zip(dk) {
                    *a += b;
                }
            }
            let (dq_y, dk_y) = self.att_y.backward(store, &step.att_y, d_ctx_y)?;
            {
                let g_embed = store.grad_mut("dec.embed")?;
                for (j, dk) in dk_y.iter().enumerate() {
                    let row = cache.history[j];
                    let out = g_embed.row_mut(row);
                    for (a, b) in out.iter_mut().zip(dk) {
                        *a += b;
                    }
                }
            }

            let mut dh: Vec<f64> = dq_x.iter().zip(&dq_y).map(|(a, b)| a + b).collect();
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += b;
            }
            let (dx, dh_prev, dc_prev) = self.lstm.backward(store, &step.lstm, &dh, &dc_next)?;
            ds_next = dx[..hd].to_vec();
            dh_next = dh_prev;
            for (a, b) in dh_next.iter_mut().zip(&dx[hd..]) {
                *a += b;
            }
            dc_next = dc_prev;
        }
        Ok(d_enc)
    }

    fn att_x_keys_len(&self, cache: &DecoderCache) -> Result<usize> {
        cache
            .steps
            .first()
            .map(|s| s.att_x.keys_len())
            .ok_or(Error::EmptyInput("decoder cache without steps"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(v: usize, enc_hidden: usize, seed: u64) -> (Decoder, ParamStore) {
        let cfg = DecoderConfig {
            vocab_size: v,
            embed_dim: 3,
            hidden_dim: 4,
            attention_dim: 3,
        };
        let dec = Decoder::new(cfg, enc_hidden).unwrap();
        let mut store = ParamStore::new();
        dec.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        (dec, store)
    }

    fn random_states(rng: &mut ChaCha8Rng, m: usize, h: usize) -> Vec<Vec<f64>> {
        (0..m)
            .map(|_| (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn one_logit_row_per_encoder_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (dec, store) = setup(4, 5, 1);
        let states = random_states(&mut rng, 6, 5);
        let (logits, cache) = dec.forward(&store, &states).unwrap();
        assert_eq!(logits.shape(), (6, 4));
        assert_eq!(cache.frame_labels().len(), 6);
    }

    #[test]
    fn zero_parameters_give_uniform_logits() {
        let (dec, mut store) = setup(3, 2, 2);
        for name in dec.param_names() {
            let m = store.value_mut(&name).unwrap();
            m.fill(0.0);
        }
        let states = vec![vec![0.5, -0.5]; 4];
        let (logits, _) = dec.forward(&store, &states).unwrap();
        assert!(logits.iter().all(|v| v == 0.0));
    }

    #[test]
    fn empty_encoder_states_rejected() {
        let (dec, store) = setup(3, 2, 3);
        assert!(matches!(
            dec.forward(&store, &[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (dec, store) = setup(5, 4, 4);
        let states = random_states(&mut rng, 5, 4);
        let (a, _) = dec.forward(&store, &states).unwrap();
        let (b, _) = dec.forward(&store, &states).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (dec, mut store) = setup(3, 3, 5);
        let states = random_states(&mut rng, 3, 3);
        // Objective: sum of squared logits over all steps.
        let err = grad_check(&mut store, 1e-5, 10, &mut rng, |s| {
            let (logits, cache) = dec.forward(s, &states)?;
            let loss: f64 = logits.iter().map(|v| v * v).sum();
            let d = Matrix::from_fn(logits.rows(), logits.cols(), |i, j| 2.0 * logits.get(i, j));
            dec.backward(s, &cache, &d)?;
            Ok(loss)
        })
        .unwrap();
        assert!(err < 1e-4, "decoder grad check error {err}");
    }
}
