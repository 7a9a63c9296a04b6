//! Additive attention: score each key by a small tanh network of query and
//! key, softmax the scores, and blend the keys by the resulting weights.

use crate::error::{Error, Result};
use crate::numerics::{softmax, uniform_init, ParamStore};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct AttentionResult {
    pub context: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    query: Vec<f64>,
    keys: Vec<Vec<f64>>,
    /// tanh(W_q q + W_k k_j) per key.
    u: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl AttentionCache {
    pub(crate) fn keys_len(&self) -> usize {
        self.keys.len()
    }
}

/// Parameters live under `{prefix}.w_q` (A x Q), `{prefix}.w_k` (A x K) and
/// `{prefix}.v` (1 x A).
#[derive(Debug, Clone)]
pub struct Attention {
    prefix: String,
    pub query_dim: usize,
    pub key_dim: usize,
    pub attention_dim: usize,
}

impl Attention {
    pub fn new(
        prefix: impl Into<String>,
        query_dim: usize,
        key_dim: usize,
        attention_dim: usize,
    ) -> Self {
        Attention {
            prefix: prefix.into(),
            query_dim,
            key_dim,
            attention_dim,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let a = self.attention_dim;
        store.insert(
            self.name("w_q"),
            uniform_init(a, self.query_dim, self.query_dim, rng),
        )?;
        store.insert(
            self.name("w_k"),
            uniform_init(a, self.key_dim, self.key_dim, rng),
        )?;
        store.insert(self.name("v"), uniform_init(1, a, a, rng))?;
        Ok(())
    }

    pub fn param_names(&self) -> [String; 3] {
        [self.name("w_q"), self.name("w_k"), self.name("v")]
    }

    pub fn attend(
        &self,
        store: &ParamStore,
        query: &[f64],
        keys: &[Vec<f64>],
    ) -> Result<(AttentionResult, AttentionCache)> {
        if keys.is_empty() {
            return Err(Error::EmptyInput("attention over zero keys"));
        }
        let w_q = store.value(&self.name("w_q"))?;
        let w_k = store.value(&self.name("w_k"))?;
        let v = store.value(&self.name("v"))?;

        let q_proj = w_q.matvec(query);
        let mut u = Vec::with_capacity(keys.len());
        let mut scores = Vec::with_capacity(keys.len());
        for key in keys {
            let mut pre = w_k.matvec(key);
            for (p, qp) in pre.iter_mut().zip(&q_proj) {
                *p = (*p + qp).tanh();
            }
            scores.push(v.row(0).iter().zip(&pre).map(|(a, b)| a * b).sum());
            u.push(pre);
        }
        let weights = softmax(&scores)?;

        let mut context = vec![0.0; self.key_dim];
        for (w, key) in weights.iter().zip(keys) {
            for (c, k) in context.iter_mut().zip(key) {
                *c += w * k;
            }
        }
        Ok((
            AttentionResult {
                context,
                weights: weights.clone(),
            },
            AttentionCache {
                query: query.to_vec(),
                keys: keys.to_vec(),
                u,
                weights,
            },
        ))
    }

    /// Backpropagates a gradient on the context vector; accumulates parameter
    /// gradients and returns `(d_query, d_keys)`.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &AttentionCache,
        d_context: &[f64],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = cache.keys.len();
        // Through the blend: context = sum_j w_j k_j.
        let mut d_w: Vec<f64> = Vec::with_capacity(n);
        let mut d_keys: Vec<Vec<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            d_w.push(
                d_context
                    .iter()
                    .zip(&cache.keys[j])
                    .map(|(d, k)| d * k)
                    .sum(),
            );
            d_keys.push(d_context.iter().map(|d| d * cache.weights[j]).collect());
        }
        // Through the softmax.
        let dot: f64 = cache.weights.iter().zip(&d_w).map(|(w, d)| w * d).sum();
        let d_scores: Vec<f64> = cache
            .weights
            .iter()
            .zip(&d_w)
            .map(|(w, d)| w * (d - dot))
            .collect();

        let v = store.value(&self.name("v"))?.clone();
        let w_q = store.value(&self.name("w_q"))?.clone();
        let w_k = store.value(&self.name("w_k"))?.clone();

        let mut d_query = vec![0.0; self.query_dim];
        let mut g_v = vec![0.0; self.attention_dim];
        let mut d_pre_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for j in 0..n {
            let uj = &cache.u[j];
            let mut d_pre = vec![0.0; self.attention_dim];
            for a in 0..self.attention_dim {
                g_v[a] += d_scores[j] * uj[a];
                d_pre[a] = d_scores[j] * v.get(0, a) * (1.0 - uj[a] * uj[a]);
            }
            for (dq, dv) in d_query.iter_mut().zip(w_q.matvec_t(&d_pre)) {
                *dq += dv;
            }
            for (dk, dv) in d_keys[j].iter_mut().zip(w_k.matvec_t(&d_pre)) {
                *dk += dv;
            }
            d_pre_rows.push(d_pre);
        }

        let (_, g_wq) = store.value_and_grad_mut(&self.name("w_q"))?;
        for d_pre in &d_pre_rows {
            g_wq.add_outer(d_pre, &cache.query);
        }
        let (_, g_wk) = store.value_and_grad_mut(&self.name("w_k"))?;
        for (d_pre, key) in d_pre_rows.iter().zip(&cache.keys) {
            g_wk.add_outer(d_pre, key);
        }
        let g_v_slot = store.grad_mut(&self.name("v"))?;
        for (a, g) in g_v.iter().enumerate() {
            let val = g_v_slot.get(0, a) + g;
            g_v_slot.set(0, a, val);
        }
        Ok((d_query, d_keys))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn init_attention(seed: u64) -> (Attention, ParamStore) {
        let att = Attention::new("a", 3, 2, 4);
        let mut store = ParamStore::new();
        att.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        (att, store)
    }

    #[test]
    fn single_key_gets_all_weight() {
        let (att, store) = init_attention(1);
        let key = vec![0.7, -1.2];
        let (res, _) = att
            .attend(&store, &[0.1, 0.2, 0.3], std::slice::from_ref(&key))
            .unwrap();
        assert_eq!(res.weights, vec![1.0]);
        assert_eq!(res.context, key);
    }

    #[test]
    fn identical_keys_split_weight_uniformly() {
        let (att, store) = init_attention(2);
        let key = vec![0.5, 0.25];
        let keys = vec![key.clone(); 4];
        let (res, _) = att.attend(&store, &[1.0, -1.0, 0.5], &keys).unwrap();
        for w in &res.weights {
            assert!((w - 0.25).abs() < 1e-12);
        }
        for (c, k) in res.context.iter().zip(&key) {
            assert!((c - k).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (att, store) = init_attention(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..=7);
            let keys: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect();
            let query: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (res, _) = att.attend(&store, &query, &keys).unwrap();
            let sum: f64 = res.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(res.weights.iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn empty_keys_is_a_domain_error() {
        let (att, store) = init_attention(4);
        assert!(matches!(
            att.attend(&store, &[0.0, 0.0, 0.0], &[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn gradients_pass_finite_difference_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (att, mut store) = init_attention(7);
        let query: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let keys: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // Objective: weighted squared norm of the context vector.
        let err = grad_check(&mut store, 1e-5, 24, &mut rng, |s| {
            let (res, cache) = att.attend(s, &query, &keys)?;
            let loss: f64 = res.context.iter().map(|c| c * c).sum();
            let d_ctx: Vec<f64> = res.context.iter().map(|c| 2.0 * c).collect();
            att.backward(s, &cache, &d_ctx)?;
            Ok(loss)
        })
        .unwrap();
        assert!(err < 1e-4, "attention grad check error {err}");
    }
}
