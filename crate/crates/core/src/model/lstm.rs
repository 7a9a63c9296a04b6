//! A single LSTM cell with explicit forward caches and a hand-derived
//! backward pass.

use crate::error::Result;
use crate::numerics::{affine, uniform_init, Matrix, ParamStore};
use rand::Rng;

/// Hidden and cell vectors carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
}

/// One LSTM cell whose weights live in a [`ParamStore`] under
/// `{prefix}.w_x`, `{prefix}.w_h`, `{prefix}.b`. The stacked gate rows are
/// ordered input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, input_dim: usize, hidden_dim: usize) -> Self {
        LstmCell {
            prefix: prefix.into(),
            input_dim,
            hidden_dim,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Registers this cell's three parameter tensors with uniform fan-in
    /// initialization.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let (h4, d, h) = (4 * self.hidden_dim, self.input_dim, self.hidden_dim);
        let fan_in = d + h;
        store.insert(self.name("w_x"), uniform_init(h4, d, fan_in, rng))?;
        store.insert(self.name("w_h"), uniform_init(h4, h, fan_in, rng))?;
        store.insert(self.name("b"), Matrix::zeros(h4, 1))?;
        Ok(())
    }

    pub fn param_names(&self) -> [String; 3] {
        [self.name("w_x"), self.name("w_h"), self.name("b")]
    }

    pub fn step(
        &self,
        store: &ParamStore,
        x: &[f64],
        prev: &LstmState,
    ) -> Result<(LstmState, LstmCache)> {
        let h = self.hidden_dim;
        let w_x = store.value(&self.name("w_x"))?;
        let w_h = store.value(&self.name("w_h"))?;
        let b = store.value(&self.name("b"))?;

        let mut z = affine(x, w_x, b.data())?;
        for (zi, r) in z.iter_mut().zip(w_h.matvec(&prev.h)) {
            *zi += r;
        }

        let i: Vec<f64> = z[0..h].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = z[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
        let o: Vec<f64> = z[3 * h..4 * h].iter().map(|&v| sigmoid(v)).collect();

        let c: Vec<f64> = (0..h).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
        let h_out: Vec<f64> = (0..h).map(|k| o[k] * c[k].tanh()).collect();

        let cache = LstmCache {
            x: x.to_vec(),
            h_prev: prev.h.clone(),
            c_prev: prev.c.clone(),
            i,
            f,
            g,
            o,
            c: c.clone(),
        };
        Ok((LstmState { h: h_out, c }, cache))
    }

    /// Given gradients flowing into this step's `h` and `c`, accumulates
    /// parameter gradients and returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        cache: &LstmCache,
        dh: &[f64],
        dc_in: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let h = self.hidden_dim;
        let mut dz = vec![0.0; 4 * h];
        let mut dc_prev = vec![0.0; h];
        for k in 0..h {
            let tc = cache.c[k].tanh();
            let do_ = dh[k] * tc;
            let dc = dc_in[k] + dh[k] * cache.o[k] * (1.0 - tc * tc);
            let di = dc * cache.g[k];
            let df = dc * cache.c_prev[k];
            let dg = dc * cache.i[k];
            dc_prev[k] = dc * cache.f[k];
            dz[k] = di * cache.i[k] * (1.0 - cache.i[k]);
            dz[h + k] = df * cache.f[k] * (1.0 - cache.f[k]);
            dz[2 * h + k] = dg * (1.0 - cache.g[k] * cache.g[k]);
            dz[3 * h + k] = do_ * cache.o[k] * (1.0 - cache.o[k]);
        }

        let dx = store.value(&self.name("w_x"))?.matvec_t(&dz);
        let dh_prev = store.value(&self.name("w_h"))?.matvec_t(&dz);

        let (_, g_wx) = store.value_and_grad_mut(&self.name("w_x"))?;
        g_wx.add_outer(&dz, &cache.x);
        let (_, g_wh) = store.value_and_grad_mut(&self.name("w_h"))?;
        g_wh.add_outer(&dz, &cache.h_prev);
        let g_b = store.grad_mut(&self.name("b"))?;
        for (k, d) in dz.iter().enumerate() {
            let v = g_b.get(k, 0) + d;
            g_b.set(k, 0, v);
        }
        Ok((dx, dh_prev, dc_prev))
    }
}
