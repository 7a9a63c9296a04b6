//! Dense matrices, stable reductions, a named parameter store with gradients,
//! plain SGD, and a central-difference gradient checker.
//!
//! Everything is 64-bit. Probability work that feeds the alignment loss stays
//! in the log domain via [`logsumexp`] so long frame sequences do not
//! underflow.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Serialization mirror of [`Matrix`]; validated on the way in.
#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::from_vec",
                expected: format!("{} values ({rows}x{cols})", rows * cols),
                got: format!("{} values", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "matrix entries must be finite, found {bad}"
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self · x` for a vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
        out
    }

    /// `selfᵀ · y` for a vector `y` of length `rows`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "matvec_t dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            if *yi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (o, a) in out.iter_mut().zip(row) {
                *o += yi * a;
            }
        }
        out
    }

    /// Rank-one update `self += y · xᵀ`, the shape of every weight gradient.
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        assert_eq!(y.len(), self.rows, "add_outer row mismatch");
        assert_eq!(x.len(), self.cols, "add_outer col mismatch");
        for (i, yi) in y.iter().enumerate() {
            if *yi == 0.0 {
                continue;
            }
            let row = self.row_mut(i);
            for (r, xj) in row.iter_mut().zip(x) {
                *r += yi * xj;
            }
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }
}

/// One named parameter: a value and a gradient of identical shape.
#[derive(Debug, Clone)]
pub struct Slot {
    pub value: Matrix,
    pub grad: Matrix,
}

/// Named parameter tensors with accumulated gradients.
///
/// Iteration order is the lexicographic slot-name order, which keeps updates,
/// serialization, and the gradient checker deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.slots.insert(name, Slot { value, grad });
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Matrix> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::NotFound(format!("parameter {name:?}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| Error::NotFound(format!("parameter {name:?}")))
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix> {
        self.slots
            .get(name)
            .map(|s| &s.grad)
            .ok_or_else(|| Error::NotFound(format!("parameter {name:?}")))
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.grad)
            .ok_or_else(|| Error::NotFound(format!("parameter {name:?}")))
    }

    /// Simultaneous read access to a value and write access to its gradient,
    /// the borrow every backward pass needs.
    pub fn value_and_grad_mut(&mut self, name: &str) -> Result<(&Matrix, &mut Matrix)> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::NotFound(format!("parameter {name:?}")))?;
        Ok((&slot.value, &mut slot.grad))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Slot)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad.fill(0.0);
        }
    }

    /// Euclidean norm over all gradients, used for clipping.
    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        for slot in self.slots.values() {
            for g in slot.grad.iter() {
                sq += g * g;
            }
        }
        sq.sqrt()
    }

    pub fn scale_grads(&mut self, s: f64) {
        for slot in self.slots.values_mut() {
            for g in slot.grad.data_mut() {
                *g *= s;
            }
        }
    }
}

/// One plain gradient-descent update: `value ← value − lr·grad` per slot, then
/// gradients are zeroed.
///
/// A non-finite gradient is reported as divergence instead of being written
/// into the parameters.
pub fn sgd_step(store: &mut ParamStore, lr: f64) -> Result<()> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    for (name, slot) in self_slots_mut(store) {
        if slot.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient in slot {name:?}"
            )));
        }
        for (v, g) in slot.value.data_mut().iter_mut().zip(slot.grad.data()) {
            *v -= lr * g;
        }
        slot.grad.fill(0.0);
    }
    Ok(())
}

fn self_slots_mut(store: &mut ParamStore) -> impl Iterator<Item = (&String, &mut Slot)> {
    store.slots.iter_mut()
}

/// Numerically stable softmax. Entries are positive and sum to one within
/// 1e-12 for any finite input, including large magnitudes.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("softmax of empty vector"));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in &mut out {
        *o /= sum;
    }
    Ok(out)
}

/// `log Σ exp(vᵢ)` with max-shift. `−∞` entries act as log-domain zeros; an
/// all-`−∞` (or empty) input yields `−∞`.
pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// `W·x + b` with shape validation.
pub fn affine(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.cols() {
        return Err(Error::Shape {
            op: "affine",
            expected: format!("input of length {}", w.cols()),
            got: format!("length {}", x.len()),
        });
    }
    if b.len() != w.rows() {
        return Err(Error::Shape {
            op: "affine",
            expected: format!("bias of length {}", w.rows()),
            got: format!("length {}", b.len()),
        });
    }
    let mut out = w.matvec(x);
    for (o, bi) in out.iter_mut().zip(b) {
        *o += bi;
    }
    Ok(out)
}

/// Uniform init in `[−s, s]` with `s = 1/√fan_in`.
pub fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-s..=s))
}

/// Checks an analytic gradient against central finite differences.
///
/// `f` evaluates the scalar objective and, as a side effect, accumulates its
/// analytic gradient into the store's grad slots. It must not modify the
/// values themselves. The checker samples up to `samples_per_slot`
/// coordinates per slot and returns the worst relative error
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(
    store: &mut ParamStore,
    eps: f64,
    samples_per_slot: usize,
    rng: &mut impl Rng,
    mut f: F,
) -> Result<f64>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "grad_check eps must lie in [1e-6, 1e-3], got {eps}"
        )));
    }
    store.zero_grads();
    f(store)?;
    let analytic: BTreeMap<String, Matrix> = store
        .iter()
        .map(|(name, slot)| (name.to_string(), slot.grad.clone()))
        .collect();

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    for name in &names {
        let n = {
            let m = store.value(name)?;
            m.rows() * m.cols()
        };
        let picks = if n <= samples_per_slot {
            (0..n).collect::<Vec<_>>()
        } else {
            rand::seq::index::sample(rng, n, samples_per_slot).into_vec()
        };
        for idx in picks {
            let orig = store.value(name)?.data()[idx];
            store.value_mut(name)?.data_mut()[idx] = orig + eps;
            let plus = f(store)?;
            store.value_mut(name)?.data_mut()[idx] = orig - eps;
            let minus = f(store)?;
            store.value_mut(name)?.data_mut()[idx] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let ana = analytic[name].data()[idx];
            let rel = (ana - numeric).abs() / 1.0_f64.max(ana.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }

    // Leave the analytic gradient in place rather than whatever the last
    // perturbed evaluation accumulated.
    for (name, grad) in analytic {
        *store.grad_mut(&name)? = grad;
    }
    Ok(worst)
}
