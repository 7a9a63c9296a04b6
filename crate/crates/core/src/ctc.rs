//! Alignment-free sequence loss over per-frame label distributions.
//!
//! Targets are label sequences shorter than the frame sequence; the loss
//! marginalizes over every frame-level path that collapses to the target
//! (repeats merged, blanks removed). The forward-backward recursion runs in
//! the log domain and yields the exact gradient with respect to the logits.

use crate::error::{Error, Result};
use crate::numerics::{logsumexp, Matrix};

/// Index of the blank symbol in every per-frame distribution.
pub const BLANK: usize = 0;

/// Merges adjacent repeats, then removes blanks.
///
/// `[1,1,0,1]` becomes `[1,1]`: the repeat merges first, the blank then
/// separates the two remaining ones.
pub fn collapse(frames: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &f in frames {
        if Some(f) != prev && f != BLANK {
            out.push(f);
        }
        prev = Some(f);
    }
    out
}

/// Per-frame argmax followed by [`collapse`]. Ties resolve to the lowest
/// index so decoding is deterministic.
pub fn greedy_decode(logits: &Matrix) -> Vec<usize> {
    let mut frames = Vec::with_capacity(logits.rows());
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let mut best = 0usize;
        for (k, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = k;
            }
        }
        frames.push(best);
    }
    collapse(&frames)
}

/// Number of adjacent equal pairs in `target`; each one forces a blank frame
/// between the repeats, so feasibility requires `frames >= len + repeats`.
fn adjacent_repeats(target: &[usize]) -> usize {
    target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Loss `-log p(target | logits)` and its gradient with respect to the
/// logits.
///
/// `logits` is frames x (1 + vocabulary) with the blank at column 0; target
/// labels must lie in `1..cols`. An empty target is legal and scores the
/// all-blank path. Returns [`Error::InfeasibleAlignment`] when no frame path
/// can collapse to the target.
pub fn ctc_loss_and_grad(logits: &Matrix, target: &[usize]) -> Result<(f64, Matrix)> {
    let frames = logits.rows();
    let classes = logits.cols();
    if frames == 0 {
        return Err(Error::EmptyInput("loss over zero frames"));
    }
    if classes < 2 {
        return Err(Error::Shape {
            op: "ctc_loss_and_grad",
            expected: "at least blank plus one label".into(),
            got: format!("{classes} columns"),
        });
    }
    for &l in target {
        if l == BLANK || l >= classes {
            return Err(Error::InvalidArgument(format!(
                "target label {l} outside 1..{classes}"
            )));
        }
    }
    let repeats = adjacent_repeats(target);
    if frames < target.len() + repeats {
        return Err(Error::InfeasibleAlignment {
            target_len: target.len(),
            repeats,
            frames,
        });
    }

    // Log-softmax per frame.
    let mut lp = Matrix::zeros(frames, classes);
    for t in 0..frames {
        let row = logits.row(t);
        let z = logsumexp(row);
        let out = lp.row_mut(t);
        for (o, v) in out.iter_mut().zip(row) {
            *o = v - z;
        }
    }

    // Extended target: blanks interleaved around each label.
    let s_len = 2 * target.len() + 1;
    let ext = |s: usize| -> usize {
        if s.is_multiple_of(2) {
            BLANK
        } else {
            target[s / 2]
        }
    };
    // A skip s-2 -> s is allowed only onto a label that differs from the one
    // two positions back.
    let skip_ok = |s: usize| -> bool { s >= 2 && ext(s) != BLANK && ext(s) != ext(s - 2) };

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![vec![ninf; s_len]; frames];
    alpha[0][0] = lp.get(0, BLANK);
    if s_len > 1 {
        alpha[0][1] = lp.get(0, ext(1));
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = logsumexp(&[acc, alpha[t - 1][s - 1]]);
            }
            if skip_ok(s) {
                acc = logsumexp(&[acc, alpha[t - 1][s - 2]]);
            }
            alpha[t][s] = if acc == ninf {
                ninf
            } else {
                acc + lp.get(t, ext(s))
            };
        }
    }

    let log_z = if s_len > 1 {
        logsumexp(&[alpha[frames - 1][s_len - 1], alpha[frames - 1][s_len - 2]])
    } else {
        alpha[frames - 1][0]
    };
    if log_z == ninf {
        // Feasibility held, so this only happens when the model assigns an
        // exact zero along every valid path after underflow.
        return Err(Error::Divergence(
            "no probability mass on any valid alignment".into(),
        ));
    }

    // beta[t][s]: log-probability of finishing the path from state s after
    // frame t, excluding frame t's own emission.
    let mut beta = vec![vec![ninf; s_len]; frames];
    beta[frames - 1][s_len - 1] = 0.0;
    if s_len > 1 {
        beta[frames - 1][s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[t + 1][s] + lp.get(t + 1, ext(s));
            if s + 1 < s_len {
                acc = logsumexp(&[acc, beta[t + 1][s + 1] + lp.get(t + 1, ext(s + 1))]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                acc = logsumexp(&[acc, beta[t + 1][s + 2] + lp.get(t + 1, ext(s + 2))]);
            }
            beta[t][s] = acc;
        }
    }

    // Gradient: softmax minus the posterior label marginals.
    let mut grad = Matrix::zeros(frames, classes);
    for t in 0..frames {
        let mut marginal = vec![0.0f64; classes];
        for s in 0..s_len {
            let g = alpha[t][s] + beta[t][s] - log_z;
            if g > ninf {
                marginal[ext(s)] += g.exp();
            }
        }
        let out = grad.row_mut(t);
        for k in 0..classes {
            out[k] = lp.get(t, k).exp() - marginal[k];
        }
    }

    Ok((-log_z, grad))
}
