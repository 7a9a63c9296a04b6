//! Edit-distance alignment between reference and hypothesis label sequences,
//! and the micro-averaged error rate built from it.

use crate::error::{Error, Result};

/// Counts from a minimal-cost alignment of one or more sequence pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AlignmentCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl AlignmentCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Accumulates another pair's counts for corpus-level micro-averaging.
    pub fn absorb(&mut self, other: AlignmentCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }
}

/// Minimal-cost alignment with unit costs.
///
/// When several alignments share the minimal cost, the traceback prefers
/// substitution over insertion over deletion, making the returned counts
/// deterministic.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> AlignmentCounts {
    let n = reference.len();
    let m = hypothesis.len();
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = d[i][j - 1] + 1;
            let del = d[i - 1][j] + 1;
            d[i][j] = sub.min(ins).min(del);
        }
    }

    let mut counts = AlignmentCounts {
        ref_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let matched = reference[i - 1] == hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!matched) {
                if !matched {
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            counts.insertions += 1;
            j -= 1;
        } else {
            counts.deletions += 1;
            i -= 1;
        }
    }
    counts
}

/// `(S + D + I) / N` as a fraction. Rates above 1.0 are legal (an hypothesis
/// much longer than its reference); nothing is clamped.
pub fn error_rate(counts: AlignmentCounts) -> Result<f64> {
    if counts.ref_len == 0 {
        return Err(Error::UndefinedRate);
    }
    Ok(counts.errors() as f64 / counts.ref_len as f64)
}
