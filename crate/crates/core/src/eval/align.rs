use serde::{Deserialize, Serialize};

/// One edit operation of an alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignOp {
    Match(String),
    Substitute { reference: String, hypothesis: String },
    Delete(String),
    Insert(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub ops: Vec<AlignOp>,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub matches: usize,
    pub ref_len: usize,
}

impl AlignmentResult {
    /// S + D + I.
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Errors over reference length. An empty reference counts as length one
    /// so that spurious output still scores as an error.
    pub fn rate(&self) -> f64 {
        self.errors() as f64 / self.ref_len.max(1) as f64
    }
}

/// Minimal unit-cost edit alignment of `hyp` against `reference`.
///
/// Among optimal alignments the backtrace prefers, at each cell,
/// match > substitute > delete > insert.
pub fn align<R: AsRef<str>, H: AsRef<str>>(reference: &[R], hyp: &[H]) -> AlignmentResult {
    let n = reference.len();
    let m = hyp.len();
    let width = m + 1;
    let mut d = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        d[i * width] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            let diag = d[(i - 1) * width + j - 1] + usize::from(!same);
            let up = d[(i - 1) * width + j] + 1;
            let left = d[i * width + j - 1] + 1;
            d[i * width + j] = diag.min(up).min(left);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut s, mut del, mut ins, mut mat) = (0, 0, 0, 0);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * width + j];
        if i > 0 && j > 0 {
            let r = reference[i - 1].as_ref();
            let h = hyp[j - 1].as_ref();
            let diag = d[(i - 1) * width + j - 1];
            if r == h && here == diag {
                ops.push(AlignOp::Match(r.to_owned()));
                mat += 1;
                i -= 1;
                j -= 1;
                continue;
            }
            if r != h && here == diag + 1 {
                ops.push(AlignOp::Substitute {
                    reference: r.to_owned(),
                    hypothesis: h.to_owned(),
                });
                s += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * width + j] + 1 {
            ops.push(AlignOp::Delete(reference[i - 1].as_ref().to_owned()));
            del += 1;
            i -= 1;
        } else {
            ops.push(AlignOp::Insert(hyp[j - 1].as_ref().to_owned()));
            ins += 1;
            j -= 1;
        }
    }
    ops.reverse();
    AlignmentResult {
        ops,
        substitutions: s,
        deletions: del,
        insertions: ins,
        matches: mat,
        ref_len: n,
    }
}
