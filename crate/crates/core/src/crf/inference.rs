use crate::numerics::ops::log_sum_exp;
use crate::numerics::Tensor;

/// Potentials of one sequence: `unary[t][y]` and `transition[a][b]` for
/// moving from label `a` to label `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub unary: Tensor,
    pub transition: Tensor,
}

impl Scores {
    pub fn zeros(len: usize, num_labels: usize) -> Self {
        Self {
            unary: Tensor::zeros(&[len, num_labels]),
            transition: Tensor::zeros(&[num_labels, num_labels]),
        }
    }

    pub fn len(&self) -> usize {
        self.unary.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_labels(&self) -> usize {
        self.transition.rows()
    }

    pub fn path_score(&self, path: &[usize]) -> f64 {
        let mut s = 0.0;
        for (t, &y) in path.iter().enumerate() {
            s += self.unary.get(t, y);
            if t > 0 {
                s += self.transition.get(path[t - 1], y);
            }
        }
        s
    }
}

/// Log-space forward table: `alpha[t][y]` is the log-sum of all prefixes
/// ending in `y` at `t`.
fn forward(s: &Scores) -> Tensor {
    let (n, k) = (s.len(), s.num_labels());
    let mut alpha = Tensor::zeros(&[n, k]);
    if n == 0 {
        return alpha;
    }
    alpha.row_mut(0).copy_from_slice(s.unary.row(0));
    let mut buf = vec![0.0; k];
    for t in 1..n {
        for y in 0..k {
            for (a, b) in buf.iter_mut().enumerate() {
                *b = alpha.get(t - 1, a) + s.transition.get(a, y);
            }
            alpha.set(t, y, log_sum_exp(&buf) + s.unary.get(t, y));
        }
    }
    alpha
}

fn backward(s: &Scores) -> Tensor {
    let (n, k) = (s.len(), s.num_labels());
    let mut beta = Tensor::zeros(&[n, k]);
    let mut buf = vec![0.0; k];
    for t in (0..n.saturating_sub(1)).rev() {
        for y in 0..k {
            for (b, v) in buf.iter_mut().enumerate() {
                *v = s.transition.get(y, b) + s.unary.get(t + 1, b) + beta.get(t + 1, b);
            }
            beta.set(t, y, log_sum_exp(&buf));
        }
    }
    beta
}

/// Log of the sum of exp(path score) over all labelings; 0 for an empty
/// sequence.
pub fn log_partition(s: &Scores) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    log_sum_exp(forward(s).row(s.len() - 1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    pub log_partition: f64,
    /// `[T × Y]` position marginals.
    pub unary: Tensor,
    /// `pairwise[t]` is the `[Y × Y]` joint of positions `t` and `t + 1`.
    pub pairwise: Vec<Tensor>,
}

pub fn marginals(s: &Scores) -> Marginals {
    let (n, k) = (s.len(), s.num_labels());
    let alpha = forward(s);
    let beta = backward(s);
    let log_z = if n == 0 { 0.0 } else { log_sum_exp(alpha.row(n - 1)) };
    let mut unary = Tensor::zeros(&[n, k]);
    for t in 0..n {
        for y in 0..k {
            unary.set(t, y, (alpha.get(t, y) + beta.get(t, y) - log_z).exp());
        }
    }
    let mut pairwise = Vec::with_capacity(n.saturating_sub(1));
    for t in 0..n.saturating_sub(1) {
        let mut p = Tensor::zeros(&[k, k]);
        for a in 0..k {
            for b in 0..k {
                let v = alpha.get(t, a) + s.transition.get(a, b) + s.unary.get(t + 1, b) + beta.get(t + 1, b);
                p.set(a, b, (v - log_z).exp());
            }
        }
        pairwise.push(p);
    }
    Marginals {
        log_partition: log_z,
        unary,
        pairwise,
    }
}

/// Highest-scoring labeling. Among equal scores the lower label id wins at
/// the last position and at every backpointer.
pub fn viterbi(s: &Scores) -> Vec<usize> {
    let (n, k) = (s.len(), s.num_labels());
    if n == 0 {
        return Vec::new();
    }
    let mut delta = s.unary.row(0).to_vec();
    let mut back = vec![vec![0usize; k]; n];
    for (t, bt) in back.iter_mut().enumerate().skip(1) {
        let mut next = vec![0.0; k];
        for y in 0..k {
            let mut best = (f64::NEG_INFINITY, 0);
            for (a, d) in delta.iter().enumerate() {
                let v = d + s.transition.get(a, y);
                if v > best.0 {
                    best = (v, a);
                }
            }
            next[y] = best.0 + s.unary.get(t, y);
            bt[y] = best.1;
        }
        delta = next;
    }
    let mut y = crate::numerics::argmax(&delta);
    let mut path = vec![0; n];
    for t in (0..n).rev() {
        path[t] = y;
        y = back[t][y];
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scores_are_uniform() {
        let s = Scores::zeros(4, 3);
        assert!((log_partition(&s) - 4.0 * 3f64.ln()).abs() < 1e-12);
        let m = marginals(&s);
        assert!(m.unary.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(viterbi(&s), vec![0, 0, 0, 0]);
    }

    #[test]
    fn empty_sequence() {
        let s = Scores::zeros(0, 3);
        assert_eq!(log_partition(&s), 0.0);
        assert!(viterbi(&s).is_empty());
        assert!(marginals(&s).pairwise.is_empty());
    }

    #[test]
    fn transition_dominates_unary() {
        let mut s = Scores::zeros(3, 2);
        s.unary.set(0, 1, 1.0);
        s.transition.set(1, 0, 5.0);
        assert_eq!(viterbi(&s), vec![1, 0, 0]);
        assert!((s.path_score(&[1, 0, 0]) - 6.0).abs() < 1e-15);
    }
}
