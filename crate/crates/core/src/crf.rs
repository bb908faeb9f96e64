//! Linear-chain CRF over emission scores `P` (n x k) and transition scores
//! `A` ((k+2) x (k+2)).
//!
//! Indices `k` and `k + 1` of `A` are the `<start>` and `<end>` labels. The
//! score of a labeling `y` is
//!
//! ```text
//! s(y) = A[start, y_0] + Σ_t A[y_{t-1}, y_t] + A[y_{n-1}, end] + Σ_t P[t, y_t]
//! ```
//!
//! Entries of `A` are unnormalized log-scores. `-inf` is accepted in `A` to
//! forbid a transition; `P` must be finite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logsumexp, logsumexp_unchecked, Matrix};

/// Upper bound on `k^n` for [`brute_force`].
pub const BRUTE_FORCE_LIMIT: usize = 1_000_000;

pub fn start_index(num_labels: usize) -> usize {
    num_labels
}

pub fn end_index(num_labels: usize) -> usize {
    num_labels + 1
}

fn validate(p: &Matrix, a: &Matrix) -> Result<usize> {
    let (n, k) = p.shape();
    if n == 0 || k == 0 {
        return Err(Error::ZeroDimension { rows: n, cols: k });
    }
    if a.shape() != (k + 2, k + 2) {
        return Err(Error::ShapeMismatch {
            expected: (k + 2, k + 2),
            actual: a.shape(),
        });
    }
    if !p.is_finite() {
        return Err(Error::NonFinite("emission scores".into()));
    }
    if a.as_slice().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("transition scores".into()));
    }
    Ok(k)
}

fn validate_labels(y: &[usize], n: usize, k: usize) -> Result<()> {
    if y.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { id: bad, labels: k });
    }
    Ok(())
}

fn score_unchecked(p: &Matrix, a: &Matrix, y: &[usize]) -> f64 {
    let k = p.cols();
    // same association order as the Viterbi recursion, so the best path
    // scores bit-identically under both
    let mut s = a.get(start_index(k), y[0]) + p.get(0, y[0]);
    for t in 1..y.len() {
        s = s + a.get(y[t - 1], y[t]) + p.get(t, y[t]);
    }
    s + a.get(y[y.len() - 1], end_index(k))
}

/// Unnormalized log-score of labeling `y`.
pub fn score(p: &Matrix, a: &Matrix, y: &[usize]) -> Result<f64> {
    let k = validate(p, a)?;
    validate_labels(y, p.rows(), k)?;
    Ok(score_unchecked(p, a, y))
}

/// Forward log-messages: `alpha[t][j]` is the log-sum of scores of all
/// prefixes ending in label `j` at position `t`, emissions included.
fn forward_messages(p: &Matrix, a: &Matrix) -> Vec<Vec<f64>> {
    let (n, k) = p.shape();
    let start = start_index(k);
    let mut alpha = Vec::with_capacity(n);
    alpha.push((0..k).map(|j| a.get(start, j) + p.get(0, j)).collect::<Vec<_>>());
    let mut buf = vec![0.0; k];
    for t in 1..n {
        let prev = &alpha[t - 1];
        let row = (0..k)
            .map(|j| {
                for i in 0..k {
                    buf[i] = prev[i] + a.get(i, j);
                }
                logsumexp_unchecked(&buf) + p.get(t, j)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// Backward log-messages: `beta[t][i]` is the log-sum over continuations
/// after position `t` given label `i` at `t`, end transition included.
fn backward_messages(p: &Matrix, a: &Matrix) -> Vec<Vec<f64>> {
    let (n, k) = p.shape();
    let end = end_index(k);
    let mut beta = vec![vec![0.0; k]; n];
    beta[n - 1] = (0..k).map(|i| a.get(i, end)).collect();
    let mut buf = vec![0.0; k];
    for t in (0..n - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                buf[j] = a.get(i, j) + p.get(t + 1, j) + beta[t + 1][j];
            }
            beta[t][i] = logsumexp_unchecked(&buf);
        }
    }
    beta
}

fn partition_from_alpha(alpha: &[Vec<f64>], a: &Matrix, k: usize) -> f64 {
    let end = end_index(k);
    let last = &alpha[alpha.len() - 1];
    let terms: Vec<f64> = (0..k).map(|j| last[j] + a.get(j, end)).collect();
    logsumexp_unchecked(&terms)
}

/// `log Σ_y exp(s(y))` over all `k^n` labelings, by the forward algorithm.
pub fn log_partition(p: &Matrix, a: &Matrix) -> Result<f64> {
    let k = validate(p, a)?;
    let alpha = forward_messages(p, a);
    Ok(partition_from_alpha(&alpha, a, k))
}

/// `log p(y | X) = s(y) - log Z`; never positive.
pub fn log_likelihood(p: &Matrix, a: &Matrix, y: &[usize]) -> Result<f64> {
    let s = score(p, a, y)?;
    Ok(s - log_partition(p, a)?)
}

/// Gradients of the log-likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrfGradients {
    pub log_likelihood: f64,
    /// n x k: `1{y_t = l} - P(y_t = l)`
    pub emissions: Matrix,
    /// (k+2) x (k+2): observed minus expected transition counts
    pub transitions: Matrix,
    /// n x k posterior label marginals
    pub marginals: Matrix,
}

/// Log-likelihood of `y` and its gradients with respect to `P` and `A`,
/// from forward-backward marginals.
pub fn crf_gradients(p: &Matrix, a: &Matrix, y: &[usize]) -> Result<CrfGradients> {
    let k = validate(p, a)?;
    let n = p.rows();
    validate_labels(y, n, k)?;
    let (start, end) = (start_index(k), end_index(k));

    let alpha = forward_messages(p, a);
    let beta = backward_messages(p, a);
    let log_z = partition_from_alpha(&alpha, a, k);
    let ll = score_unchecked(p, a, y) - log_z;

    let mut marginals = Matrix::zeros(n, k);
    for t in 0..n {
        for j in 0..k {
            marginals.set(t, j, (alpha[t][j] + beta[t][j] - log_z).exp());
        }
    }

    let mut emissions = Matrix::zeros(n, k);
    for t in 0..n {
        for j in 0..k {
            emissions.set(t, j, -marginals.get(t, j));
        }
        emissions.add_at(t, y[t], 1.0);
    }

    let mut transitions = Matrix::zeros(k + 2, k + 2);
    for j in 0..k {
        transitions.set(start, j, -marginals.get(0, j));
        transitions.set(j, end, -marginals.get(n - 1, j));
    }
    for t in 0..n - 1 {
        for i in 0..k {
            for j in 0..k {
                let lp = alpha[t][i] + a.get(i, j) + p.get(t + 1, j) + beta[t + 1][j] - log_z;
                transitions.add_at(i, j, -lp.exp());
            }
        }
    }
    transitions.add_at(start, y[0], 1.0);
    transitions.add_at(y[n - 1], end, 1.0);
    for t in 1..n {
        transitions.add_at(y[t - 1], y[t], 1.0);
    }

    Ok(CrfGradients {
        log_likelihood: ll,
        emissions,
        transitions,
        marginals,
    })
}

/// Highest-scoring labeling and its score. Ties go to the smaller label id
/// at every backtracking step.
pub fn viterbi(p: &Matrix, a: &Matrix) -> Result<(Vec<usize>, f64)> {
    let k = validate(p, a)?;
    let n = p.rows();
    let (start, end) = (start_index(k), end_index(k));

    let mut delta: Vec<f64> = (0..k).map(|j| a.get(start, j) + p.get(0, j)).collect();
    let mut back = vec![vec![0usize; k]; n];
    for t in 1..n {
        let mut next = vec![0.0; k];
        for j in 0..k {
            let mut best = 0;
            let mut best_val = delta[0] + a.get(0, j);
            for i in 1..k {
                let v = delta[i] + a.get(i, j);
                if v > best_val {
                    best = i;
                    best_val = v;
                }
            }
            back[t][j] = best;
            next[j] = best_val + p.get(t, j);
        }
        delta = next;
    }

    let mut last = 0;
    let mut best_score = delta[0] + a.get(0, end);
    for j in 1..k {
        let v = delta[j] + a.get(j, end);
        if v > best_score {
            last = j;
            best_score = v;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = last;
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok((path, best_score))
}

/// Exhaustive enumeration of all `k^n` labelings. Test oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct Enumeration {
    pub log_partition: f64,
    /// Lexicographically first labeling among those with the maximum score.
    pub best: Vec<usize>,
    pub best_score: f64,
}

pub fn brute_force(p: &Matrix, a: &Matrix) -> Result<Enumeration> {
    let k = validate(p, a)?;
    let n = p.rows();
    let total = (0..n).try_fold(1usize, |acc, _| acc.checked_mul(k));
    let total = match total {
        Some(t) if t <= BRUTE_FORCE_LIMIT => t,
        _ => return Err(Error::InstanceTooLarge { labels: k, len: n }),
    };

    let mut y = vec![0usize; n];
    let mut scores = Vec::with_capacity(total);
    let mut best = y.clone();
    let mut best_score = f64::NEG_INFINITY;
    for _ in 0..total {
        let s = score_unchecked(p, a, &y);
        if s > best_score {
            best_score = s;
            best.clone_from(&y);
        }
        scores.push(s);
        // odometer increment, last position fastest
        for pos in (0..n).rev() {
            y[pos] += 1;
            if y[pos] < k {
                break;
            }
            y[pos] = 0;
        }
    }
    Ok(Enumeration {
        log_partition: logsumexp(&scores)?,
        best,
        best_score,
    })
}

/// All `k^n` labelings in lexicographic order. Small instances only.
pub fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..k).map(move |l| {
                    let mut v = prefix.clone();
                    v.push(l);
                    v
                })
            })
            .collect();
    }
    out
}
