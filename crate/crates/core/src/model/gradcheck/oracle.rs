//! Independent forward pass of the weighted multi-task loss, generic over
//! the scalar type so it can run in double-double precision. It shares no
//! code with the model's forward pass beyond the parameter layout.

use std::ops::{Add, Div, Mul, Sub};

use super::dd::Dd;
use crate::data::LabeledSentence;
use crate::error::Result;
use crate::model::{Encoded, Model};

pub trait Real: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> {
    fn of(v: f64) -> Self;
    fn hi(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;

    fn sigmoid(self) -> Self {
        Self::of(1.0) / (Self::of(1.0) + (Self::of(0.0) - self).exp())
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn hi(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

impl Real for Dd {
    fn of(v: f64) -> Self {
        Dd::new(v)
    }
    fn hi(self) -> f64 {
        self.hi
    }
    fn exp(self) -> Self {
        Dd::exp(self)
    }
    fn ln(self) -> Self {
        Dd::ln(self)
    }
    fn tanh(self) -> Self {
        Dd::tanh(self)
    }
}

/// Matrices per char or word block: embedding, then 12 per LSTM direction.
const BLOCK_MATS: usize = 25;
const OUT_MATS: usize = 3;

/// Flat parameter vector viewed through the model's matrix layout.
struct View<'a, T> {
    flat: &'a [T],
    /// `(offset, cols)` per matrix.
    mats: Vec<(usize, usize)>,
}

impl<T: Real> View<'_, T> {
    fn at(&self, m: usize, r: usize, c: usize) -> T {
        let (off, cols) = self.mats[m];
        self.flat[off + r * cols + c]
    }

    fn row(&self, m: usize, r: usize) -> &[T] {
        let (off, cols) = self.mats[m];
        &self.flat[off + r * cols..off + (r + 1) * cols]
    }
}

/// One LSTM direction whose `W` matrices start at index `base`; gates in the
/// order input, forget, output, cell.
fn lstm<T: Real>(v: &View<T>, base: usize, hidden: usize, xs: &[Vec<T>]) -> Vec<Vec<T>> {
    let zero = T::of(0.0);
    let mut h = vec![zero; hidden];
    let mut c = vec![zero; hidden];
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let mut z = [vec![zero; hidden], vec![zero; hidden], vec![zero; hidden], vec![zero; hidden]];
        for (g, zg) in z.iter_mut().enumerate() {
            for (j, zj) in zg.iter_mut().enumerate() {
                let mut s = v.at(base + 8 + g, j, 0);
                for (q, &xq) in x.iter().enumerate() {
                    s = s + v.at(base + g, j, q) * xq;
                }
                for (q, &hq) in h.iter().enumerate() {
                    s = s + v.at(base + 4 + g, j, q) * hq;
                }
                *zj = s;
            }
        }
        for j in 0..hidden {
            let i = z[0][j].sigmoid();
            let f = z[1][j].sigmoid();
            let o = z[2][j].sigmoid();
            let g = z[3][j].tanh();
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out.push(h.clone());
    }
    out
}

fn bilstm<T: Real>(v: &View<T>, base: usize, hidden: usize, xs: &[Vec<T>]) -> Vec<Vec<T>> {
    let fwd = lstm(v, base, hidden, xs);
    let rev: Vec<Vec<T>> = xs.iter().rev().cloned().collect();
    let mut bwd = lstm(v, base + 12, hidden, &rev);
    bwd.reverse();
    fwd.into_iter()
        .zip(bwd)
        .map(|(mut f, b)| {
            f.extend(b);
            f
        })
        .collect()
}

fn logsumexp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(xs[0], |a, b| if b.hi() > a.hi() { b } else { a });
    let s = xs.iter().fold(T::of(0.0), |acc, &x| acc + (x - m).exp());
    m + s.ln()
}

fn sentence_nll<T: Real>(model: &Model, v: &View<T>, task: usize, enc: &Encoded, labels: &[usize]) -> T {
    let dims = model.dims();
    let nc = model.params.theta_c.len();
    let nw = model.params.theta_w.len();
    let cm = model.char_block(task) * BLOCK_MATS;
    let wm = (nc + model.word_block(task)) * BLOCK_MATS;
    let om = (nc + nw) * BLOCK_MATS + task * OUT_MATS;

    let char_in: Vec<Vec<T>> = enc.chars.ids.iter().map(|&c| v.row(cm, c).to_vec()).collect();
    let char_out = bilstm(v, cm + 1, dims.char_hidden, &char_in);
    let hc = dims.char_hidden;
    let word_in: Vec<Vec<T>> = enc
        .chars
        .spans
        .iter()
        .zip(&enc.words)
        .zip(&enc.features)
        .map(|((&(a, b), &w), feats)| {
            let mut x: Vec<T> = char_out[b][..hc].to_vec();
            x.extend_from_slice(&char_out[a][hc..]);
            match model.row_slot[w] {
                Some(slot) => x.extend_from_slice(v.row(wm, slot)),
                None => x.extend(model.word_table.row(w).iter().map(|&e| T::of(e))),
            }
            x.extend(feats.iter().map(|&f| T::of(f)));
            x
        })
        .collect();
    let word_out = bilstm(v, wm + 1, dims.word_hidden, &word_in);

    let k = model.params.theta_o[task].num_labels();
    let emit: Vec<Vec<T>> = word_out
        .iter()
        .map(|h| {
            (0..k)
                .map(|l| {
                    h.iter()
                        .enumerate()
                        .fold(v.at(om + 1, l, 0), |s, (j, &hj)| s + v.at(om, l, j) * hj)
                })
                .collect()
        })
        .collect();
    let trans = |i: usize, j: usize| v.at(om + 2, i, j);
    let (start, end) = (k, k + 1);

    let n = labels.len();
    let mut score = trans(start, labels[0]) + trans(labels[n - 1], end);
    for t in 0..n {
        score = score + emit[t][labels[t]];
        if t > 0 {
            score = score + trans(labels[t - 1], labels[t]);
        }
    }
    let mut alpha: Vec<T> = (0..k).map(|j| trans(start, j) + emit[0][j]).collect();
    for row in &emit[1..] {
        alpha = (0..k)
            .map(|j| {
                let terms: Vec<T> = (0..k).map(|i| alpha[i] + trans(i, j)).collect();
                logsumexp(&terms) + row[j]
            })
            .collect();
    }
    let last: Vec<T> = (0..k).map(|j| alpha[j] + trans(j, end)).collect();
    logsumexp(&last) - score
}

/// Encoded batch, ready for repeated evaluation.
pub struct Prepared {
    items: Vec<(usize, Encoded, Vec<usize>)>,
    lambdas: Vec<f64>,
    mats: Vec<(usize, usize)>,
}

impl Prepared {
    pub fn new(model: &Model, batch: &[(usize, &LabeledSentence)], lambdas: &[f64]) -> Result<Self> {
        let items = batch
            .iter()
            .map(|&(task, s)| Ok((task, model.encode(&s.tokens)?, model.encode_labels(task, &s.tags)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut mats = Vec::new();
        let mut off = 0;
        for m in model.params.matrices() {
            mats.push((off, m.matrix.cols()));
            off += m.matrix.len();
        }
        Ok(Prepared {
            items,
            lambdas: lambdas.to_vec(),
            mats,
        })
    }

    /// The same weighted loss through the model's own forward pass.
    pub fn model_loss(&self, model: &Model) -> Result<f64> {
        self.items
            .iter()
            .map(|(task, enc, labels)| Ok(self.lambdas[*task] * model.encoded_loss(*task, enc, labels)?))
            .sum()
    }

    /// `sum lambda * loss` at the flat parameters `theta`.
    pub fn loss<T: Real>(&self, model: &Model, theta: &[T]) -> T {
        let v = View {
            flat: theta,
            mats: self.mats.clone(),
        };
        self.items.iter().fold(T::of(0.0), |acc, (task, enc, labels)| {
            acc + T::of(self.lambdas[*task]) * sentence_nll(model, &v, *task, enc, labels)
        })
    }

    /// Central difference of coordinate `i` in double-double arithmetic.
    pub fn dd_partial(&self, model: &Model, theta: &[f64], i: usize, epsilon: f64) -> f64 {
        let mut x: Vec<Dd> = theta.iter().map(|&t| Dd::new(t)).collect();
        let e = Dd::new(epsilon);
        x[i] = Dd::new(theta[i]) + e;
        let plus = self.loss(model, &x);
        x[i] = Dd::new(theta[i]) - e;
        let minus = self.loss(model, &x);
        let d = (plus - minus) / (e + e);
        d.hi + d.lo
    }
}
