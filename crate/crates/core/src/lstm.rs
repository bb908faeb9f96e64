//! Vanilla LSTM and BiLSTM layers with hand-written backpropagation, and the
//! selection of per-word vectors from a sentence-level character BiLSTM.
//!
//! The cell is
//!
//! ```text
//! i = σ(W_i x + U_i h' + b_i)     f = σ(W_f x + U_f h' + b_f)
//! o = σ(W_o x + U_o h' + b_o)     g = tanh(W_g x + U_g h' + b_g)
//! c = f ⊙ c' + i ⊙ g              h = o ⊙ tanh(c)
//! ```
//!
//! with `h'`, `c'` the previous state, zero at the first step. There are no
//! peepholes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, xavier_init_with, Matrix};

pub const GATES: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Cell = 3,
}

impl Gate {
    pub fn name(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Output => "o",
            Gate::Cell => "g",
        }
    }
}

/// `w[gate]` is hidden x input, `u[gate]` hidden x hidden, `b[gate]` hidden x 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w: [Matrix; 4],
    pub u: [Matrix; 4],
    pub b: [Matrix; 4],
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w: std::array::from_fn(|_| Matrix::zeros(hidden, input)),
            u: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            b: std::array::from_fn(|_| Matrix::zeros(hidden, 1)),
        }
    }

    /// Xavier-uniform weights, zero biases (forget gate included).
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut p = LstmParams::zeros(input, hidden);
        for gate in GATES {
            p.w[gate as usize] = xavier_init_with(hidden, input, rng)?;
        }
        for gate in GATES {
            p.u[gate as usize] = xavier_init_with(hidden, hidden, rng)?;
        }
        Ok(p)
    }

    pub fn input_size(&self) -> usize {
        self.w[0].cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w[0].rows()
    }

    pub fn num_params(&self) -> usize {
        self.matrices().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn matrices(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::with_capacity(12);
        for (kind, mats) in [("W", &self.w), ("U", &self.u), ("b", &self.b)] {
            for gate in GATES {
                out.push((format!("{kind}_{}", gate.name()), &mats[gate as usize]));
            }
        }
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::with_capacity(12);
        for (kind, mats) in [("W", &mut self.w), ("U", &mut self.u), ("b", &mut self.b)] {
            for (gate, m) in GATES.iter().zip(mats.iter_mut()) {
                out.push((format!("{kind}_{}", gate.name()), m));
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let (hidden, input) = self.w[0].shape();
        for gate in GATES {
            let g = gate as usize;
            for (m, expected) in [
                (&self.w[g], (hidden, input)),
                (&self.u[g], (hidden, hidden)),
                (&self.b[g], (hidden, 1)),
            ] {
                if m.shape() != expected {
                    return Err(Error::ShapeMismatch {
                        expected,
                        actual: m.shape(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Activations of one time step, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LstmTape {
    pub steps: Vec<StepCache>,
}

impl LstmTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn expect_len(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// One LSTM step. The returned cache holds `h_t` and `c_t` along with every
/// gate activation.
pub fn lstm_cell_forward(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    params: &LstmParams,
) -> Result<StepCache> {
    params.validate()?;
    expect_len(x.len(), params.input_size())?;
    expect_len(h_prev.len(), params.hidden_size())?;
    expect_len(c_prev.len(), params.hidden_size())?;
    Ok(cell_forward(x, h_prev, c_prev, params))
}

fn cell_forward(x: &[f64], h_prev: &[f64], c_prev: &[f64], params: &LstmParams) -> StepCache {
    let hidden = params.hidden_size();
    let pre = |gate: Gate| {
        let g = gate as usize;
        let mut z = params.b[g].as_slice().to_vec();
        params.w[g].matvec_add(x, &mut z);
        params.u[g].matvec_add(h_prev, &mut z);
        z
    };
    let i: Vec<f64> = pre(Gate::Input).into_iter().map(sigmoid).collect();
    let f: Vec<f64> = pre(Gate::Forget).into_iter().map(sigmoid).collect();
    let o: Vec<f64> = pre(Gate::Output).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = pre(Gate::Cell).into_iter().map(f64::tanh).collect();
    let c: Vec<f64> = (0..hidden).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        o,
        g,
        c,
        tanh_c,
        h,
    }
}

/// Left-to-right pass from a zero initial state.
pub fn lstm_forward(params: &LstmParams, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, LstmTape)> {
    if xs.is_empty() {
        return Err(Error::EmptySequence);
    }
    params.validate()?;
    let hidden = params.hidden_size();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut tape = LstmTape {
        steps: Vec::with_capacity(xs.len()),
    };
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        expect_len(x.len(), params.input_size())?;
        let step = cell_forward(x, &h, &c, params);
        h.clone_from(&step.h);
        c.clone_from(&step.c);
        out.push(step.h.clone());
        tape.steps.push(step);
    }
    Ok((out, tape))
}

/// Forward outputs without a tape, for inference and loss evaluation.
/// Produces exactly the outputs of [`lstm_forward`].
pub fn lstm_outputs(params: &LstmParams, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    run_outputs(params, xs.iter())
}

fn run_outputs<'a>(params: &LstmParams, xs: impl ExactSizeIterator<Item = &'a Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    if xs.len() == 0 {
        return Err(Error::EmptySequence);
    }
    params.validate()?;
    let hidden = params.hidden_size();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut z = vec![0.0; 4 * hidden];
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        expect_len(x.len(), params.input_size())?;
        for (g, zg) in z.chunks_mut(hidden).enumerate() {
            zg.copy_from_slice(params.b[g].as_slice());
            params.w[g].matvec_add(x, zg);
            params.u[g].matvec_add(&h, zg);
        }
        for k in 0..hidden {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[hidden + k]);
            let o = sigmoid(z[2 * hidden + k]);
            let g = z[3 * hidden + k].tanh();
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
        out.push(h.clone());
    }
    Ok(out)
}

/// Backpropagation through time. `upstream[t]` is the loss gradient with
/// respect to `h_t`; parameter gradients are added into `grads` and the
/// gradients with respect to the inputs are returned.
pub fn lstm_backward_into(
    params: &LstmParams,
    tape: &LstmTape,
    upstream: &[Vec<f64>],
    grads: &mut LstmParams,
) -> Result<Vec<Vec<f64>>> {
    expect_len(upstream.len(), tape.len())?;
    let hidden = params.hidden_size();
    let input = params.input_size();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dxs = vec![vec![0.0; input]; tape.len()];
    let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);

    for (t, step) in tape.steps.iter().enumerate().rev() {
        expect_len(upstream[t].len(), hidden)?;
        for k in 0..hidden {
            let dh = upstream[t][k] + dh_next[k];
            let d_o = dh * step.tanh_c[k];
            let dc = dh * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]) + dc_next[k];
            let di = dc * step.g[k];
            let dg = dc * step.i[k];
            let df = dc * step.c_prev[k];
            dc_next[k] = dc * step.f[k];
            dz[Gate::Input as usize][k] = di * step.i[k] * (1.0 - step.i[k]);
            dz[Gate::Forget as usize][k] = df * step.f[k] * (1.0 - step.f[k]);
            dz[Gate::Output as usize][k] = d_o * step.o[k] * (1.0 - step.o[k]);
            dz[Gate::Cell as usize][k] = dg * (1.0 - step.g[k] * step.g[k]);
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        for gate in GATES {
            let g = gate as usize;
            grads.w[g].add_outer(&dz[g], &step.x);
            grads.u[g].add_outer(&dz[g], &step.h_prev);
            crate::math::axpy(1.0, &dz[g], grads.b[g].as_mut_slice());
            params.w[g].matvec_t_add(&dz[g], &mut dxs[t]);
            params.u[g].matvec_t_add(&dz[g], &mut dh_next);
        }
    }
    Ok(dxs)
}

/// Allocating form of [`lstm_backward_into`].
pub fn lstm_backward(
    params: &LstmParams,
    tape: &LstmTape,
    upstream: &[Vec<f64>],
) -> Result<(LstmParams, Vec<Vec<f64>>)> {
    let mut grads = LstmParams::zeros(params.input_size(), params.hidden_size());
    let dx = lstm_backward_into(params, tape, upstream, &mut grads)?;
    Ok((grads, dx))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiLstmParams {
            forward: LstmParams::zeros(input, hidden),
            backward: LstmParams::zeros(input, hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(BiLstmParams {
            forward: LstmParams::init(input, hidden, rng)?,
            backward: LstmParams::init(input, hidden, rng)?,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn input_size(&self) -> usize {
        self.forward.input_size()
    }

    pub fn output_size(&self) -> usize {
        2 * self.hidden_size()
    }

    pub fn num_params(&self) -> usize {
        self.forward.num_params() + self.backward.num_params()
    }

    pub fn matrices(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (dir, p) in [("fwd", &self.forward), ("bwd", &self.backward)] {
            out.extend(p.matrices().into_iter().map(|(n, m)| (format!("{dir}.{n}"), m)));
        }
        out
    }

    pub fn matrices_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        for (dir, p) in [("fwd", &mut self.forward), ("bwd", &mut self.backward)] {
            out.extend(
                p.matrices_mut()
                    .into_iter()
                    .map(|(n, m)| (format!("{dir}.{n}"), m)),
            );
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BiLstmTape {
    pub forward: LstmTape,
    pub backward: LstmTape,
}

/// Runs the forward LSTM over `xs` and the backward LSTM over `xs` reversed.
/// Row `t` of the output is `[forward h_t ‖ backward h_t]`, both aligned to
/// input position `t`.
pub fn bilstm_forward(
    params: &BiLstmParams,
    xs: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, BiLstmTape)> {
    let (fwd, fwd_tape) = lstm_forward(&params.forward, xs)?;
    let reversed: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let (mut bwd, bwd_tape) = lstm_forward(&params.backward, &reversed)?;
    bwd.reverse();
    let out = fwd
        .into_iter()
        .zip(bwd)
        .map(|(mut f, b)| {
            f.extend_from_slice(&b);
            f
        })
        .collect();
    Ok((
        out,
        BiLstmTape {
            forward: fwd_tape,
            backward: bwd_tape,
        },
    ))
}

/// Outputs of [`bilstm_forward`] without the tapes.
pub fn bilstm_outputs(params: &BiLstmParams, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let fwd = run_outputs(&params.forward, xs.iter())?;
    let mut bwd = run_outputs(&params.backward, xs.iter().rev())?;
    bwd.reverse();
    Ok(fwd
        .into_iter()
        .zip(bwd)
        .map(|(mut f, b)| {
            f.extend_from_slice(&b);
            f
        })
        .collect())
}

pub fn bilstm_backward_into(
    params: &BiLstmParams,
    tape: &BiLstmTape,
    upstream: &[Vec<f64>],
    grads: &mut BiLstmParams,
) -> Result<Vec<Vec<f64>>> {
    let hidden = params.hidden_size();
    expect_len(upstream.len(), tape.forward.len())?;
    let mut d_fwd = Vec::with_capacity(upstream.len());
    let mut d_bwd = Vec::with_capacity(upstream.len());
    for d in upstream {
        expect_len(d.len(), 2 * hidden)?;
        d_fwd.push(d[..hidden].to_vec());
        d_bwd.push(d[hidden..].to_vec());
    }
    d_bwd.reverse();
    let mut dx = lstm_backward_into(&params.forward, &tape.forward, &d_fwd, &mut grads.forward)?;
    let dx_rev = lstm_backward_into(&params.backward, &tape.backward, &d_bwd, &mut grads.backward)?;
    for (acc, d) in dx.iter_mut().zip(dx_rev.iter().rev()) {
        crate::math::axpy(1.0, d, acc);
    }
    Ok(dx)
}

/// A sentence's characters as one stream, with one space between words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharStream {
    pub ids: Vec<usize>,
    /// Inclusive `(first, last)` stream positions of each word.
    pub spans: Vec<(usize, usize)>,
}

pub fn build_char_stream<S, F>(tokens: &[S], space_id: usize, char_id: F) -> Result<CharStream>
where
    S: AsRef<str>,
    F: Fn(char) -> usize,
{
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut ids = Vec::new();
    let mut spans = Vec::with_capacity(tokens.len());
    for (w, tok) in tokens.iter().enumerate() {
        if w > 0 {
            ids.push(space_id);
        }
        let start = ids.len();
        ids.extend(tok.as_ref().chars().map(&char_id));
        if ids.len() == start {
            return Err(Error::EmptyInput("empty token"));
        }
        spans.push((start, ids.len() - 1));
    }
    Ok(CharStream { ids, spans })
}

/// Per-word vectors `[forward h at the word's last char ‖ backward h at its
/// first char]` taken from a character BiLSTM output of width `2 * hidden`.
pub fn char_word_representation(
    char_out: &[Vec<f64>],
    spans: &[(usize, usize)],
    hidden: usize,
) -> Result<Vec<Vec<f64>>> {
    spans
        .iter()
        .map(|&(a, b)| {
            if a > b || b >= char_out.len() {
                return Err(Error::OutOfRange {
                    index: b.max(a),
                    len: char_out.len(),
                });
            }
            let mut v = Vec::with_capacity(2 * hidden);
            v.extend_from_slice(&char_out[b][..hidden]);
            v.extend_from_slice(&char_out[a][hidden..2 * hidden]);
            Ok(v)
        })
        .collect()
}

/// Scatters per-word gradients back onto the character BiLSTM outputs.
pub fn char_word_representation_backward(
    d_words: &[Vec<f64>],
    spans: &[(usize, usize)],
    stream_len: usize,
    hidden: usize,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; 2 * hidden]; stream_len];
    for (d, &(a, b)) in d_words.iter().zip(spans) {
        crate::math::axpy(1.0, &d[..hidden], &mut out[b][..hidden]);
        crate::math::axpy(1.0, &d[hidden..], &mut out[a][hidden..]);
    }
    out
}
