use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::BiLstmParams;
use crate::math::{clip_factor, Matrix};

/// Character embeddings and the character BiLSTM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharParams {
    /// `num_chars x char_dim`
    pub embed: Matrix,
    pub bilstm: BiLstmParams,
}

/// Trainable word-embedding rows and the word BiLSTM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordParams {
    /// One row per trainable vocabulary word (see `Model::row_slot`).
    pub embed: Matrix,
    pub bilstm: BiLstmParams,
}

/// Task-specific emission projection and CRF transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputParams {
    /// `k x 2*word_hidden`
    pub proj_w: Matrix,
    /// `k x 1`
    pub proj_b: Matrix,
    /// `(k+2) x (k+2)`, start and end states last
    pub transitions: Matrix,
}

impl OutputParams {
    pub fn num_labels(&self) -> usize {
        self.proj_w.rows()
    }
}

/// Every trainable parameter, partitioned into character-level, word-level
/// and per-task output blocks. Shared blocks appear once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub theta_c: Vec<CharParams>,
    pub theta_w: Vec<WordParams>,
    pub theta_o: Vec<OutputParams>,
}

/// A matrix together with the parameter block that owns it.
#[derive(Debug)]
pub struct Named<M> {
    /// e.g. `theta_w[0].word_bilstm`
    pub block: String,
    /// e.g. `fwd.W_i`
    pub name: String,
    pub matrix: M,
}

fn named<M>(block: &str, name: impl Into<String>, matrix: M) -> Named<M> {
    Named {
        block: block.to_owned(),
        name: name.into(),
        matrix,
    }
}

impl ParamSet {
    /// All matrices in a fixed order: character blocks, word blocks, then
    /// output blocks.
    pub fn matrices(&self) -> Vec<Named<&Matrix>> {
        let mut out = Vec::new();
        for (i, c) in self.theta_c.iter().enumerate() {
            let b = format!("theta_c[{i}].char_embed");
            out.push(named(&b, "E", &c.embed));
            let b = format!("theta_c[{i}].char_bilstm");
            out.extend(c.bilstm.matrices().into_iter().map(|(n, m)| named(&b, n, m)));
        }
        for (i, w) in self.theta_w.iter().enumerate() {
            let b = format!("theta_w[{i}].word_embed");
            out.push(named(&b, "E", &w.embed));
            let b = format!("theta_w[{i}].word_bilstm");
            out.extend(w.bilstm.matrices().into_iter().map(|(n, m)| named(&b, n, m)));
        }
        for (i, o) in self.theta_o.iter().enumerate() {
            let b = format!("theta_o[{i}].projection");
            out.push(named(&b, "W", &o.proj_w));
            out.push(named(&b, "b", &o.proj_b));
            let b = format!("theta_o[{i}].transitions");
            out.push(named(&b, "A", &o.transitions));
        }
        out
    }

    /// Same order as [`ParamSet::matrices`].
    pub fn matrices_mut(&mut self) -> Vec<Named<&mut Matrix>> {
        let mut out = Vec::new();
        for (i, c) in self.theta_c.iter_mut().enumerate() {
            let b = format!("theta_c[{i}].char_embed");
            out.push(named(&b, "E", &mut c.embed));
            let b = format!("theta_c[{i}].char_bilstm");
            out.extend(c.bilstm.matrices_mut().into_iter().map(|(n, m)| named(&b, n, m)));
        }
        for (i, w) in self.theta_w.iter_mut().enumerate() {
            let b = format!("theta_w[{i}].word_embed");
            out.push(named(&b, "E", &mut w.embed));
            let b = format!("theta_w[{i}].word_bilstm");
            out.extend(w.bilstm.matrices_mut().into_iter().map(|(n, m)| named(&b, n, m)));
        }
        for (i, o) in self.theta_o.iter_mut().enumerate() {
            let b = format!("theta_o[{i}].projection");
            out.push(named(&b, "W", &mut o.proj_w));
            out.push(named(&b, "b", &mut o.proj_b));
            let b = format!("theta_o[{i}].transitions");
            out.push(named(&b, "A", &mut o.transitions));
        }
        out
    }

    /// Distinct block names in order.
    pub fn block_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in self.matrices() {
            if out.last() != Some(&m.block) {
                out.push(m.block);
            }
        }
        out
    }

    pub fn zeros_like(&self) -> ParamSet {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, v: f64) {
        for m in self.matrices_mut() {
            m.matrix.fill(v);
        }
    }

    pub fn num_params(&self) -> usize {
        self.matrices().iter().map(|m| m.matrix.len()).sum()
    }

    /// Scalar counts of (theta_c, theta_w, theta_o) summed over blocks.
    pub fn partition_counts(&self) -> (usize, usize, usize) {
        let (mut c, mut w, mut o) = (0, 0, 0);
        for m in self.matrices() {
            let n = m.matrix.len();
            if m.block.starts_with("theta_c") {
                c += n;
            } else if m.block.starts_with("theta_w") {
                w += n;
            } else {
                o += n;
            }
        }
        (c, w, o)
    }

    pub fn norm_sq(&self) -> f64 {
        self.matrices().iter().map(|m| m.matrix.norm_sq()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.matrix.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamSet) -> Result<()> {
        let theirs = other.matrices();
        let mut mine = self.matrices_mut();
        if mine.len() != theirs.len() {
            return Err(Error::LengthMismatch {
                expected: mine.len(),
                actual: theirs.len(),
            });
        }
        for (a, b) in mine.iter_mut().zip(&theirs) {
            a.matrix.axpy(alpha, b.matrix)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for m in self.matrices_mut() {
            m.matrix.scale(alpha);
        }
    }

    /// Plain SGD with the whole gradient clipped to L2 norm `clip_norm`.
    /// Returns the clip factor that was applied.
    pub fn sgd_update(&mut self, grads: &ParamSet, lr: f64, clip_norm: f64) -> Result<f64> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let factor = clip_factor(grads.norm_sq().sqrt(), clip_norm);
        self.axpy(-lr * factor, grads)?;
        Ok(factor)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for m in self.matrices() {
            out.extend_from_slice(m.matrix.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: flat.len(),
            });
        }
        let mut pos = 0;
        for m in self.raw_mut() {
            let len = m.len();
            m.as_mut_slice().copy_from_slice(&flat[pos..pos + len]);
            pos += len;
        }
        Ok(())
    }

    fn raw_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        fn lstm(b: &mut BiLstmParams) -> impl Iterator<Item = &mut Matrix> {
            [&mut b.forward, &mut b.backward]
                .into_iter()
                .flat_map(|d| d.w.iter_mut().chain(d.u.iter_mut()).chain(d.b.iter_mut()))
        }
        let c = self.theta_c.iter_mut().flat_map(|c| std::iter::once(&mut c.embed).chain(lstm(&mut c.bilstm)));
        let w = self.theta_w.iter_mut().flat_map(|w| std::iter::once(&mut w.embed).chain(lstm(&mut w.bilstm)));
        let o = self
            .theta_o
            .iter_mut()
            .flat_map(|o| [&mut o.proj_w, &mut o.proj_b, &mut o.transitions]);
        c.chain(w).chain(o)
    }

    /// Entry `i` of [`ParamSet::to_flat`], in place.
    pub fn coord_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for m in self.raw_mut() {
            if i < m.len() {
                return Some(&mut m.as_mut_slice()[i]);
            }
            i -= m.len();
        }
        None
    }

    /// `(block, start..end)` ranges of each block within [`ParamSet::to_flat`].
    pub fn block_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out: Vec<(String, std::ops::Range<usize>)> = Vec::new();
        let mut pos = 0;
        for m in self.matrices() {
            let len = m.matrix.len();
            match out.last_mut() {
                Some((b, r)) if *b == m.block => r.end += len,
                _ => out.push((m.block, pos..pos + len)),
            }
            pos += len;
        }
        out
    }
}
