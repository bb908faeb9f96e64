//! JSON checkpoints. Floats are written with round-trip precision, so a
//! loaded model reproduces the saved one bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "seqtag-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a> {
    format: &'a str,
    version: u32,
    model: &'a Model,
}

#[derive(Deserialize)]
struct OwnedEnvelope {
    format: String,
    version: u32,
    model: Model,
}

impl Model {
    pub fn write_checkpoint<W: Write>(&self, w: W) -> Result<()> {
        let env = Envelope {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            model: self,
        };
        serde_json::to_writer(w, &env).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Model> {
        let env: OwnedEnvelope = serde_json::from_reader(r).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if env.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("not a checkpoint (format '{}')", env.format)));
        }
        if env.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                env.version
            )));
        }
        env.model.validate()?;
        Ok(env.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Model::read_checkpoint(BufReader::new(file))
    }

    /// Structural consistency of a deserialized model.
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Checkpoint(msg));
        let m = self.num_tasks();
        let p = &self.params;
        let n_char = if self.mode().shares_char() { 1 } else { m };
        let n_word = if self.mode().shares_word() { 1 } else { m };
        if m == 0 || p.theta_c.len() != n_char || p.theta_w.len() != n_word || p.theta_o.len() != m {
            return bad("parameter blocks do not match mode and task count".into());
        }
        if self.row_slot.len() != self.vocab.num_words() || self.word_table.rows() != self.vocab.num_words() {
            return bad("embedding table does not match vocabulary".into());
        }
        let slots = self.row_slot.iter().flatten().count();
        if p.theta_w.iter().any(|w| w.embed.rows() != slots) {
            return bad("trainable embedding rows do not match slot map".into());
        }
        if p.theta_c.iter().any(|c| c.embed.rows() != self.vocab.num_chars()) {
            return bad("character embeddings do not match vocabulary".into());
        }
        for (t, o) in self.config.tasks.iter().zip(&p.theta_o) {
            let k = t.num_labels();
            if o.proj_w.rows() != k || o.transitions.rows() != k + 2 {
                return bad(format!("output block of task {} does not match its labels", t.name));
            }
        }
        Ok(())
    }
}
