//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic    8 bytes   "BOOTSCKP"
//! version  u32       FORMAT_VERSION
//! count    u32       number of records
//! record   repeated `count` times:
//!   name_len u16, name (UTF-8)
//!   kind     u8      0 = f64 tensor, 1 = u64 vector, 2 = UTF-8 text
//!   kind 0:  rows u32, cols u32, rows·cols f64 (row-major)
//!   kind 1:  len u32, len u64
//!   kind 2:  len u32, len bytes
//! ```
//!
//! Records written, in order: `config` (text, the `key = value` form),
//! `layer.{i}.weight` (out×in), `layer.{i}.bias` (1×out), `prototypes`
//! (K×D), `log_tau_a`, `log_tau_c`, `tau_cap` (1×1), `model.version` (u64),
//! `optimizer.hyper` (1×3: base_lr, momentum, weight_decay),
//! `optimizer.restart_period` (u64), `optimizer.buffer.{j}` (1×len, one per
//! parameter tensor in layer order, then prototypes, then the two
//! log-temperatures), `epoch` (u64), `rng.seed` (4×u64), `rng.stream` (u64),
//! `rng.word_pos` (2×u64, low word first), `feature_std` (1×d_in) and
//! `history` (text, one epoch record per line). Readers look records up by
//! name, so unknown records are skipped.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_config, to_text};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::network::{Linear, ModelState, OptimizerState};
use crate::trainer::{EpochRecord, TrainHistory, Trainer};

pub const MAGIC: &[u8; 8] = b"BOOTSCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
enum Record {
    Tensor(DenseMatrix),
    Words(Vec<u64>),
    Text(String),
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Writer {
    buf: Vec<u8>,
    count: u32,
}

impl Writer {
    fn new() -> Self {
        let mut buf = MAGIC.to_vec();
        buf.extend(FORMAT_VERSION.to_le_bytes());
        buf.extend(0u32.to_le_bytes());
        Self { buf, count: 0 }
    }

    fn header(&mut self, name: &str, kind: u8) {
        self.buf.extend((name.len() as u16).to_le_bytes());
        self.buf.extend(name.as_bytes());
        self.buf.push(kind);
        self.count += 1;
    }

    fn tensor(&mut self, name: &str, m: &DenseMatrix) {
        self.header(name, 0);
        self.buf.extend((m.rows() as u32).to_le_bytes());
        self.buf.extend((m.cols() as u32).to_le_bytes());
        for v in m.as_slice() {
            self.buf.extend(v.to_le_bytes());
        }
    }

    fn row(&mut self, name: &str, v: &[f64]) {
        self.tensor(
            name,
            &DenseMatrix::from_vec(1, v.len(), v.to_vec()).expect("finite state"),
        );
    }

    fn words(&mut self, name: &str, w: &[u64]) {
        self.header(name, 1);
        self.buf.extend((w.len() as u32).to_le_bytes());
        for v in w {
            self.buf.extend(v.to_le_bytes());
        }
    }

    fn text(&mut self, name: &str, s: &str) {
        self.header(name, 2);
        self.buf.extend((s.len() as u32).to_le_bytes());
        self.buf.extend(s.as_bytes());
    }

    fn finish(mut self) -> Vec<u8> {
        self.buf[12..16].copy_from_slice(&self.count.to_le_bytes());
        self.buf
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> Result<HashMap<String, Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let count = r.u32()?;
    let mut out = HashMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| bad("record name is not UTF-8"))?
            .to_string();
        let kind = r.take(1)?[0];
        let rec = match kind {
            0 => {
                let rows = r.u32()? as usize;
                let cols = r.u32()? as usize;
                let n = rows
                    .checked_mul(cols)
                    .ok_or_else(|| bad("tensor too large"))?;
                let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("tensor too large"))?)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Record::Tensor(
                    DenseMatrix::from_vec(rows, cols, data)
                        .map_err(|e| bad(format!("{name}: {e}")))?,
                )
            }
            1 => {
                let n = r.u32()? as usize;
                Record::Words((0..n).map(|_| r.u64()).collect::<Result<_>>()?)
            }
            2 => {
                let n = r.u32()? as usize;
                let s = std::str::from_utf8(r.take(n)?)
                    .map_err(|_| bad(format!("{name}: text is not UTF-8")))?;
                Record::Text(s.to_string())
            }
            k => return Err(bad(format!("{name}: unknown record kind {k}"))),
        };
        out.insert(name, rec);
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes after last record"));
    }
    Ok(out)
}

struct Records(HashMap<String, Record>);

impl Records {
    fn tensor(&self, name: &str) -> Result<&DenseMatrix> {
        match self.0.get(name) {
            Some(Record::Tensor(m)) => Ok(m),
            Some(_) => Err(bad(format!("{name}: expected a tensor"))),
            None => Err(bad(format!("missing record {name}"))),
        }
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        let m = self.tensor(name)?;
        if m.shape() != (1, 1) {
            return Err(bad(format!("{name}: expected 1×1, found {:?}", m.shape())));
        }
        Ok(m[(0, 0)])
    }

    fn row(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.tensor(name)?;
        if m.rows() != 1 {
            return Err(bad(format!("{name}: expected a single row")));
        }
        Ok(m.as_slice().to_vec())
    }

    fn words(&self, name: &str, len: usize) -> Result<&[u64]> {
        match self.0.get(name) {
            Some(Record::Words(w)) if w.len() == len => Ok(w),
            Some(_) => Err(bad(format!("{name}: expected {len} u64 words"))),
            None => Err(bad(format!("missing record {name}"))),
        }
    }

    fn text(&self, name: &str) -> Result<&str> {
        match self.0.get(name) {
            Some(Record::Text(s)) => Ok(s),
            Some(_) => Err(bad(format!("{name}: expected text"))),
            None => Err(bad(format!("missing record {name}"))),
        }
    }
}

/// Serializes the full training state.
pub fn encode(trainer: &Trainer) -> Vec<u8> {
    let mut w = Writer::new();
    w.text("config", &to_text(&trainer.config));
    let model = &trainer.model;
    for (i, layer) in model.layers.iter().enumerate() {
        w.tensor(&format!("layer.{i}.weight"), &layer.weight);
        w.row(&format!("layer.{i}.bias"), &layer.bias);
    }
    w.tensor("prototypes", &model.prototypes);
    w.row("log_tau_a", &[model.log_tau_a]);
    w.row("log_tau_c", &[model.log_tau_c]);
    w.row("tau_cap", &[model.tau_cap]);
    w.words("model.version", &[model.version]);
    let opt = &trainer.optimizer;
    w.row(
        "optimizer.hyper",
        &[opt.base_lr, opt.momentum, opt.weight_decay],
    );
    w.words("optimizer.restart_period", &[opt.restart_period as u64]);
    for (j, buf) in opt.momentum_buffers.iter().enumerate() {
        w.row(&format!("optimizer.buffer.{j}"), buf);
    }
    w.words("epoch", &[trainer.epoch as u64]);
    let seed = trainer.rng.get_seed();
    let seed_words: Vec<u64> = seed
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    w.words("rng.seed", &seed_words);
    w.words("rng.stream", &[trainer.rng.get_stream()]);
    let pos = trainer.rng.get_word_pos();
    w.words("rng.word_pos", &[pos as u64, (pos >> 64) as u64]);
    w.row("feature_std", &trainer.feature_std);
    w.text("history", &trainer.history.to_text());
    w.finish()
}

/// Restores a [`Trainer`] from [`encode`] output.
pub fn decode_trainer(bytes: &[u8]) -> Result<Trainer> {
    let rec = Records(decode(bytes)?);
    let config = parse_config(rec.text("config")?)?;
    let depth = config.hidden.len() + 1;
    let mut layers = Vec::with_capacity(depth);
    for i in 0..depth {
        let weight = rec.tensor(&format!("layer.{i}.weight"))?.clone();
        let bias = rec.row(&format!("layer.{i}.bias"))?;
        if bias.len() != weight.rows() {
            return Err(bad(format!(
                "layer.{i}: bias length {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        if i > 0
            && layers
                .last()
                .is_some_and(|l: &Linear| l.out_dim() != weight.cols())
        {
            return Err(bad(format!(
                "layer.{i}: input width does not match previous layer"
            )));
        }
        layers.push(Linear { weight, bias });
    }
    let prototypes = rec.tensor("prototypes")?.clone();
    if prototypes.cols() != layers[depth - 1].out_dim() {
        return Err(bad("prototype width does not match the embedding width"));
    }
    let model = ModelState {
        layers,
        prototypes,
        log_tau_a: rec.scalar("log_tau_a")?,
        log_tau_c: rec.scalar("log_tau_c")?,
        tau_cap: rec.scalar("tau_cap")?,
        version: rec.words("model.version", 1)?[0],
    };

    let hyper = rec.row("optimizer.hyper")?;
    if hyper.len() != 3 {
        return Err(bad("optimizer.hyper must have 3 entries"));
    }
    let mut optimizer = OptimizerState::new(
        &model,
        hyper[0],
        hyper[1],
        hyper[2],
        rec.words("optimizer.restart_period", 1)?[0] as usize,
    )
    .map_err(|e| bad(e.to_string()))?;
    for (j, buf) in optimizer.momentum_buffers.iter_mut().enumerate() {
        let stored = rec.row(&format!("optimizer.buffer.{j}"))?;
        if stored.len() != buf.len() {
            return Err(bad(format!(
                "optimizer.buffer.{j}: length {} expected {}",
                stored.len(),
                buf.len()
            )));
        }
        *buf = stored;
    }

    let seed_words = rec.words("rng.seed", 4)?;
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(seed_words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(rec.words("rng.stream", 1)?[0]);
    let pos = rec.words("rng.word_pos", 2)?;
    rng.set_word_pos(pos[0] as u128 | (pos[1] as u128) << 64);

    let history = TrainHistory {
        records: rec
            .text("history")?
            .lines()
            .map(EpochRecord::from_line)
            .collect::<Result<_>>()
            .map_err(|e| bad(format!("history: {e}")))?,
    };
    let feature_std = rec.row("feature_std")?;
    if feature_std.len() != model.input_dim() {
        return Err(bad("feature_std length does not match the input width"));
    }
    Ok(Trainer {
        config,
        model,
        optimizer,
        rng,
        epoch: rec.words("epoch", 1)?[0] as usize,
        history,
        feature_std,
    })
}

pub fn save(trainer: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, encode(trainer)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode_trainer(&bytes)
}
