//! Binary checkpoint layout:
//!
//! ```text
//! magic (8 bytes) | version u32 LE | header length u64 LE | JSON header
//! | tensor payload (f64 LE) | sha256 of everything before it (32 bytes)
//! ```
//!
//! Tensors are stored as raw little-endian f64 so a restored run continues
//! bit-for-bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use histosynth_nn::{Adam, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{MetricRecord, Sampler, Stage, StepCounts, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::nets::ArchDescriptor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HSYNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
}

impl AdamHeader {
    fn of(a: &Adam) -> Self {
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            steps: a.steps(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RngHeader {
    seed: String,
    stream: u64,
    /// u128 does not fit a JSON number.
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    dims: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    stage: Stage,
    cursor: usize,
    counts: StepCounts,
    task_queries: u64,
    history: Vec<MetricRecord>,
    rng: RngHeader,
    sampler: Sampler,
    adam: [AdamHeader; 3],
    /// Layer listing of G, D and R, for readers of the file.
    arch: [ArchDescriptor; 3],
    tensors: Vec<TensorSpec>,
}

/// Tensors in payload order: parameters of G, D, R, then first and second
/// moments of their optimizers.
fn tensor_list(state: &TrainState) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    let stores = [
        ("G", &state.refiner.params),
        ("D", &state.disc.params),
        ("R", &state.task.params),
    ];
    for (net, store) in stores {
        for (_, p) in store.iter() {
            out.push((format!("{net}/{}", p.name), &p.value));
        }
    }
    for (net, opt) in [
        ("G", &state.opt_g),
        ("D", &state.opt_d),
        ("R", &state.opt_r),
    ] {
        let (m, v) = opt.moments();
        for (i, t) in m.iter().enumerate() {
            out.push((format!("{net}/adam.m{i}"), t));
        }
        for (i, t) in v.iter().enumerate() {
            out.push((format!("{net}/adam.v{i}"), t));
        }
    }
    out
}

fn tensor_list_mut(state: &mut TrainState) -> Vec<&mut Tensor> {
    let mut out: Vec<&mut Tensor> = Vec::new();
    out.extend(state.refiner.params.values_mut());
    out.extend(state.disc.params.values_mut());
    out.extend(state.task.params.values_mut());
    for opt in [&mut state.opt_g, &mut state.opt_d, &mut state.opt_r] {
        let (m, v) = opt.moments_mut();
        out.extend(m.iter_mut());
        out.extend(v.iter_mut());
    }
    out
}

/// Write `state` to `path` atomically (temporary file, then rename).
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let tensors = tensor_list(state);
    let header = Header {
        config: state.config.clone(),
        stage: state.stage,
        cursor: state.cursor,
        counts: state.counts,
        task_queries: state.task_queries,
        history: state.history.clone(),
        rng: RngHeader {
            seed: hex::encode(state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        sampler: state.sampler.clone(),
        adam: [
            AdamHeader::of(&state.opt_g),
            AdamHeader::of(&state.opt_d),
            AdamHeader::of(&state.opt_r),
        ],
        arch: [
            state.refiner.arch.clone(),
            state.disc.arch.clone(),
            state.task.arch.clone(),
        ],
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorSpec {
                name: name.clone(),
                dims: t.dims(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(json.len() + 64);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 + 4 + 8 + 32 {
        return Err(corrupt("file is truncated"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let json = body
        .get(
            20..20usize
                .checked_add(hlen)
                .ok_or_else(|| corrupt("bad header length"))?,
        )
        .ok_or_else(|| corrupt("bad header length"))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| corrupt(format!("header: {e}")))?;
    let mut payload = &body[20 + hlen..];

    let mut state = TrainState::new(header.config)?;
    if header.arch
        != [
            state.refiner.arch.clone(),
            state.disc.arch.clone(),
            state.task.arch.clone(),
        ]
    {
        return Err(corrupt(
            "architecture does not match the model configuration",
        ));
    }
    let expected: Vec<(String, [usize; 4])> = tensor_list(&state)
        .into_iter()
        .map(|(n, t)| (n, t.dims()))
        .collect();
    if expected.len() != header.tensors.len()
        || expected
            .iter()
            .zip(&header.tensors)
            .any(|((n, d), spec)| *n != spec.name || *d != spec.dims)
    {
        return Err(corrupt(
            "tensor layout does not match the model configuration",
        ));
    }
    for t in tensor_list_mut(&mut state) {
        let n = t.len() * 8;
        if payload.len() < n {
            return Err(corrupt("tensor payload is truncated"));
        }
        for (dst, chunk) in t.data_mut().iter_mut().zip(payload[..n].chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        payload = &payload[n..];
    }
    if !payload.is_empty() {
        return Err(corrupt("trailing bytes after tensor payload"));
    }

    for (opt, h) in [&mut state.opt_g, &mut state.opt_d, &mut state.opt_r]
        .into_iter()
        .zip(&header.adam)
    {
        opt.lr = h.lr;
        opt.beta1 = h.beta1;
        opt.beta2 = h.beta2;
        opt.eps = h.eps;
        opt.set_steps(h.steps);
    }
    let seed: [u8; 32] = hex::decode(&header.rng.seed)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| corrupt("bad rng seed"))?;
    let word_pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|_| corrupt("bad rng position"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);
    state.rng = rng;
    state.sampler = header.sampler;
    state.stage = header.stage;
    state.cursor = header.cursor;
    state.counts = header.counts;
    state.task_queries = header.task_queries;
    state.history = header.history;
    Ok(state)
}
