//! Motion and text encoders sharing one embedding space: masked spatial
//! attention over joints, temporal attention with optional sinusoidal
//! positions, and a causal text encoder with EOS-token pooling.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::params::{BoundParams, ParamStore};
use crate::skeleton::{attention_mask, Skeleton};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const STUDENT_PREFIX: &str = "text_student.";
pub const TEACHER_PREFIX: &str = "text_teacher.";
pub const MOTION_PREFIX: &str = "motion.";

/// Word-level vocabulary: reserved tokens then the corpus words in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Result<Vocab> {
        let mut words: Vec<String> = Vec::new();
        let mut any = false;
        for caption in captions {
            any = true;
            for w in caption.to_lowercase().split_whitespace() {
                words.push(w.to_string());
            }
        }
        if !any {
            return Err(Error::Config("vocabulary: empty corpus".into()));
        }
        words.sort();
        words.dedup();
        let mut tokens = vec![
            "<pad>".to_string(),
            "<unk>".to_string(),
            "<bos>".to_string(),
            "<eos>".to_string(),
        ];
        tokens.extend(words);
        Ok(Vocab::from_tokens(tokens))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Word ids without BOS/EOS framing; unknown words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.to_lowercase()
            .split_whitespace()
            .map(|w| self.index.get(w).copied().unwrap_or(UNK))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    /// Shared embedding dimension d.
    pub dim: usize,
    pub feat: usize,
    pub heads: usize,
    pub spatial_layers: usize,
    pub temporal_layers: usize,
    pub text_layers: usize,
    pub context: usize,
    pub positional_encoding: bool,
    pub cross_limb: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            feat: 64,
            heads: 4,
            spatial_layers: 1,
            temporal_layers: 1,
            text_layers: 1,
            context: 32,
            positional_encoding: true,
            cross_limb: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feat == 0 || self.heads == 0 || self.feat % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder: head count {} must divide feature width {}",
                self.heads, self.feat
            )));
        }
        if self.dim == 0 || self.context < 4 {
            return Err(Error::Config("encoder: dim must be positive, context >= 4".into()));
        }
        Ok(())
    }
}

fn init_attention_block(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, seed: u64) {
    let f = cfg.feat;
    let hd = f / cfg.heads;
    let w_std = (1.0 / f as f64).sqrt();
    // the value path carries token content into the pooled position; a
    // larger init keeps that signal from drowning in the residual stream
    let v_std = 8.0 * w_std;
    for h in 0..cfg.heads {
        store.insert_normal(&format!("{prefix}h{h}.wq"), vec![f, hd], 3.0 * w_std, seed);
        store.insert_normal(&format!("{prefix}h{h}.wk"), vec![f, hd], 3.0 * w_std, seed);
        store.insert_normal(&format!("{prefix}h{h}.wv"), vec![f, hd], v_std, seed);
    }
    store.insert_normal(&format!("{prefix}wo"), vec![f, f], v_std, seed);
    store.insert_normal(&format!("{prefix}mlp_w1"), vec![f, 2 * f], (2.0 / f as f64).sqrt(), seed);
    store.insert_zeros(&format!("{prefix}mlp_b1"), vec![1, 2 * f]);
    store.insert_normal(&format!("{prefix}mlp_w2"), vec![2 * f, f], (0.5 / f as f64).sqrt(), seed);
    store.insert_zeros(&format!("{prefix}mlp_b2"), vec![1, f]);
}

/// Create student text encoder parameters under `prefix`.
pub fn init_text_encoder(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, vocab_size: usize, seed: u64) {
    store.insert_normal(&format!("{prefix}tok_emb"), vec![vocab_size, cfg.feat], 0.1, seed);
    store.insert_normal(&format!("{prefix}pos_emb"), vec![cfg.context, cfg.feat], 0.1, seed);
    for l in 0..cfg.text_layers {
        init_attention_block(store, &format!("{prefix}l{l}."), cfg, seed);
    }
    store.insert_normal(
        &format!("{prefix}proj"),
        vec![cfg.feat, cfg.dim],
        (1.0 / cfg.feat as f64).sqrt(),
        seed,
    );
}

pub fn init_motion_encoder(store: &mut ParamStore, cfg: &EncoderConfig, skeleton: &Skeleton, seed: u64) {
    let p = MOTION_PREFIX;
    store.insert_normal(&format!("{p}coord_w"), vec![3, cfg.feat], 0.5, seed);
    store.insert_zeros(&format!("{p}coord_b"), vec![1, cfg.feat]);
    store.insert_normal(
        &format!("{p}joint_emb"),
        vec![skeleton.joint_count(), cfg.feat],
        0.1,
        seed,
    );
    for l in 0..cfg.spatial_layers {
        init_attention_block(store, &format!("{p}s{l}."), cfg, seed);
    }
    for l in 0..cfg.temporal_layers {
        init_attention_block(store, &format!("{p}t{l}."), cfg, seed);
    }
    store.insert_normal(
        &format!("{p}proj"),
        vec![cfg.feat, cfg.dim],
        (1.0 / cfg.feat as f64).sqrt(),
        seed,
    );
}

/// Deep-copy the student text encoder into the permanently frozen teacher.
pub fn clone_teacher(store: &mut ParamStore) {
    store.remove_prefix(TEACHER_PREFIX);
    store.clone_prefix(STUDENT_PREFIX, TEACHER_PREFIX);
}

/// Multi-head self attention; returns the mixed output and, for inspection,
/// the per-head post-softmax weight nodes.
fn mha(
    tape: &mut Tape,
    bound: &BoundParams,
    prefix: &str,
    cfg: &EncoderConfig,
    x: TensorId,
    mask: Option<&[bool]>,
    trace: &mut Vec<TensorId>,
) -> Result<TensorId> {
    let hd = cfg.feat / cfg.heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let q = tape.matmul(x, bound.id(&format!("{prefix}h{h}.wq")))?;
        let k = tape.matmul(x, bound.id(&format!("{prefix}h{h}.wk")))?;
        let v = tape.matmul(x, bound.id(&format!("{prefix}h{h}.wv")))?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale);
        let scores = match mask {
            Some(m) => tape.add_mask(scores, m)?,
            None => scores,
        };
        let weights = tape.softmax_rows(scores)?;
        trace.push(weights);
        heads.push(tape.matmul(weights, v)?);
    }
    let cat = tape.concat_cols(&heads)?;
    tape.matmul(cat, bound.id(&format!("{prefix}wo")))
}

/// Post-LN transformer block: attention and MLP sublayers with residuals.
fn block(
    tape: &mut Tape,
    bound: &BoundParams,
    prefix: &str,
    cfg: &EncoderConfig,
    x: TensorId,
    mask: Option<&[bool]>,
    trace: &mut Vec<TensorId>,
) -> Result<TensorId> {
    let a = mha(tape, bound, prefix, cfg, x, mask, trace)?;
    let x = tape.add(x, a)?;
    let x = tape.layer_norm_rows(x)?;
    let h = tape.matmul(x, bound.id(&format!("{prefix}mlp_w1")))?;
    let h = tape.add_row(h, bound.id(&format!("{prefix}mlp_b1")))?;
    let h = tape.relu(h);
    let h = tape.matmul(h, bound.id(&format!("{prefix}mlp_w2")))?;
    let h = tape.add_row(h, bound.id(&format!("{prefix}mlp_b2")))?;
    let x = tape.add(x, h)?;
    tape.layer_norm_rows(x)
}

/// BOS/EOS framing with truncation to the context length.
pub fn frame_tokens(tokens: &[usize], context: usize) -> Vec<usize> {
    let mut ids = Vec::with_capacity((tokens.len() + 2).min(context));
    ids.push(BOS);
    ids.extend_from_slice(tokens);
    ids.truncate(context - 1);
    ids.push(EOS);
    ids
}

/// Encode framed tokens and return (pre-normalization projection,
/// normalized embedding), both 1-by-d.
pub fn text_encode(
    tape: &mut Tape,
    bound: &BoundParams,
    prefix: &str,
    cfg: &EncoderConfig,
    tokens: &[usize],
) -> Result<(TensorId, TensorId)> {
    let ids = frame_tokens(tokens, cfg.context);
    let n = ids.len();
    let tok = tape.embedding(bound.id(&format!("{prefix}tok_emb")), &ids)?;
    let positions: Vec<usize> = (0..n).collect();
    let pos = tape.embedding(bound.id(&format!("{prefix}pos_emb")), &positions)?;
    let mut x = tape.add(tok, pos)?;
    let causal: Vec<bool> = (0..n * n).map(|i| i % n <= i / n).collect();
    let mut trace = Vec::new();
    for l in 0..cfg.text_layers {
        x = block(tape, bound, &format!("{prefix}l{l}."), cfg, x, Some(&causal), &mut trace)?;
    }
    let eos_row = tape.embedding(x, &[n - 1])?;
    let pre = tape.matmul(eos_row, bound.id(&format!("{prefix}proj")))?;
    let norm = tape.l2_normalize_rows(pre)?;
    Ok((pre, norm))
}

/// Motion encoder with attention-weight trace for mask-leak inspection.
pub fn motion_encode_traced(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &EncoderConfig,
    skeleton: &Skeleton,
    motion: &MotionSequence,
    trace: &mut Vec<TensorId>,
) -> Result<(TensorId, TensorId)> {
    let j = skeleton.joint_count();
    if motion.joints != j {
        return Err(Error::dimension(
            "motion joint count vs skeleton",
            &[motion.joints],
            &[j],
        ));
    }
    let p = MOTION_PREFIX;
    let mask = attention_mask(skeleton, cfg.cross_limb);
    let coord_w = bound.id(&format!("{p}coord_w"));
    let coord_b = bound.id(&format!("{p}coord_b"));
    let joint_emb = bound.id(&format!("{p}joint_emb"));
    let mut frames = Vec::with_capacity(motion.frames);
    for t in 0..motion.frames {
        let coords = tape.constant(
            vec![j, 3],
            motion.positions[t * j * 3..(t + 1) * j * 3].to_vec(),
        )?;
        let x = tape.matmul(coords, coord_w)?;
        let x = tape.add_row(x, coord_b)?;
        let mut x = tape.add(x, joint_emb)?;
        for l in 0..cfg.spatial_layers {
            x = block(tape, bound, &format!("{p}s{l}."), cfg, x, Some(&mask), trace)?;
        }
        frames.push(tape.mean_rows(x)?);
    }
    let mut seq = tape.concat_rows(&frames)?;
    if cfg.positional_encoding {
        let pe = sinusoidal_pe(motion.frames, cfg.feat);
        let pe = tape.constant(vec![motion.frames, cfg.feat], pe)?;
        seq = tape.add(seq, pe)?;
    }
    for l in 0..cfg.temporal_layers {
        seq = block(tape, bound, &format!("{p}t{l}."), cfg, seq, None, trace)?;
    }
    let pooled = tape.mean_rows(seq)?;
    let pre = tape.matmul(pooled, bound.id(&format!("{p}proj")))?;
    let norm = tape.l2_normalize_rows(pre)?;
    Ok((pre, norm))
}

pub fn motion_encode(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &EncoderConfig,
    skeleton: &Skeleton,
    motion: &MotionSequence,
) -> Result<(TensorId, TensorId)> {
    let mut trace = Vec::new();
    motion_encode_traced(tape, bound, cfg, skeleton, motion, &mut trace)
}

fn sinusoidal_pe(frames: usize, feat: usize) -> Vec<f64> {
    let mut pe = vec![0.0; frames * feat];
    for t in 0..frames {
        for i in 0..feat / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / feat as f64);
            pe[t * feat + 2 * i] = (t as f64 * rate).sin();
            pe[t * feat + 2 * i + 1] = (t as f64 * rate).cos();
        }
    }
    pe
}
