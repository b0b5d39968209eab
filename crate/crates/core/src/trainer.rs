//! Two-phase fine-tuning loop: the student text encoder is frozen while the
//! motion encoder aligns to the teacher's embedding space, then both are
//! fine-tuned jointly. Includes the AdamW optimizer, global-norm gradient
//! clipping, and binary checkpoint persistence.

use crate::autodiff::Tape;
use crate::dataset::{MotionTextPair, Split};
use crate::encoder::{
    clone_teacher, init_motion_encoder, init_text_encoder, motion_encode, text_encode,
    EncoderConfig, Vocab, MOTION_PREFIX, STUDENT_PREFIX, TEACHER_PREFIX,
};
use crate::error::{Error, Result};
use crate::loss::{
    alignment_loss, contrastive_loss, distill_loss, total_loss, LossBreakdown, LossWeights,
    INIT_LOG_SCALE, MAX_SCALE,
};
use crate::motion::mix;
use crate::params::{bind_params, collect_grads, ParamStore};
use crate::skeleton::Skeleton;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const LOG_SCALE_PARAM: &str = "head.log_scale";
pub const DENSE_W_PARAM: &str = "head.w";
const CHECKPOINT_MAGIC: &[u8; 4] = b"MOCL";
const CHECKPOINT_VERSION: u32 = 1;
const EPOCH_SHUFFLE_TAG: u64 = 0x455048_53485546;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub freeze_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub lambda_distill: f64,
    pub seed: u64,
    pub positional_encoding: bool,
    pub cross_limb: bool,
    pub dense_w: bool,
    /// Contrastive-only baseline: drops the distill and alignment terms and
    /// the architectural toggles.
    pub naive_mode: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_epochs: 10,
            freeze_epochs: 7,
            batch_size: 32,
            lr: 2.5e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
            lambda_distill: 1.0,
            seed: 0,
            positional_encoding: true,
            cross_limb: true,
            dense_w: false,
            naive_mode: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.freeze_epochs > self.total_epochs {
            return Err(Error::Config(format!(
                "freeze_epochs ({}) exceeds total_epochs ({})",
                self.freeze_epochs, self.total_epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 for a contrastive signal".into(),
            ));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("eps", self.eps),
            ("grad_clip", self.grad_clip),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        LossWeights {
            lambda_distill: self.lambda_distill,
        }
        .validate()
    }
}

/// Loss summary for one epoch. The distill and alignment terms are omitted
/// in naive (contrastive-only) runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: u8,
    pub contrastive: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distill: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Learning-rate multiplier for the logit log-scale. Adam steps are capped
/// near lr per update, far too slow for a lone scalar that must travel
/// roughly 2 units within a short schedule.
pub const LOG_SCALE_LR_MULT: f64 = 30.0;

impl From<&TrainConfig> for AdamWConfig {
    fn from(cfg: &TrainConfig) -> Self {
        AdamWConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }
}

/// One bias-corrected AdamW update with decoupled weight decay. `t` is the
/// 1-based global step count.
pub fn optimizer_step(
    store: &mut ParamStore,
    grads: &[(String, Vec<f64>)],
    t: u64,
    cfg: &AdamWConfig,
) -> Result<()> {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (name, g) in grads {
        let lr = if name == LOG_SCALE_PARAM {
            cfg.lr * LOG_SCALE_LR_MULT
        } else {
            cfg.lr
        };
        let param = store.get_mut(name)?;
        if g.len() != param.tensor.numel() {
            return Err(Error::dimension(
                "optimizer gradient",
                &param.tensor.shape,
                &[g.len()],
            ));
        }
        for i in 0..g.len() {
            param.m[i] = cfg.beta1 * param.m[i] + (1.0 - cfg.beta1) * g[i];
            param.v[i] = cfg.beta2 * param.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = param.m[i] / bc1;
            let v_hat = param.v[i] / bc2;
            let p = &mut param.tensor.values[i];
            *p -= lr * cfg.weight_decay * *p;
            *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Scale all gradients so the global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [(String, Vec<f64>)], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|(_, g)| g.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Training state: parameter store, vocabulary, architecture, and progress
/// counters. All randomness is derived from `(config.seed, epoch)`, so this
/// is everything needed to resume.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub store: ParamStore,
    pub vocab: Vocab,
    pub encoder: EncoderConfig,
    pub skeleton: Skeleton,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
}

impl Trainer {
    /// Build a fresh trainer: vocabulary from the training captions, student
    /// and motion encoders initialized from the seed, teacher cloned from
    /// the student, contrastive head appended.
    pub fn new(
        config: TrainConfig,
        mut encoder: EncoderConfig,
        skeleton: Skeleton,
        pairs: &[MotionTextPair],
    ) -> Result<Trainer> {
        config.validate()?;
        encoder.positional_encoding = config.positional_encoding && !config.naive_mode;
        encoder.cross_limb = config.cross_limb && !config.naive_mode;
        encoder.validate()?;
        skeleton.validate()?;
        let train_texts: Vec<&str> = pairs
            .iter()
            .filter(|p| p.split == Split::Train)
            .map(|p| p.text.as_str())
            .collect();
        if train_texts.len() < config.batch_size {
            return Err(Error::Config(format!(
                "train split has {} samples, below one batch of {}",
                train_texts.len(),
                config.batch_size
            )));
        }
        let vocab = Vocab::build(train_texts)?;
        let mut store = ParamStore::new();
        init_text_encoder(&mut store, STUDENT_PREFIX, &encoder, vocab.len(), config.seed);
        init_motion_encoder(&mut store, &encoder, &skeleton, config.seed);
        clone_teacher(&mut store);
        store.insert(
            LOG_SCALE_PARAM,
            Tensor::new(vec![1], vec![INIT_LOG_SCALE])?,
        );
        if config.dense_w {
            let d = encoder.dim;
            let mut eye = vec![0.0; d * d];
            for i in 0..d {
                eye[i * d + i] = 1.0;
            }
            store.insert(DENSE_W_PARAM, Tensor::new(vec![d, d], eye)?);
        }
        Ok(Trainer {
            store,
            vocab,
            encoder,
            skeleton,
            config,
            epoch: 0,
            step: 0,
        })
    }

    fn in_phase_one(&self) -> bool {
        self.epoch < self.config.freeze_epochs
    }

    /// One optimizer update over a batch of pairs. Returns the loss values
    /// at the pre-update parameters.
    pub fn train_step(&mut self, batch: &[&MotionTextPair]) -> Result<LossBreakdown> {
        let phase_one = self.in_phase_one();
        let naive = self.config.naive_mode;
        let mut tape = Tape::new();
        let bound = bind_params(&self.store, &mut tape, &|name| {
            name.starts_with(MOTION_PREFIX)
                || name.starts_with("head.")
                || (!phase_one && name.starts_with(STUDENT_PREFIX))
        });
        let mut m_rows = Vec::with_capacity(batch.len());
        let mut s_norm_rows = Vec::with_capacity(batch.len());
        let mut s_pre_rows = Vec::with_capacity(batch.len());
        let mut t_pre_rows = Vec::with_capacity(batch.len());
        for pair in batch {
            let (_, zm) = motion_encode(&mut tape, &bound, &self.encoder, &self.skeleton, &pair.motion)?;
            m_rows.push(zm);
            let tokens = self.vocab.encode(&pair.text);
            let (pre, norm) = text_encode(&mut tape, &bound, STUDENT_PREFIX, &self.encoder, &tokens)?;
            s_pre_rows.push(pre);
            s_norm_rows.push(norm);
            if !naive {
                let (tpre, _) = text_encode(&mut tape, &bound, TEACHER_PREFIX, &self.encoder, &tokens)?;
                t_pre_rows.push(tpre);
            }
        }
        let zm = tape.concat_rows(&m_rows)?;
        let zs = tape.concat_rows(&s_norm_rows)?;
        let log_scale = bound.id(LOG_SCALE_PARAM);
        let dense_w = if self.config.dense_w {
            Some(bound.id(DENSE_W_PARAM))
        } else {
            None
        };
        let cont = contrastive_loss(&mut tape, zm, zs, log_scale, dense_w)?;
        let (loss, breakdown) = if naive {
            let value = tape.scalar_value(cont);
            (
                cont,
                LossBreakdown {
                    contrastive: value,
                    distill: 0.0,
                    alignment: 0.0,
                    total: value,
                },
            )
        } else {
            let sp = tape.concat_rows(&s_pre_rows)?;
            let tp = tape.concat_rows(&t_pre_rows)?;
            let dist = distill_loss(&mut tape, sp, tp)?;
            let align = alignment_loss(&mut tape, zm, zs)?;
            let weights = LossWeights {
                lambda_distill: self.config.lambda_distill,
            };
            total_loss(&mut tape, cont, dist, align, &weights)?
        };
        if !breakdown.total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at epoch {} step {}: {:?}",
                self.epoch, self.step, breakdown
            )));
        }
        tape.backward(loss)?;
        let mut grads = collect_grads(&bound, &tape);
        clip_global_norm(&mut grads, self.config.grad_clip);
        self.step += 1;
        optimizer_step(&mut self.store, &grads, self.step, &AdamWConfig::from(&self.config))?;
        let ls = &mut self.store.get_mut(LOG_SCALE_PARAM)?.tensor.values[0];
        if *ls > MAX_SCALE.ln() {
            *ls = MAX_SCALE.ln();
        }
        Ok(breakdown)
    }

    /// Run the remaining epochs of the schedule. Incomplete trailing batches
    /// are dropped; batch order is a seeded shuffle per epoch.
    pub fn train(
        &mut self,
        pairs: &[MotionTextPair],
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<Vec<EpochLog>> {
        let train_idx: Vec<usize> = (0..pairs.len())
            .filter(|&i| pairs[i].split == Split::Train)
            .collect();
        if train_idx.len() < self.config.batch_size {
            return Err(Error::Config(format!(
                "train split has {} samples, below one batch of {}",
                train_idx.len(),
                self.config.batch_size
            )));
        }
        let mut logs = Vec::new();
        while self.epoch < self.config.total_epochs {
            let mut order = train_idx.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(mix(
                mix(self.config.seed, EPOCH_SHUFFLE_TAG),
                self.epoch as u64,
            ));
            order.shuffle(&mut rng);
            let mut sums = LossBreakdown::default();
            let mut batches = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                if chunk.len() < self.config.batch_size {
                    break;
                }
                let batch: Vec<&MotionTextPair> = chunk.iter().map(|&i| &pairs[i]).collect();
                let b = self.train_step(&batch).map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("batch {batches}: {m}")),
                    other => other,
                })?;
                sums.contrastive += b.contrastive;
                sums.distill += b.distill;
                sums.alignment += b.alignment;
                sums.total += b.total;
                batches += 1;
            }
            let n = batches as f64;
            let phase = if self.in_phase_one() { 1 } else { 2 };
            self.epoch += 1;
            let log = EpochLog {
                epoch: self.epoch,
                phase,
                contrastive: sums.contrastive / n,
                distill: (!self.config.naive_mode).then_some(sums.distill / n),
                alignment: (!self.config.naive_mode).then_some(sums.alignment / n),
                total: sums.total / n,
            };
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode_checkpoint(self)?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Trainer> {
        let bytes = std::fs::read(path)?;
        decode_checkpoint(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    encoder: EncoderConfig,
    skeleton: Skeleton,
    vocab: Vec<String>,
    epoch: usize,
    step: u64,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(1u8); // dtype: f64
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize to the checkpoint container: magic, version, config JSON,
/// tensor table (parameters plus optimizer moments), trailing CRC-32.
pub fn encode_checkpoint(trainer: &Trainer) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        config: trainer.config.clone(),
        encoder: trainer.encoder.clone(),
        skeleton: trainer.skeleton.clone(),
        vocab: trainer.vocab.tokens().to_vec(),
        epoch: trainer.epoch,
        step: trainer.step,
    };
    let meta_json =
        serde_json::to_vec(&meta).map_err(|e| Error::Format(format!("config encode: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    let count = trainer.store.iter().count() * 3;
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, p) in trainer.store.iter() {
        push_tensor(&mut out, name, &p.tensor.shape, &p.tensor.values);
        push_tensor(&mut out, &format!("{name}#m"), &p.tensor.shape, &p.m);
        push_tensor(&mut out, &format!("{name}#v"), &p.tensor.shape, &p.v);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < 4 + 4 + 4 {
        return Err(Error::Corrupt {
            offset: 0,
            message: "file shorter than fixed header".into(),
        });
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Corrupt {
            offset: body.len() as u64,
            message: format!("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"),
        });
    }
    let mut cur = Cursor { bytes: body, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected {:02x?}",
            magic, CHECKPOINT_MAGIC
        )));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = cur.u32("config length")? as usize;
    let meta_json = cur.take(meta_len, "config")?;
    let meta: CheckpointMeta = serde_json::from_slice(meta_json)
        .map_err(|e| Error::Format(format!("config decode: {e}")))?;
    let count = cur.u32("tensor count")? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|e| Error::Format(format!("tensor name: {e}")))?
            .to_string();
        let dtype = cur.take(1, "dtype")?[0];
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let width = match dtype {
            0 => 4,
            1 => 8,
            d => return Err(Error::Format(format!("unknown dtype code {d}"))),
        };
        let raw = cur.take(numel * width, "tensor values")?;
        let values: Vec<f64> = match dtype {
            0 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            _ => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        if let Some(base) = name.strip_suffix("#m") {
            store.get_mut(base)?.m = values;
        } else if let Some(base) = name.strip_suffix("#v") {
            store.get_mut(base)?.v = values;
        } else {
            store.insert(&name, Tensor::new(shape, values)?);
        }
    }
    if cur.pos != body.len() {
        return Err(Error::Corrupt {
            offset: cur.pos as u64,
            message: format!("{} trailing bytes after tensor table", body.len() - cur.pos),
        });
    }
    Ok(Trainer {
        store,
        vocab: Vocab::from_tokens(meta.vocab),
        encoder: meta.encoder,
        skeleton: meta.skeleton,
        config: meta.config,
        epoch: meta.epoch,
        step: meta.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, DatasetConfig};

    fn scalar_store(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.insert("p", Tensor::new(vec![1], vec![value]).unwrap());
        store
    }

    #[test]
    fn adamw_first_step_hand_computed() {
        let mut store = scalar_store(1.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        optimizer_step(&mut store, &[("p".into(), vec![1.0])], 1, &cfg).unwrap();
        let p = store.get("p").unwrap().tensor.values[0];
        assert!((p - 0.9).abs() < 1e-7, "p = {p}");
    }

    #[test]
    fn adamw_zero_grad_zero_decay_fixed_point() {
        let mut store = scalar_store(0.7);
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        for t in 1..=3 {
            optimizer_step(&mut store, &[("p".into(), vec![0.0])], t, &cfg).unwrap();
        }
        assert_eq!(store.get("p").unwrap().tensor.values[0], 0.7);
    }

    #[test]
    fn adamw_decoupled_decay_scales_param() {
        let mut store = scalar_store(2.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        };
        optimizer_step(&mut store, &[("p".into(), vec![0.0])], 1, &cfg).unwrap();
        let p = store.get("p").unwrap().tensor.values[0];
        assert!((p - 2.0 * (1.0 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn adamw_shape_mismatch_rejected() {
        let mut store = scalar_store(1.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        assert!(optimizer_step(&mut store, &[("p".into(), vec![1.0, 2.0])], 1, &cfg).is_err());
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut grads = vec![("a".to_string(), vec![3.0, 4.0])];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-12);
        let clipped: f64 = grads[0].1.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((clipped - 1.0).abs() < 1e-12);
        let mut small = vec![("a".to_string(), vec![0.3, 0.4])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].1, vec![0.3, 0.4]);
    }

    fn tiny_dataset() -> Vec<MotionTextPair> {
        let cfg = DatasetConfig {
            classes: vec!["walk".into(), "jump".into(), "clap".into(), "spin".into()],
            samples_per_class: 4,
            frames: 6,
            seed: 11,
            mirror_augment: false,
            split_ratios: [0.8, 0.1, 0.1],
        };
        generate_dataset(&cfg).unwrap()
    }

    fn tiny_trainer(config: TrainConfig) -> Trainer {
        let enc = EncoderConfig {
            dim: 8,
            feat: 8,
            heads: 2,
            spatial_layers: 1,
            temporal_layers: 1,
            text_layers: 1,
            context: 16,
            ..EncoderConfig::default()
        };
        Trainer::new(config, enc, Skeleton::toy14(), &tiny_dataset()).unwrap()
    }

    #[test]
    fn invalid_schedule_rejected() {
        let cfg = TrainConfig {
            freeze_epochs: 11,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn phase_one_keeps_student_frozen_and_distill_zero() {
        let config = TrainConfig {
            total_epochs: 2,
            freeze_epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(config);
        let student_before: Vec<(String, Vec<f64>)> = tr
            .store
            .iter()
            .filter(|(n, _)| n.starts_with(STUDENT_PREFIX))
            .map(|(n, p)| (n.clone(), p.tensor.values.clone()))
            .collect();
        let teacher_before: Vec<Vec<f64>> = tr
            .store
            .iter()
            .filter(|(n, _)| n.starts_with(TEACHER_PREFIX))
            .map(|(_, p)| p.tensor.values.clone())
            .collect();
        let pairs = tiny_dataset();
        let logs = tr.train(&pairs, |_| {}).unwrap();
        assert_eq!(logs.len(), 2);
        for log in &logs {
            assert_eq!(log.phase, 1);
            assert!(log.distill.unwrap().abs() <= 1e-12, "distill {:?}", log.distill);
        }
        for (name, before) in &student_before {
            assert_eq!(&tr.store.get(name).unwrap().tensor.values, before, "{name} moved");
        }
        let teacher_after: Vec<Vec<f64>> = tr
            .store
            .iter()
            .filter(|(n, _)| n.starts_with(TEACHER_PREFIX))
            .map(|(_, p)| p.tensor.values.clone())
            .collect();
        assert_eq!(teacher_before, teacher_after);
    }

    #[test]
    fn phase_two_moves_student_and_teacher_stays() {
        let config = TrainConfig {
            total_epochs: 2,
            freeze_epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(config);
        let teacher_before: Vec<Vec<f64>> = tr
            .store
            .iter()
            .filter(|(n, _)| n.starts_with(TEACHER_PREFIX))
            .map(|(_, p)| p.tensor.values.clone())
            .collect();
        let student_before: Vec<Vec<f64>> = tr
            .store
            .iter()
            .filter(|(n, _)| n.starts_with(STUDENT_PREFIX))
            .map(|(_, p)| p.tensor.values.clone())
            .collect();
        let pairs = tiny_dataset();
        let logs = tr.train(&pairs, |_| {}).unwrap();
        assert_eq!(logs[0].phase, 1);
        assert_eq!(logs[1].phase, 2);
        let student_after: Vec<Vec<f64>> = tr
            .store
            .iter()
            .filter(|(n, _)| n.starts_with(STUDENT_PREFIX))
            .map(|(_, p)| p.tensor.values.clone())
            .collect();
        assert_ne!(student_before, student_after);
        let teacher_after: Vec<Vec<f64>> = tr
            .store
            .iter()
            .filter(|(n, _)| n.starts_with(TEACHER_PREFIX))
            .map(|(_, p)| p.tensor.values.clone())
            .collect();
        assert_eq!(teacher_before, teacher_after);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let config = TrainConfig {
            total_epochs: 2,
            freeze_epochs: 1,
            batch_size: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let mut tr = tiny_trainer(config.clone());
            let pairs = tiny_dataset();
            let logs = tr.train(&pairs, |_| {}).unwrap();
            (encode_checkpoint(&tr).unwrap(), logs)
        };
        let (a_bytes, a_logs) = run();
        let (b_bytes, b_logs) = run();
        assert_eq!(a_bytes, b_bytes);
        for (x, y) in a_logs.iter().zip(&b_logs) {
            assert_eq!(x.total.to_bits(), y.total.to_bits());
        }
    }

    #[test]
    fn naive_mode_logs_contrastive_only() {
        let config = TrainConfig {
            total_epochs: 1,
            freeze_epochs: 0,
            batch_size: 4,
            naive_mode: true,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(config);
        let pairs = tiny_dataset();
        let logs = tr.train(&pairs, |_| {}).unwrap();
        assert!(logs[0].distill.is_none());
        assert!(logs[0].alignment.is_none());
        assert_eq!(logs[0].total, logs[0].contrastive);
        let json = serde_json::to_string(&logs[0]).unwrap();
        assert!(!json.contains("distill"));
    }

    #[test]
    fn checkpoint_round_trip_byte_identical() {
        let config = TrainConfig {
            total_epochs: 1,
            freeze_epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(config);
        let pairs = tiny_dataset();
        tr.train(&pairs, |_| {}).unwrap();
        let bytes = encode_checkpoint(&tr).unwrap();
        let reloaded = decode_checkpoint(&bytes).unwrap();
        let again = encode_checkpoint(&reloaded).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn checkpoint_bad_magic_and_truncation() {
        let config = TrainConfig {
            total_epochs: 0,
            freeze_epochs: 0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let tr = tiny_trainer(config);
        let bytes = encode_checkpoint(&tr).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        // fix the checksum so the magic check is what trips
        let n = bad.len();
        let crc = crc32fast::hash(&bad[..n - 4]);
        bad[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(
            decode_checkpoint(truncated),
            Err(Error::Corrupt { .. })
        ));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let config = TrainConfig {
            total_epochs: 3,
            freeze_epochs: 1,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let pairs = tiny_dataset();
        // uninterrupted
        let mut full = tiny_trainer(config.clone());
        let full_logs = full.train(&pairs, |_| {}).unwrap();
        // interrupted after epoch 2, serialized, resumed
        let mut half = tiny_trainer(config.clone());
        half.config.total_epochs = 2;
        half.train(&pairs, |_| {}).unwrap();
        let bytes = encode_checkpoint(&half).unwrap();
        let mut resumed = decode_checkpoint(&bytes).unwrap();
        resumed.config.total_epochs = 3;
        let tail_logs = resumed.train(&pairs, |_| {}).unwrap();
        assert_eq!(tail_logs.len(), 1);
        assert!((tail_logs[0].total - full_logs[2].total).abs() <= 1e-12);
        for (name, p) in full.store.iter() {
            let q = resumed.store.get(name).unwrap();
            for (a, b) in p.tensor.values.iter().zip(&q.tensor.values) {
                assert!((a - b).abs() <= 1e-12, "{name} diverged");
            }
        }
    }

    #[test]
    fn contrastive_loss_descends_on_tiny_run() {
        let config = TrainConfig {
            total_epochs: 4,
            freeze_epochs: 4,
            batch_size: 8,
            lr: 3e-3,
            ..TrainConfig::default()
        };
        let mut tr = tiny_trainer(config);
        let pairs = tiny_dataset();
        let logs = tr.train(&pairs, |_| {}).unwrap();
        assert!(
            logs.last().unwrap().contrastive < logs[0].contrastive,
            "no descent: first {} last {}",
            logs[0].contrastive,
            logs.last().unwrap().contrastive
        );
    }
}
