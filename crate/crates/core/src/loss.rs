//! The three training loss terms and their weighted total: symmetric
//! contrastive cross-entropy with a learnable logit scale, L2 distillation
//! toward the frozen teacher, and cosine motion-text alignment.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Initial logit log-scale, ln(1/0.07).
pub const INIT_LOG_SCALE: f64 = 2.6592600369327783;
/// The effective scale exp(log_scale) is clamped to this after each update.
pub const MAX_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingRole {
    Motion,
    TextStudent,
    TextTeacher,
}

/// N-by-d embedding rows with a role tag.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub role: EmbeddingRole,
}

impl EmbeddingBatch {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>, role: EmbeddingRole) -> Result<Self> {
        if values.len() != rows * dim {
            return Err(Error::dimension(
                "embedding batch values",
                &[rows, dim],
                &[values.len()],
            ));
        }
        Ok(EmbeddingBatch {
            rows,
            dim,
            values,
            role,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_distill: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda_distill.is_finite() || self.lambda_distill < 0.0 {
            return Err(Error::Config(format!(
                "lambda_distill must be finite and non-negative, got {}",
                self.lambda_distill
            )));
        }
        Ok(())
    }
}

/// Scalar values of the loss terms for one step or epoch.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub distill: f64,
    pub alignment: f64,
    pub total: f64,
}

/// Symmetric cross-entropy over scaled similarity logits. Matching indices
/// are the batch row order. `dense_w` optionally inserts a learnable d-by-d
/// matrix between the embedding products.
pub fn contrastive_loss(
    tape: &mut Tape,
    z_motion: TensorId,
    z_text: TensorId,
    log_scale: TensorId,
    dense_w: Option<TensorId>,
) -> Result<TensorId> {
    let (n, d) = match tape.shape(z_motion) {
        [n, d] => (*n, *d),
        s => return Err(Error::dimension("contrastive motion batch", s, &[])),
    };
    if tape.shape(z_text) != [n, d] {
        return Err(Error::dimension(
            "contrastive batch sizes",
            &[n, d],
            tape.shape(z_text),
        ));
    }
    let scale = tape.exp(log_scale);
    let left = match dense_w {
        Some(w) => tape.matmul(z_motion, w)?,
        None => z_motion,
    };
    let tt = tape.transpose(z_text)?;
    let logits = tape.matmul(left, tt)?;
    let logits = tape.mul_scalar(logits, scale)?;
    let targets: Vec<usize> = (0..n).collect();
    let ce_mt = tape.cross_entropy_rows(logits, &targets)?;
    let logits_t = tape.transpose(logits)?;
    let ce_tm = tape.cross_entropy_rows(logits_t, &targets)?;
    let sum = tape.add(ce_mt, ce_tm)?;
    Ok(tape.scale(sum, 0.5))
}

/// Mean squared L2 distance between student and teacher rows. Applied to
/// pre-normalization projections so the student may drift in magnitude.
pub fn distill_loss(tape: &mut Tape, student: TensorId, teacher: TensorId) -> Result<TensorId> {
    if tape.shape(student) != tape.shape(teacher) {
        return Err(Error::dimension(
            "distill batch shapes",
            tape.shape(student),
            tape.shape(teacher),
        ));
    }
    let n = tape.shape(student)[0];
    let diff = tape.sub(student, teacher)?;
    let ss = tape.sum_squares(diff);
    Ok(tape.scale(ss, 1.0 / n as f64))
}

/// One minus the mean row-wise cosine similarity, using explicit norm
/// quotients.
pub fn alignment_loss(tape: &mut Tape, z_motion: TensorId, z_student: TensorId) -> Result<TensorId> {
    if tape.shape(z_motion) != tape.shape(z_student) {
        return Err(Error::dimension(
            "alignment batch shapes",
            tape.shape(z_motion),
            tape.shape(z_student),
        ));
    }
    let cos = tape.cosine_sim_rows_mean(z_motion, z_student)?;
    let neg = tape.scale(cos, -1.0);
    Ok(tape.add_const(neg, 1.0))
}

/// total = contrastive + lambda * distill + alignment.
pub fn total_loss(
    tape: &mut Tape,
    contrastive: TensorId,
    distill: TensorId,
    alignment: TensorId,
    weights: &LossWeights,
) -> Result<(TensorId, LossBreakdown)> {
    weights.validate()?;
    let scaled = tape.scale(distill, weights.lambda_distill);
    let partial = tape.add(contrastive, scaled)?;
    let total = tape.add(partial, alignment)?;
    Ok((
        total,
        LossBreakdown {
            contrastive: tape.scalar_value(contrastive),
            distill: tape.scalar_value(distill),
            alignment: tape.scalar_value(alignment),
            total: tape.scalar_value(total),
        },
    ))
}

/// Value-only contrastive loss over plain batches (scalar logit scale).
pub fn contrastive_loss_value(a: &EmbeddingBatch, b: &EmbeddingBatch, scale: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let za = tape.constant(vec![a.rows, a.dim], a.values.clone())?;
    let zb = tape.constant(vec![b.rows, b.dim], b.values.clone())?;
    let ls = tape.constant_scalar(scale.ln());
    let l = contrastive_loss(&mut tape, za, zb, ls, None)?;
    Ok(tape.scalar_value(l))
}

pub fn distill_loss_value(student: &EmbeddingBatch, teacher: &EmbeddingBatch) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(vec![student.rows, student.dim], student.values.clone())?;
    let t = tape.constant(vec![teacher.rows, teacher.dim], teacher.values.clone())?;
    let l = distill_loss(&mut tape, s, t)?;
    Ok(tape.scalar_value(l))
}

pub fn alignment_loss_value(motion: &EmbeddingBatch, student: &EmbeddingBatch) -> Result<f64> {
    let mut tape = Tape::new();
    let m = tape.constant(vec![motion.rows, motion.dim], motion.values.clone())?;
    let s = tape.constant(vec![student.rows, student.dim], student.values.clone())?;
    let l = alignment_loss(&mut tape, m, s)?;
    Ok(tape.scalar_value(l))
}
