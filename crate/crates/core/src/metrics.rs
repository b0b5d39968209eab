//! Retrieval and distribution metrics over embedding sets: R-Precision,
//! FID, MM-Dist, Diversity, and Multimodality, plus the evaluation driver
//! that reports mean and 95% interval over repeated seeded runs.

use crate::dataset::{MotionTextPair, Split};
use crate::encoder::{motion_encode, text_encode, STUDENT_PREFIX, TEACHER_PREFIX};
use crate::error::{Error, Result};
use crate::motion::{generate_motion, mix, MotionSequence};
use crate::params::bind_params;
use crate::trainer::Trainer;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

const EVAL_TAG: u64 = 0x4556414c;
const GEN_TAG: u64 = 0x47454e56;
const GROUP_TAG: u64 = 0x47525056;

/// Sufficient statistics of a Gaussian fit: mean and unbiased covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major d-by-d covariance.
    pub cov: Vec<f64>,
    pub dim: usize,
}

impl GaussianStats {
    /// Fit from N rows of d features; requires N >= 2 for the unbiased
    /// estimator.
    pub fn fit(feats: &[f64], dim: usize) -> Result<GaussianStats> {
        if dim == 0 || feats.len() % dim != 0 {
            return Err(Error::dimension("gaussian fit features", &[feats.len()], &[dim]));
        }
        let n = feats.len() / dim;
        if n < 2 {
            return Err(Error::Config(format!(
                "need at least 2 samples for covariance, got {n}"
            )));
        }
        let mut mean = vec![0.0; dim];
        for row in feats.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; dim * dim];
        for row in feats.chunks_exact(dim) {
            for i in 0..dim {
                let di = row[i] - mean[i];
                for j in 0..dim {
                    cov[i * dim + j] += di * (row[j] - mean[j]);
                }
            }
        }
        cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);
        Ok(GaussianStats { mean, cov, dim })
    }
}

/// Square root of a symmetric PSD matrix via symmetric eigendecomposition.
/// Tiny negative eigenvalues (within -1e-10 of the spectral norm) are
/// clamped to zero; anything more negative is rejected.
pub fn matrix_sqrt_psd(m: &[f64], dim: usize) -> Result<Vec<f64>> {
    if m.len() != dim * dim {
        return Err(Error::dimension("matrix sqrt input", &[m.len()], &[dim, dim]));
    }
    let mut max_abs = 0f64;
    for i in 0..dim {
        for j in 0..i {
            let asym = (m[i * dim + j] - m[j * dim + i]).abs();
            if asym > 1e-9 {
                return Err(Error::Numerical(format!(
                    "matrix not symmetric: |m[{i}][{j}] - m[{j}][{i}]| = {asym}"
                )));
            }
        }
        max_abs = max_abs.max(m[i * dim + i].abs());
    }
    let mat = DMatrix::from_row_slice(dim, dim, m);
    let eig = mat.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0f64, |a, &l| a.max(l.abs()));
    let tol = 1e-10 * scale.max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for l in roots.iter_mut() {
        if *l < -tol {
            return Err(Error::NotPsd { min_eigenvalue: *l });
        }
        *l = l.max(0.0).sqrt();
    }
    let sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok(sqrt.as_slice().to_vec())
}

/// Frechet distance between two Gaussians using the symmetric-product form
/// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).
pub fn fid_from_stats(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::dimension("fid stats dims", &[a.dim], &[b.dim]));
    }
    let d = a.dim;
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let s1_sqrt = matrix_sqrt_psd(&a.cov, d)?;
    let s1 = DMatrix::from_row_slice(d, d, &s1_sqrt);
    let s2 = DMatrix::from_row_slice(d, d, &b.cov);
    let inner = &s1 * s2 * &s1;
    // symmetrize against round-off before the second root
    let inner = (&inner + inner.transpose()) * 0.5;
    let inner_vec: Vec<f64> = inner.transpose().as_slice().to_vec();
    let cross = matrix_sqrt_psd(&inner_vec, d)?;
    let mut trace = 0.0;
    for i in 0..d {
        trace += a.cov[i * d + i] + b.cov[i * d + i] - 2.0 * cross[i * d + i];
    }
    let fid = mean_term + trace;
    if fid < -1e-8 {
        return Err(Error::Numerical(format!("fid evaluated to {fid}")));
    }
    Ok(fid.max(0.0))
}

pub fn fid(feats_a: &[f64], feats_b: &[f64], dim: usize) -> Result<f64> {
    let a = GaussianStats::fit(feats_a, dim)?;
    let b = GaussianStats::fit(feats_b, dim)?;
    fid_from_stats(&a, &b)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Retrieval accuracy against pools of one ground-truth text and
/// `pool_size - 1` mismatched texts, ranked by Euclidean distance with ties
/// broken by candidate index. Returns (top1, top2, top3) hit rates averaged
/// over all probes and trials.
pub fn r_precision(
    motion_feats: &[f64],
    text_feats: &[f64],
    dim: usize,
    pool_size: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    if motion_feats.len() != text_feats.len() || motion_feats.len() % dim != 0 {
        return Err(Error::dimension(
            "r-precision features",
            &[motion_feats.len()],
            &[text_feats.len()],
        ));
    }
    let n = motion_feats.len() / dim;
    if n < pool_size {
        return Err(Error::Config(format!(
            "need at least pool_size ({pool_size}) samples, got {n}"
        )));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be positive".into()));
    }
    let mut hits = [0u64; 3];
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, trial as u64));
        for probe in 0..n {
            let m = &motion_feats[probe * dim..(probe + 1) * dim];
            // distractors: pool_size-1 distinct indices from the n-1 others
            let picks = rand::seq::index::sample(&mut rng, n - 1, pool_size - 1);
            let gt_dist = euclidean(m, &text_feats[probe * dim..(probe + 1) * dim]);
            // candidate 0 is the ground truth; earlier index wins ties, so
            // a distractor only outranks it by being strictly nearer
            let mut rank = 0usize;
            for raw in picks.iter() {
                let j = if raw >= probe { raw + 1 } else { raw };
                let d = euclidean(m, &text_feats[j * dim..(j + 1) * dim]);
                if d < gt_dist {
                    rank += 1;
                }
            }
            for k in 0..3 {
                if rank <= k {
                    hits[k] += 1;
                }
            }
        }
    }
    let total = (trials * n) as f64;
    Ok((
        hits[0] as f64 / total,
        hits[1] as f64 / total,
        hits[2] as f64 / total,
    ))
}

/// Mean Euclidean distance between matched motion/text feature rows.
pub fn mm_dist(motion_feats: &[f64], text_feats: &[f64], dim: usize) -> Result<f64> {
    if motion_feats.len() != text_feats.len() || motion_feats.len() % dim != 0 {
        return Err(Error::dimension(
            "mm-dist features",
            &[motion_feats.len()],
            &[text_feats.len()],
        ));
    }
    let n = motion_feats.len() / dim;
    if n == 0 {
        return Err(Error::Config("mm-dist needs at least one pair".into()));
    }
    let sum: f64 = (0..n)
        .map(|i| {
            euclidean(
                &motion_feats[i * dim..(i + 1) * dim],
                &text_feats[i * dim..(i + 1) * dim],
            )
        })
        .sum();
    Ok(sum / n as f64)
}

/// Mean Euclidean distance over `pair_count` seeded pairs of distinct rows.
/// `pair_count = None` uses min(100, N/2).
pub fn diversity(feats: &[f64], dim: usize, pair_count: Option<usize>, seed: u64) -> Result<f64> {
    let n = feats.len() / dim;
    let pairs = pair_count.unwrap_or_else(|| 100.min(n / 2));
    if pairs == 0 || n < 2 * pairs {
        return Err(Error::Config(format!(
            "diversity needs 2*pair_count ({}) distinct rows, got {n}",
            2 * pairs
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, 2 * pairs);
    let idx: Vec<usize> = picks.iter().collect();
    let sum: f64 = idx
        .chunks_exact(2)
        .map(|p| {
            euclidean(
                &feats[p[0] * dim..(p[0] + 1) * dim],
                &feats[p[1] * dim..(p[1] + 1) * dim],
            )
        })
        .sum();
    Ok(sum / pairs as f64)
}

/// Per group of exactly 20 rows: mean distance over the 10 consecutive
/// pairs; returns the mean over groups.
pub fn multimodality(groups: &[Vec<f64>], dim: usize) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::Config("multimodality needs at least one group".into()));
    }
    let mut total = 0.0;
    for (gi, g) in groups.iter().enumerate() {
        if g.len() != 20 * dim {
            return Err(Error::Config(format!(
                "multimodality group {gi} has {} rows, expected 20",
                g.len() / dim
            )));
        }
        let mut s = 0.0;
        for p in 0..10 {
            s += euclidean(
                &g[2 * p * dim..(2 * p + 1) * dim],
                &g[(2 * p + 1) * dim..(2 * p + 2) * dim],
            );
        }
        total += s / 10.0;
    }
    Ok(total / groups.len() as f64)
}

/// Encode motions with the checkpoint's motion encoder; returns normalized
/// N-by-d features. Work is chunked so intermediate tapes stay small.
pub fn embed_motions(trainer: &Trainer, motions: &[&MotionSequence]) -> Result<Vec<f64>> {
    let d = trainer.encoder.dim;
    let mut out = Vec::with_capacity(motions.len() * d);
    for chunk in motions.chunks(16) {
        let mut tape = crate::autodiff::Tape::new();
        let bound = bind_params(&trainer.store, &mut tape, &|_| false);
        for m in chunk {
            let (_, z) = motion_encode(&mut tape, &bound, &trainer.encoder, &trainer.skeleton, m)?;
            out.extend_from_slice(tape.values(z));
        }
    }
    Ok(out)
}

/// Encode captions with the student text encoder; normalized N-by-d.
pub fn embed_texts(trainer: &Trainer, texts: &[&str]) -> Result<Vec<f64>> {
    let d = trainer.encoder.dim;
    let mut out = Vec::with_capacity(texts.len() * d);
    for chunk in texts.chunks(64) {
        let mut tape = crate::autodiff::Tape::new();
        let bound = bind_params(&trainer.store, &mut tape, &|_| false);
        for t in chunk {
            let tokens = trainer.vocab.encode(t);
            let (_, z) = text_encode(&mut tape, &bound, STUDENT_PREFIX, &trainer.encoder, &tokens)?;
            out.extend_from_slice(tape.values(z));
        }
    }
    Ok(out)
}

/// Mean squared L2 distance between student and teacher pre-normalization
/// text projections — how far fine-tuning has pulled the student away.
pub fn tether_mse(trainer: &Trainer, texts: &[&str]) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::Config("tether mse needs at least one caption".into()));
    }
    let mut total = 0.0;
    for chunk in texts.chunks(64) {
        let mut tape = crate::autodiff::Tape::new();
        let bound = bind_params(&trainer.store, &mut tape, &|_| false);
        for t in chunk {
            let tokens = trainer.vocab.encode(t);
            let (s_pre, _) = text_encode(&mut tape, &bound, STUDENT_PREFIX, &trainer.encoder, &tokens)?;
            let (t_pre, _) = text_encode(&mut tape, &bound, TEACHER_PREFIX, &trainer.encoder, &tokens)?;
            let s = tape.values(s_pre);
            let t = tape.values(t_pre);
            total += s
                .iter()
                .zip(t)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
    }
    Ok(total / texts.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub pool_size: usize,
    /// R-Precision pool resamplings per run.
    pub trials: usize,
    pub runs: usize,
    pub seed: u64,
    /// Caption groups used for multimodality (capped by distinct classes).
    pub variant_groups: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pool_size: 32,
            trials: 4,
            runs: 20,
            seed: 0,
            variant_groups: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub ci95: f64,
    pub runs: usize,
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci95 = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    };
    MetricSummary { mean, ci95, runs: n }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub r_precision_top1: MetricSummary,
    pub r_precision_top2: MetricSummary,
    pub r_precision_top3: MetricSummary,
    pub fid: MetricSummary,
    pub mm_dist: MetricSummary,
    pub diversity: MetricSummary,
    pub multimodality: MetricSummary,
    pub samples: usize,
    pub pool_size: usize,
}

/// Full metric suite on one dataset split: retrieval against seeded pools,
/// FID between the split's motions and freshly generated same-class
/// variants, and variant-based multimodality, repeated `runs` times.
pub fn evaluate(
    trainer: &Trainer,
    pairs: &[MotionTextPair],
    split: Split,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let subset: Vec<&MotionTextPair> = pairs.iter().filter(|p| p.split == split).collect();
    let n = subset.len();
    if n < cfg.pool_size {
        return Err(Error::Config(format!(
            "split has {n} pairs, below pool size {}",
            cfg.pool_size
        )));
    }
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be positive".into()));
    }
    let d = trainer.encoder.dim;
    let motions: Vec<&MotionSequence> = subset.iter().map(|p| &p.motion).collect();
    let texts: Vec<&str> = subset.iter().map(|p| p.text.as_str()).collect();
    let m_feats = embed_motions(trainer, &motions)?;
    let t_feats = embed_texts(trainer, &texts)?;
    let classes: Vec<String> = subset
        .iter()
        .map(|p| p.motion.class_label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .take(cfg.variant_groups)
        .collect();
    let frames = subset[0].motion.frames;

    let mut top1 = Vec::new();
    let mut top2 = Vec::new();
    let mut top3 = Vec::new();
    let mut fids = Vec::new();
    let mut mms = Vec::new();
    let mut divs = Vec::new();
    let mut multis = Vec::new();
    for run in 0..cfg.runs {
        let run_seed = mix(mix(cfg.seed, EVAL_TAG), run as u64);
        let (t1, t2, t3) = r_precision(&m_feats, &t_feats, d, cfg.pool_size, cfg.trials, run_seed)?;
        top1.push(t1);
        top2.push(t2);
        top3.push(t3);
        mms.push(mm_dist(&m_feats, &t_feats, d)?);
        divs.push(diversity(&m_feats, d, None, run_seed)?);
        // generated set: a fresh seed-variant of each held-out motion
        let generated: Vec<MotionSequence> = subset
            .iter()
            .enumerate()
            .map(|(i, p)| {
                generate_motion(
                    &p.motion.class_label,
                    &trainer.skeleton,
                    frames,
                    mix(mix(run_seed, GEN_TAG), i as u64),
                )
            })
            .collect::<Result<_>>()?;
        let gen_refs: Vec<&MotionSequence> = generated.iter().collect();
        let g_feats = embed_motions(trainer, &gen_refs)?;
        fids.push(fid(&m_feats, &g_feats, d)?);
        let mut groups = Vec::new();
        for (gi, class) in classes.iter().enumerate() {
            let variants: Vec<MotionSequence> = (0..20)
                .map(|v| {
                    generate_motion(
                        class,
                        &trainer.skeleton,
                        frames,
                        mix(mix(run_seed, GROUP_TAG), ((gi as u64) << 32) | v),
                    )
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&MotionSequence> = variants.iter().collect();
            groups.push(embed_motions(trainer, &refs)?);
        }
        multis.push(multimodality(&groups, d)?);
    }
    Ok(MetricsReport {
        r_precision_top1: summarize(&top1),
        r_precision_top2: summarize(&top2),
        r_precision_top3: summarize(&top3),
        fid: summarize(&fids),
        mm_dist: summarize(&mms),
        diversity: summarize(&divs),
        multimodality: summarize(&multis),
        samples: n,
        pool_size: cfg.pool_size,
    })
}
