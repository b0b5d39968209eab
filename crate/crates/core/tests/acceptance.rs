//! End-to-end acceptance suite. Each test covers one numbered criterion and
//! prints a single pass line; a failed assertion marks the criterion failed.

use moclip_core::dataset::{generate_dataset, DatasetConfig, Split};
use moclip_core::encoder::{
    frame_tokens, motion_encode, text_encode, EncoderConfig, STUDENT_PREFIX,
};
use moclip_core::loss::{
    alignment_loss, contrastive_loss, distill_loss, total_loss, LossWeights,
};
use moclip_core::metrics::{
    embed_motions, embed_texts, fid, fid_from_stats, matrix_sqrt_psd, r_precision, tether_mse,
    GaussianStats,
};
use moclip_core::motion::{generate_motion, mix};
use moclip_core::params::bind_params;
use moclip_core::skeleton::{attention_mask, Skeleton};
use moclip_core::trainer::{encode_checkpoint, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn small_dataset(seed: u64) -> Vec<moclip_core::dataset::MotionTextPair> {
    generate_dataset(&DatasetConfig {
        classes: vec!["walk".into(), "jump".into(), "clap".into(), "spin".into()],
        samples_per_class: 16,
        frames: 8,
        seed,
        mirror_augment: false,
        split_ratios: [0.7, 0.2, 0.1],
    })
    .unwrap()
}

fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        dim: 16,
        feat: 16,
        heads: 2,
        context: 16,
        ..EncoderConfig::default()
    }
}

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig {
        total_epochs: 4,
        freeze_epochs: 2,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    }
}

fn rand_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
    (0..n * d).map(|_| rng.gen::<f64>() - 0.5).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// 1. Every loss term and both encoder forward passes match central finite
/// differences (step 1e-5) within 1e-4 relative error at f64.
#[test]
fn acceptance_1_gradient_correctness() {
    let start = Instant::now();
    let h = 1e-5;
    let (n, d) = (4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let vm = rand_rows(&mut rng, n, d);
    let vs = rand_rows(&mut rng, n, d);
    let vt = rand_rows(&mut rng, n, d);
    let vw: Vec<f64> = (0..d * d)
        .map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 } + 0.01 * (rng.gen::<f64>() - 0.5))
        .collect();

    // composite loss incl. the dense similarity matrix and the logit scale
    let run = |vm: &[f64], vs: &[f64], vw: &[f64], ls: f64| {
        let mut tape = moclip_core::autodiff::Tape::new();
        let zm_raw = tape.leaf(vec![n, d], vm.to_vec(), true).unwrap();
        let zs_raw = tape.leaf(vec![n, d], vs.to_vec(), true).unwrap();
        let w = tape.leaf(vec![d, d], vw.to_vec(), true).unwrap();
        let lsid = tape.leaf(vec![1], vec![ls], true).unwrap();
        let zt = tape.constant(vec![n, d], vt.clone()).unwrap();
        let zm = tape.l2_normalize_rows(zm_raw).unwrap();
        let zs = tape.l2_normalize_rows(zs_raw).unwrap();
        let c = contrastive_loss(&mut tape, zm, zs, lsid, Some(w)).unwrap();
        let dl = distill_loss(&mut tape, zs_raw, zt).unwrap();
        let al = alignment_loss(&mut tape, zm, zs).unwrap();
        let (tot, _) =
            total_loss(&mut tape, c, dl, al, &LossWeights { lambda_distill: 0.4 }).unwrap();
        (tape, tot, zm_raw, zs_raw, w, lsid)
    };
    let ls0 = 0.9;
    let (mut tape, tot, zm_id, zs_id, w_id, ls_id) = run(&vm, &vs, &vw, ls0);
    tape.backward(tot).unwrap();
    let value = |vm: &[f64], vs: &[f64], vw: &[f64], ls: f64| {
        let (t, tot, ..) = run(vm, vs, vw, ls);
        t.scalar_value(tot)
    };
    for k in (0..n * d).step_by(3) {
        for (vals, id, name) in [(&vm, zm_id, "motion"), (&vs, zs_id, "student")] {
            let mut p = (*vals).clone();
            p[k] += h;
            let mut q = (*vals).clone();
            q[k] -= h;
            let (fp, fq) = if name == "motion" {
                (value(&p, &vs, &vw, ls0), value(&q, &vs, &vw, ls0))
            } else {
                (value(&vm, &p, &vw, ls0), value(&vm, &q, &vw, ls0))
            };
            let fd = (fp - fq) / (2.0 * h);
            let g = tape.grad(id).unwrap()[k];
            assert!(rel_err(g, fd) < 1e-4, "{name}[{k}]: grad {g} vs fd {fd}");
        }
    }
    for k in (0..d * d).step_by(7) {
        let mut p = vw.clone();
        p[k] += h;
        let mut q = vw.clone();
        q[k] -= h;
        let fd = (value(&vm, &vs, &p, ls0) - value(&vm, &vs, &q, ls0)) / (2.0 * h);
        let g = tape.grad(w_id).unwrap()[k];
        assert!(rel_err(g, fd) < 1e-4, "dense w[{k}]: grad {g} vs fd {fd}");
    }
    let fd = (value(&vm, &vs, &vw, ls0 + h) - value(&vm, &vs, &vw, ls0 - h)) / (2.0 * h);
    let g = tape.grad(ls_id).unwrap()[0];
    assert!(rel_err(g, fd) < 1e-4, "log_scale: grad {g} vs fd {fd}");

    // encoder forward passes: perturb stored parameters and compare the
    // gradient of a fixed linear functional of the embedding
    let skeleton = Skeleton::toy14();
    let cfg = EncoderConfig {
        dim: 8,
        feat: 8,
        heads: 2,
        spatial_layers: 1,
        temporal_layers: 1,
        text_layers: 1,
        context: 12,
        ..EncoderConfig::default()
    };
    let mut store = moclip_core::params::ParamStore::new();
    moclip_core::encoder::init_text_encoder(&mut store, STUDENT_PREFIX, &cfg, 6, 3);
    moclip_core::encoder::init_motion_encoder(&mut store, &cfg, &skeleton, 4);
    let motion = generate_motion("walk", &skeleton, 4, 9).unwrap();
    let tokens = frame_tokens(&[1, 4, 2, 5], cfg.context);
    let probe: Vec<f64> = (0..cfg.dim).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
    let objective = |store: &moclip_core::params::ParamStore, grads: bool, pname: &str| {
        let mut tape = moclip_core::autodiff::Tape::new();
        let bound = bind_params(store, &mut tape, &|n| grads && n == pname);
        let (_, zt) = text_encode(&mut tape, &bound, STUDENT_PREFIX, &cfg, &tokens).unwrap();
        let (_, zm) = motion_encode(&mut tape, &bound, &cfg, &skeleton, &motion).unwrap();
        let z = tape.concat_cols(&[zt, zm]).unwrap();
        let pv = tape
            .constant(vec![1, 2 * cfg.dim], [probe.clone(), probe.clone()].concat())
            .unwrap();
        let prod = tape.mul(z, pv).unwrap();
        let obj = tape.sum_all(prod);
        if grads {
            tape.backward(obj).unwrap();
            let g = tape.grad(bound.id(pname)).unwrap().to_vec();
            (tape.scalar_value(obj), g)
        } else {
            (tape.scalar_value(obj), vec![])
        }
    };
    let picks = [
        "text_student.tok_emb",
        "text_student.pos_emb",
        "text_student.l0.h0.wq",
        "text_student.l0.mlp_w1",
        "text_student.proj",
        "motion.coord_w",
        "motion.joint_emb",
        "motion.s0.h1.wv",
        "motion.t0.wo",
        "motion.proj",
    ];
    for pname in picks {
        let (_, g) = objective(&store, true, pname);
        let len = store.get(pname).unwrap().tensor.values.len();
        for k in [0, len / 2, len - 1] {
            let mut plus = store.clone();
            plus.get_mut(pname).unwrap().tensor.values[k] += h;
            let mut minus = store.clone();
            minus.get_mut(pname).unwrap().tensor.values[k] -= h;
            let fd =
                (objective(&plus, false, pname).0 - objective(&minus, false, pname).0) / (2.0 * h);
            assert!(
                rel_err(g[k], fd) < 1e-4,
                "{pname}[{k}]: grad {} vs fd {fd}",
                g[k]
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient checks took {elapsed:?}");
    println!("acceptance 1 (gradient correctness): PASS ({elapsed:?})");
}

/// 2. Closed-form loss identities.
#[test]
fn acceptance_2_loss_identities() {
    use moclip_core::loss::{
        alignment_loss_value, contrastive_loss_value, distill_loss_value, EmbeddingBatch,
        EmbeddingRole,
    };
    let d = 6;
    for n in [2usize, 4, 32] {
        let row: Vec<f64> = (0..d).map(|i| (i as f64 + 1.0) / d as f64).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit: Vec<f64> = row.iter().map(|v| v / norm).collect();
        let vals: Vec<f64> = unit.iter().cycle().take(n * d).copied().collect();
        let a = EmbeddingBatch::new(n, d, vals.clone(), EmbeddingRole::Motion).unwrap();
        let b = EmbeddingBatch::new(n, d, vals, EmbeddingRole::TextStudent).unwrap();
        let loss = contrastive_loss_value(&a, &b, 14.0).unwrap();
        assert!(
            (loss - (n as f64).ln()).abs() < 1e-9,
            "identical rows n={n}: {loss}"
        );
    }
    let make = |vals: Vec<f64>| EmbeddingBatch::new(2, 2, vals, EmbeddingRole::Motion).unwrap();
    let m = make(vec![1.0, 0.0, 0.0, 1.0]);
    let same = make(vec![1.0, 0.0, 0.0, 1.0]);
    let ortho = make(vec![0.0, 1.0, 1.0, 0.0]);
    let anti = make(vec![-1.0, 0.0, 0.0, -1.0]);
    assert!(alignment_loss_value(&m, &same).unwrap().abs() < 1e-12);
    assert!((alignment_loss_value(&m, &ortho).unwrap() - 1.0).abs() < 1e-12);
    assert!((alignment_loss_value(&m, &anti).unwrap() - 2.0).abs() < 1e-12);
    let student = make(vec![0.3, -0.7, 1.1, 0.2]);
    let teacher = make(vec![0.3, -0.7, 1.1, 0.2]);
    assert_eq!(distill_loss_value(&student, &teacher).unwrap(), 0.0);
    println!("acceptance 2 (loss identities): PASS");
}

/// 3. FID oracle equivalence and matrix square root reconstruction.
#[test]
fn acceptance_3_fid_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for case in 0..20 {
        let (m1, s1) = (rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() + 0.2);
        let (m2, s2) = (rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() + 0.2);
        let a = GaussianStats {
            mean: vec![m1],
            cov: vec![s1 * s1],
            dim: 1,
        };
        let b = GaussianStats {
            mean: vec![m2],
            cov: vec![s2 * s2],
            dim: 1,
        };
        let got = fid_from_stats(&a, &b).unwrap();
        let want = (m1 - m2).powi(2) + (s1 - s2).powi(2);
        assert!((got - want).abs() < 1e-9, "case {case}: {got} vs {want}");
    }
    let d = 8;
    let n = 64;
    let x = rand_rows(&mut rng, n, d);
    let y = rand_rows(&mut rng, n, d);
    assert!(fid(&x, &x, d).unwrap() <= 1e-8, "fid(X,X) not ~0");
    let fxy = fid(&x, &y, d).unwrap();
    let fyx = fid(&y, &x, d).unwrap();
    assert!((fxy - fyx).abs() < 1e-8, "fid asymmetry {fxy} vs {fyx}");
    // PSD matrix from a random factor; sqrt must reconstruct it
    let f = rand_rows(&mut rng, d, d);
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                m[i * d + j] += f[i * d + k] * f[j * d + k];
            }
        }
    }
    let s = matrix_sqrt_psd(&m, d).unwrap();
    let mut rebuilt = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                rebuilt[i * d + j] += s[i * d + k] * s[k * d + j];
            }
        }
    }
    let num: f64 = rebuilt
        .iter()
        .zip(&m)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(num / den < 1e-10, "sqrt reconstruction rel err {}", num / den);
    println!("acceptance 3 (fid oracles): PASS");
}

/// 4. R-Precision on unrelated embeddings matches chance within 3 standard
/// errors at 32-candidate pools.
#[test]
fn acceptance_4_retrieval_chance_calibration() {
    let d = 12;
    let n = 200;
    let pool = 32;
    let trials = 8; // x n samples per trial batch
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let unit_rows = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut rows = rand_rows(rng, n, d);
        for r in 0..n {
            let s: f64 = rows[r * d..(r + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut rows[r * d..(r + 1) * d] {
                *v /= s;
            }
        }
        rows
    };
    let mut sums = [0.0f64; 3];
    let reps = 10usize;
    for rep in 0..reps {
        // fresh embeddings per repetition keep the trials independent
        let motions = unit_rows(&mut rng);
        let texts = unit_rows(&mut rng);
        let (t1, t2, t3) = r_precision(&motions, &texts, d, pool, trials, 900 + rep as u64).unwrap();
        sums[0] += t1;
        sums[1] += t2;
        sums[2] += t3;
    }
    let total_trials = (reps * trials * n) as f64;
    assert!(total_trials >= 1000.0);
    for (k, sum) in sums.iter().enumerate() {
        let mean = sum / reps as f64;
        let p = (k + 1) as f64 / pool as f64;
        let se = (p * (1.0 - p) / total_trials).sqrt();
        assert!(
            (mean - p).abs() < 3.0 * se,
            "top{} {} vs chance {} (3se {})",
            k + 1,
            mean,
            p,
            3.0 * se
        );
    }
    println!("acceptance 4 (retrieval chance calibration): PASS");
}

/// 5. End-to-end toy training at the default configuration reaches held-out
/// top1 >= 0.8 against 32-candidate pools, averaged over 20 seeded runs,
/// within ten minutes.
#[test]
fn acceptance_5_end_to_end_training() {
    let start = Instant::now();
    let pairs = generate_dataset(&DatasetConfig::default()).unwrap();
    let tcfg = TrainConfig::default();
    assert_eq!(tcfg.total_epochs, 10);
    assert_eq!(tcfg.freeze_epochs, 7);
    assert_eq!(tcfg.batch_size, 32);
    let ecfg = EncoderConfig::default();
    assert_eq!(ecfg.dim, 64);
    let mut tr = Trainer::new(tcfg, ecfg, Skeleton::toy14(), &pairs).unwrap();
    tr.train(&pairs, |_| {}).unwrap();
    let val: Vec<_> = pairs.iter().filter(|p| p.split == Split::Val).collect();
    let motions: Vec<_> = val.iter().map(|p| &p.motion).collect();
    let texts: Vec<&str> = val.iter().map(|p| p.text.as_str()).collect();
    let mf = embed_motions(&tr, &motions).unwrap();
    let tf = embed_texts(&tr, &texts).unwrap();
    let runs = 20;
    let mut mean_top1 = 0.0;
    for run in 0..runs {
        let (t1, _, _) = r_precision(&mf, &tf, tr.encoder.dim, 32, 5, mix(5150, run)).unwrap();
        mean_top1 += t1 / runs as f64;
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 600,
        "end-to-end run took {elapsed:?}, budget 10 min"
    );
    assert!(
        mean_top1 >= 0.8,
        "val top1 {mean_top1:.3} below 0.8 (chance 0.031)"
    );
    println!(
        "acceptance 5 (end-to-end training): PASS (top1 {mean_top1:.3} over {runs} runs, {elapsed:?})"
    );
}

/// 6. Phase-1 distill losses are ~0 and the teacher is bit-unchanged.
#[test]
fn acceptance_6_frozen_phase_invariant() {
    let pairs = small_dataset(21);
    let mut tr = Trainer::new(small_train(5), small_encoder(), Skeleton::toy14(), &pairs).unwrap();
    let teacher_before: Vec<(String, Vec<f64>)> = tr
        .store
        .iter()
        .filter(|(n, _)| n.starts_with("text_teacher."))
        .map(|(n, p)| (n.clone(), p.tensor.values.clone()))
        .collect();
    assert!(!teacher_before.is_empty());
    let logs = tr.train(&pairs, |_| {}).unwrap();
    for log in logs.iter().filter(|l| l.phase == 1) {
        let d = log.distill.expect("distill term logged");
        assert!(d.abs() <= 1e-12, "phase-1 distill {d} at epoch {}", log.epoch);
    }
    assert!(logs.iter().any(|l| l.phase == 2));
    for (name, before) in &teacher_before {
        let after = &tr.store.get(name).unwrap().tensor.values;
        assert!(
            before.iter().zip(after.iter()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "teacher parameter {name} changed"
        );
    }
    println!("acceptance 6 (frozen-phase invariant): PASS");
}

/// 7. Distillation pulls the student toward the teacher: tether MSE at
/// lambda=1.0 is strictly below lambda=0.0 under the same seed, and the full
/// lambda sweep emits a complete table.
#[test]
fn acceptance_7_tethering_direction() {
    let pairs = small_dataset(33);
    let val_texts: Vec<&str> = pairs
        .iter()
        .filter(|p| p.split == Split::Val)
        .map(|p| p.text.as_str())
        .collect();
    let mut rows = Vec::new();
    for lambda in [0.0, 0.2, 0.4, 0.6, 0.8, 1.0] {
        let cfg = TrainConfig {
            lambda_distill: lambda,
            ..small_train(7)
        };
        let mut tr = Trainer::new(cfg, small_encoder(), Skeleton::toy14(), &pairs).unwrap();
        tr.train(&pairs, |_| {}).unwrap();
        let val: Vec<_> = pairs.iter().filter(|p| p.split == Split::Val).collect();
        let motions: Vec<_> = val.iter().map(|p| &p.motion).collect();
        let mf = embed_motions(&tr, &motions).unwrap();
        let tf = embed_texts(&tr, &val_texts).unwrap();
        let (t1, t2, t3) = r_precision(&mf, &tf, tr.encoder.dim, 8, 10, 64).unwrap();
        let f = fid(&mf, &tf, tr.encoder.dim).unwrap();
        let mm = moclip_core::metrics::mm_dist(&mf, &tf, tr.encoder.dim).unwrap();
        let div = moclip_core::metrics::diversity(&mf, tr.encoder.dim, None, 64).unwrap();
        let tether = tether_mse(&tr, &val_texts).unwrap();
        rows.push(serde_json::json!({
            "setting": format!("lambda={lambda}"),
            "top1": t1, "top2": t2, "top3": t3,
            "fid": f, "mm_dist": mm, "diversity": div,
            "tether_mse": tether,
        }));
    }
    assert_eq!(rows.len(), 6);
    for row in &rows {
        for key in ["setting", "top1", "top2", "top3", "fid", "mm_dist", "diversity"] {
            assert!(row.get(key).is_some(), "missing column {key}");
        }
    }
    let mse_at = |i: usize| rows[i]["tether_mse"].as_f64().unwrap();
    let (loose, tight) = (mse_at(0), mse_at(5));
    assert!(
        tight < loose,
        "tether mse at lambda=1.0 ({tight}) not below lambda=0.0 ({loose})"
    );
    println!(
        "acceptance 7 (tethering direction): PASS (mse {tight:.5} < {loose:.5}, 6-row sweep)"
    );
}

/// 8. Architectural toggles behave: the limb-local mask is a strict subset
/// of the full mask; without positional encodings frame order is irrelevant;
/// with them a reversed walk is distinguishable.
#[test]
fn acceptance_8_ablation_behaviors() {
    let skeleton = Skeleton::toy14();
    let full = attention_mask(&skeleton, true);
    let local = attention_mask(&skeleton, false);
    assert_eq!(full.len(), local.len());
    assert!(local.iter().zip(&full).all(|(l, f)| !*l || *f));
    assert!(local.iter().zip(&full).any(|(l, f)| !*l && *f));

    let mut store = moclip_core::params::ParamStore::new();
    let frames = 8;
    let motion = generate_motion("walk", &skeleton, frames, 17).unwrap();
    let mut shuffled = motion.clone();
    let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
    let stride = motion.joints * 3;
    for (dst, &src) in perm.iter().enumerate() {
        shuffled.positions[dst * stride..(dst + 1) * stride]
            .copy_from_slice(&motion.positions[src * stride..(src + 1) * stride]);
    }
    let mut reversed = motion.clone();
    for t in 0..frames {
        reversed.positions[t * stride..(t + 1) * stride]
            .copy_from_slice(&motion.positions[(frames - 1 - t) * stride..(frames - t) * stride]);
    }
    let embed = |store: &moclip_core::params::ParamStore,
                 cfg: &EncoderConfig,
                 m: &moclip_core::motion::MotionSequence| {
        let mut tape = moclip_core::autodiff::Tape::new();
        let bound = bind_params(store, &mut tape, &|_| false);
        let (_, z) = motion_encode(&mut tape, &bound, cfg, &skeleton, m).unwrap();
        tape.values(z).to_vec()
    };
    let mut cfg = small_encoder();
    cfg.positional_encoding = false;
    moclip_core::encoder::init_motion_encoder(&mut store, &cfg, &skeleton, 13);
    let base = embed(&store, &cfg, &motion);
    let shuf = embed(&store, &cfg, &shuffled);
    let max_diff = base
        .iter()
        .zip(&shuf)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_diff <= 1e-9, "shuffle moved the embedding by {max_diff}");
    cfg.positional_encoding = true;
    let base_pe = embed(&store, &cfg, &motion);
    let rev_pe = embed(&store, &cfg, &reversed);
    let dist: f64 = base_pe
        .iter()
        .zip(&rev_pe)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(dist > 1e-3, "reversed walk indistinct: {dist}");
    println!("acceptance 8 (ablation behaviors): PASS");
}

/// 9. Same-seed training is bit-identical and save/load/resume matches an
/// uninterrupted run.
#[test]
fn acceptance_9_determinism() {
    let pairs = small_dataset(55);
    let run = || {
        let mut tr =
            Trainer::new(small_train(9), small_encoder(), Skeleton::toy14(), &pairs).unwrap();
        let logs = tr.train(&pairs, |_| {}).unwrap();
        (encode_checkpoint(&tr).unwrap(), logs)
    };
    let (bytes_a, logs_a) = run();
    let (bytes_b, _) = run();
    assert_eq!(bytes_a, bytes_b, "same-seed checkpoints differ");

    // interrupt after two epochs, round-trip through bytes, finish
    let mut head =
        Trainer::new(small_train(9), small_encoder(), Skeleton::toy14(), &pairs).unwrap();
    let mut cfg_head = head.config.clone();
    cfg_head.total_epochs = 2;
    cfg_head.freeze_epochs = 2;
    head.config = cfg_head;
    head.train(&pairs, |_| {}).unwrap();
    let bytes = encode_checkpoint(&head).unwrap();
    let mut resumed = moclip_core::trainer::decode_checkpoint(&bytes).unwrap();
    resumed.config = small_train(9);
    let tail_logs = resumed.train(&pairs, |_| {}).unwrap();
    for log in &tail_logs {
        let reference = logs_a
            .iter()
            .find(|l| l.epoch == log.epoch)
            .expect("matching epoch in uninterrupted run");
        assert!(
            (log.total - reference.total).abs() <= 1e-12,
            "epoch {} loss drifted: {} vs {}",
            log.epoch,
            log.total,
            reference.total
        );
    }
    println!("acceptance 9 (determinism): PASS");
}
