//! Deterministic synthetic motion-text dataset: caption templates, split
//! assignment, and the line-delimited dataset file format.

use crate::error::{Error, Result};
use crate::motion::{
    generate_motion, mirror_class, mirror_motion, mirror_text, mix, MotionSequence, MotionStyle,
    MOTION_CLASSES,
};
use crate::skeleton::Skeleton;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const DATASET_FORMAT_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split tag '{other}'"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct MotionTextPair {
    pub motion: MotionSequence,
    pub text: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub classes: Vec<String>,
    pub samples_per_class: usize,
    pub frames: usize,
    pub seed: u64,
    pub mirror_augment: bool,
    pub split_ratios: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: MOTION_CLASSES.iter().map(|s| s.to_string()).collect(),
            samples_per_class: 64,
            frames: 24,
            seed: 0,
            mirror_augment: false,
            split_ratios: [0.80, 0.15, 0.05],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("dataset: classes list is empty".into()));
        }
        for c in &self.classes {
            if !MOTION_CLASSES.contains(&c.as_str()) {
                return Err(Error::Config(format!(
                    "unknown motion class '{c}'; registered classes: {}",
                    MOTION_CLASSES.join(", ")
                )));
            }
        }
        if self.samples_per_class < 1 {
            return Err(Error::Config("dataset: samples_per_class must be >= 1".into()));
        }
        if self.frames < 2 {
            return Err(Error::Config("dataset: frames must be >= 2".into()));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split_ratios.iter().any(|&r| r < 0.0) {
            return Err(Error::Config(format!(
                "dataset: split ratios must be non-negative and sum to 1, got {:?}",
                self.split_ratios
            )));
        }
        Ok(())
    }
}

/// Four caption templates per left-sided or unsided class, indexed by the
/// motion's (fast, strong) style bits. Every template contains the class's
/// signature verb stem.
fn templates(class: &str) -> [&'static str; 4] {
    match class {
        "walk" => [
            "a person walks ahead at an easy relaxed unhurried pace",
            "the figure is walking forward with heavy slow deliberate powerful strides",
            "someone walks briskly taking quick light nimble little steps",
            "that man is walking very fast charging onward with huge energetic paces",
        ],
        "jump" => [
            "a person jumps gently hopping upward in a calm lazy rhythm",
            "the figure is jumping slowly driving deep powerful explosive leaps",
            "someone jumps rapidly with tiny light quick playful hops",
            "that man is jumping very fast launching huge vigorous energetic bounds",
        ],
        "wave_left" => [
            "a person waves the left hand in a soft easy lazy greeting",
            "the figure is waving the left arm slowly through wide sweeping powerful arcs",
            "someone waves the left hand rapidly with tiny quick flutters",
            "that man is waving the left arm very fast in huge vigorous sweeps",
        ],
        "kick_left" => [
            "a person kicks the left leg gently in an easy relaxed swing",
            "the figure is kicking the left leg slowly with heavy powerful force",
            "someone kicks the left leg rapidly in short quick light snaps",
            "that man is kicking the left leg very fast with huge violent swings",
        ],
        "clap" => [
            "a person claps the hands softly in an easy lazy beat",
            "the figure is clapping slowly landing heavy powerful booming strikes",
            "someone claps rapidly with tiny quick light taps",
            "that man is clapping very fast smashing huge loud vigorous beats",
        ],
        "spin" => [
            "a person spins around gently in an easy relaxed lazy turn",
            "the figure is spinning slowly sweeping a wide powerful deliberate circle",
            "someone spins around rapidly in quick tight light twirls",
            "that man is spinning very fast whirling with huge vigorous momentum",
        ],
        _ => unreachable!("templates requested for unregistered class"),
    }
}

/// Signature verb stem present in every caption of the class; retrieval
/// ground truth keys off it.
pub fn signature_stem(class: &str) -> &'static str {
    match class {
        "walk" => "walk",
        "jump" => "jump",
        "wave_left" | "wave_right" => "wav",
        "kick_left" | "kick_right" => "kick",
        "clap" => "clap",
        "spin" => "spin",
        _ => "",
    }
}

/// Caption deterministically tied to the seed's style bits, mirroring the
/// text for right-sided classes.
pub fn caption_for(class: &str, seed: u64) -> String {
    if class.ends_with("_right") {
        return mirror_text(&caption_for(&mirror_class(class), seed));
    }
    let style = MotionStyle::from_seed(seed);
    let idx = (style.fast as usize) * 2 + style.strong as usize;
    templates(class)[idx].to_string()
}

/// Split sizes: train rounds to nearest, val floors, test takes the
/// remainder.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> (usize, usize, usize) {
    let train = (n as f64 * ratios[0]).round() as usize;
    let val = (n as f64 * ratios[1]).floor() as usize;
    let train = train.min(n);
    let val = val.min(n - train);
    (train, val, n - train - val)
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<MotionTextPair>> {
    cfg.validate()?;
    let skeleton = Skeleton::toy14();
    let mut pairs = Vec::new();
    for (ci, class) in cfg.classes.iter().enumerate() {
        for k in 0..cfg.samples_per_class {
            let seed = mix(cfg.seed, ((ci as u64) << 32) | k as u64);
            let motion = generate_motion(class, &skeleton, cfg.frames, seed)?;
            let text = caption_for(class, seed);
            pairs.push(MotionTextPair {
                motion,
                text,
                split: Split::Train,
            });
            if cfg.mirror_augment {
                let base = pairs.last().unwrap();
                let motion = mirror_motion(&base.motion, &skeleton);
                let text = mirror_text(&base.text);
                pairs.push(MotionTextPair {
                    motion,
                    text,
                    split: Split::Train,
                });
            }
        }
    }
    let n = pairs.len();
    let (train_n, val_n, _) = split_sizes(n, cfg.split_ratios);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x53504c49));
    order.shuffle(&mut rng);
    for (rank, &idx) in order.iter().enumerate() {
        pairs[idx].split = if rank < train_n {
            Split::Train
        } else if rank < train_n + val_n {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(pairs)
}

pub fn save_dataset<W: Write>(pairs: &[MotionTextPair], skeleton_name: &str, mut w: W) -> Result<()> {
    writeln!(w, "moclip-dataset\t{DATASET_FORMAT_VERSION}\t{skeleton_name}")?;
    for p in pairs {
        let positions: Vec<String> = p.motion.positions.iter().map(|v| format!("{v}")).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.motion.class_label,
            p.text,
            p.split,
            p.motion.seed,
            p.motion.frames,
            p.motion.joints,
            positions.join(" ")
        )?;
    }
    Ok(())
}

pub fn save_dataset_file(pairs: &[MotionTextPair], skeleton_name: &str, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    save_dataset(pairs, skeleton_name, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset<R: std::io::Read>(r: R) -> Result<(Vec<MotionTextPair>, String)> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("dataset file is empty".into()))??;
    let head: Vec<&str> = header.split('\t').collect();
    if head.len() != 3 || head[0] != "moclip-dataset" {
        return Err(Error::Format("bad dataset header".into()));
    }
    if head[1] != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version '{}'",
            head[1]
        )));
    }
    let skeleton_name = head[2].to_string();
    let mut pairs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::Format(format!(
                "dataset line {}: expected 7 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_err = |what: &str| Error::Format(format!("dataset line {}: bad {what}", lineno + 2));
        let seed: u64 = fields[3].parse().map_err(|_| parse_err("seed"))?;
        let frames: usize = fields[4].parse().map_err(|_| parse_err("frame count"))?;
        let joints: usize = fields[5].parse().map_err(|_| parse_err("joint count"))?;
        let positions: Vec<f64> = fields[6]
            .split(' ')
            .map(|s| s.parse::<f64>().map_err(|_| parse_err("position value")))
            .collect::<Result<_>>()?;
        if positions.len() != frames * joints * 3 {
            return Err(Error::Format(format!(
                "dataset line {}: position count {} does not match {}x{}x3",
                lineno + 2,
                positions.len(),
                frames,
                joints
            )));
        }
        if fields[1].is_empty() {
            return Err(Error::Format(format!("dataset line {}: empty caption", lineno + 2)));
        }
        pairs.push(MotionTextPair {
            motion: MotionSequence {
                frames,
                joints,
                positions,
                class_label: fields[0].to_string(),
                seed,
            },
            text: fields[1].to_string(),
            split: Split::parse(fields[2])?,
        });
    }
    Ok((pairs, skeleton_name))
}

pub fn load_dataset_file(path: &Path) -> Result<(Vec<MotionTextPair>, String)> {
    load_dataset(std::fs::File::open(path)?)
}
