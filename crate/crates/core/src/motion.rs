//! Procedural motion generation: sinusoid joint-angle animations converted
//! to joint positions by forward kinematics. Deterministic in
//! (class, frames, seed); right-sided classes are exact mirrors of their
//! left-sided twins under the same seed.

use crate::error::{Error, Result};
use crate::skeleton::Skeleton;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MOTION_CLASSES: [&str; 8] = [
    "walk", "jump", "wave_left", "wave_right", "kick_left", "kick_right", "clap", "spin",
];

/// T frames by J joints by 3 coordinates, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub frames: usize,
    pub joints: usize,
    pub positions: Vec<f64>,
    pub class_label: String,
    pub seed: u64,
}

impl MotionSequence {
    pub fn position(&self, frame: usize, joint: usize) -> [f64; 3] {
        let base = (frame * self.joints + joint) * 3;
        [
            self.positions[base],
            self.positions[base + 1],
            self.positions[base + 2],
        ]
    }
}

/// Seed-derived style parameters. The two quantized bits are observable in
/// the motion (tempo and amplitude) and drive the caption wording, so text
/// and motion stay mutually informative at the instance level.
#[derive(Debug, Clone, Copy)]
pub struct MotionStyle {
    pub fast: bool,
    pub strong: bool,
    pub phase: f64,
    pub amp_jitter: f64,
}

impl MotionStyle {
    pub fn from_seed(seed: u64) -> MotionStyle {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5479_4c45));
        MotionStyle {
            fast: rng.gen::<bool>(),
            strong: rng.gen::<bool>(),
            phase: rng.gen::<f64>() * std::f64::consts::TAU,
            amp_jitter: 1.0 + (rng.gen::<f64>() - 0.5) * 0.1,
        }
    }

    fn freq(&self) -> f64 {
        if self.fast {
            2.5
        } else {
            0.8
        }
    }

    fn amp(&self) -> f64 {
        (if self.strong { 1.6 } else { 0.7 }) * self.amp_jitter
    }
}

/// SplitMix64-style seed derivation; all component seeds flow from one
/// top-level seed through tagged splits.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
    Z,
}

fn rot(axis: Axis, a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    match axis {
        Axis::X => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        Axis::Y => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        Axis::Z => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

fn matmul3(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn apply3(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Per-frame pose: local rotation per joint plus a root translation offset.
struct Pose {
    local: Vec<Mat3>,
    root_shift: [f64; 3],
}

fn joint(skeleton: &Skeleton, name: &str) -> usize {
    skeleton
        .joint_names
        .iter()
        .position(|n| n == name)
        .unwrap_or(0)
}

fn pose_for(class: &str, skeleton: &Skeleton, style: &MotionStyle, u: f64) -> Pose {
    let j = skeleton.joint_count();
    let mut local = vec![IDENTITY; j];
    let mut root_shift = [0.0; 3];
    let tau = std::f64::consts::TAU;
    let w = tau * 2.0 * style.freq(); // two base cycles per clip
    let a = style.amp();
    let ph = style.phase;
    let mut set = |idx: usize, axis: Axis, angle: f64| {
        local[idx] = matmul3(&local[idx], &rot(axis, angle));
    };
    let ls = joint(skeleton, "left_shoulder");
    let rs = joint(skeleton, "right_shoulder");
    let le = joint(skeleton, "left_elbow");
    let re = joint(skeleton, "right_elbow");
    let lk = joint(skeleton, "left_knee");
    let rk = joint(skeleton, "right_knee");
    let spine = joint(skeleton, "spine");
    match class {
        "walk" => {
            let swing = a * 0.5 * (w * u + ph).sin();
            set(ls, Axis::X, swing);
            set(rs, Axis::X, -swing);
            set(lk, Axis::X, -0.9 * swing);
            set(rk, Axis::X, 0.9 * swing);
            set(spine, Axis::Z, 0.05 * (w * u + ph).sin());
            root_shift = [
                0.0,
                0.03 * a * (2.0 * w * u + ph).sin(),
                2.0 * (u - 0.5),
            ];
        }
        "jump" => {
            let cycle = (w * 0.5 * u + ph).sin();
            let crouch = a * 0.6 * cycle.min(0.0);
            let air = 0.4 * a * cycle.max(0.0);
            set(lk, Axis::X, crouch);
            set(rk, Axis::X, crouch);
            set(ls, Axis::Z, -0.8 * a * cycle.abs());
            set(rs, Axis::Z, 0.8 * a * cycle.abs());
            root_shift = [0.0, air, 0.0];
        }
        "wave_left" => {
            set(ls, Axis::Z, 1.1);
            set(le, Axis::Z, 0.4 + a * 0.5 * (w * u + ph).sin());
            set(spine, Axis::Z, 0.04 * (0.5 * w * u + ph).sin());
        }
        "kick_left" => {
            let kick = a * 0.9 * (w * u + ph).sin().max(0.0);
            set(lk, Axis::X, kick);
            set(ls, Axis::X, -0.3 * kick);
            set(rs, Axis::X, 0.3 * kick);
            root_shift = [0.0, -0.02 * a * (w * u + ph).sin().abs(), 0.0];
        }
        "clap" => {
            let close = 0.6 + a * 0.45 * (w * u + ph).sin();
            set(ls, Axis::Y, -close);
            set(rs, Axis::Y, close);
            set(le, Axis::Y, -0.5 * close);
            set(re, Axis::Y, 0.5 * close);
        }
        "spin" => {
            let turns = if style.fast { 2.0 } else { 1.0 };
            set(0, Axis::Y, tau * turns * u + ph);
            set(ls, Axis::Z, 0.3 * a);
            set(rs, Axis::Z, -0.3 * a);
            root_shift = [0.0, 0.02 * a * (w * u).sin(), 0.0];
        }
        _ => unreachable!("pose_for called with unregistered class"),
    }
    // Hurried motion leans the whole body into the movement; unhurried
    // motion stays upright. The lean gives tempo a postural signature in
    // every frame rather than only in the phase timing.
    let lean = if style.fast { 0.3 } else { -0.1 };
    local[spine] = matmul3(&rot(Axis::X, lean), &local[spine]);
    // Powerful motion is braced on a wide stance; light motion keeps the
    // feet close together. Like the lean, the stance marks the style in
    // every frame.
    let stance = if style.strong { 0.3 } else { 0.02 };
    let lk = joint(skeleton, "left_knee");
    let rk = joint(skeleton, "right_knee");
    local[lk] = matmul3(&rot(Axis::Z, stance), &local[lk]);
    local[rk] = matmul3(&rot(Axis::Z, -stance), &local[rk]);
    Pose { local, root_shift }
}

fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Vec<f64> {
    let j = skeleton.joint_count();
    let mut global_rot = vec![IDENTITY; j];
    let mut pos = vec![[0.0f64; 3]; j];
    pos[0] = [
        skeleton.offsets[0][0] + pose.root_shift[0],
        skeleton.offsets[0][1] + pose.root_shift[1],
        skeleton.offsets[0][2] + pose.root_shift[2],
    ];
    global_rot[0] = pose.local[0];
    for i in 1..j {
        let p = skeleton.parents[i];
        let world_off = apply3(&global_rot[p], skeleton.offsets[i]);
        pos[i] = [
            pos[p][0] + world_off[0],
            pos[p][1] + world_off[1],
            pos[p][2] + world_off[2],
        ];
        global_rot[i] = matmul3(&global_rot[p], &pose.local[i]);
    }
    pos.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Mirror class name for a class, when one exists ("kick_left" -> "kick_right").
pub fn mirror_class(class: &str) -> String {
    if let Some(stem) = class.strip_suffix("_left") {
        format!("{stem}_right")
    } else if let Some(stem) = class.strip_suffix("_right") {
        format!("{stem}_left")
    } else {
        class.to_string()
    }
}

/// Deterministic procedural motion. Right-sided classes are generated as
/// exact mirrors of the left-sided class under the same seed, so mirroring
/// maps one onto the other bit-for-bit.
pub fn generate_motion(class: &str, skeleton: &Skeleton, frames: usize, seed: u64) -> Result<MotionSequence> {
    if !MOTION_CLASSES.contains(&class) {
        return Err(Error::Config(format!(
            "unknown motion class '{class}'; registered classes: {}",
            MOTION_CLASSES.join(", ")
        )));
    }
    if frames == 0 {
        return Err(Error::Config("motion frames must be positive".into()));
    }
    if class.ends_with("_right") {
        let base = generate_motion(&mirror_class(class), skeleton, frames, seed)?;
        let mut mirrored = mirror_motion(&base, skeleton);
        mirrored.class_label = class.to_string();
        return Ok(mirrored);
    }
    let style = MotionStyle::from_seed(seed);
    let j = skeleton.joint_count();
    let mut positions = Vec::with_capacity(frames * j * 3);
    for t in 0..frames {
        let u = t as f64 / frames as f64;
        let pose = pose_for(class, skeleton, &style, u);
        positions.extend(forward_kinematics(skeleton, &pose));
    }
    Ok(MotionSequence {
        frames,
        joints: j,
        positions,
        class_label: class.to_string(),
        seed,
    })
}

/// Negate x coordinates and swap left/right joint trajectories. An exact
/// involution.
pub fn mirror_motion(m: &MotionSequence, skeleton: &Skeleton) -> MotionSequence {
    let j = m.joints;
    let mut out = m.positions.clone();
    for t in 0..m.frames {
        for ji in 0..j {
            out[(t * j + ji) * 3] = -out[(t * j + ji) * 3];
        }
        for &(a, b) in &skeleton.mirror_pairs() {
            for c in 0..3 {
                out.swap((t * j + a) * 3 + c, (t * j + b) * 3 + c);
            }
        }
    }
    MotionSequence {
        frames: m.frames,
        joints: j,
        positions: out,
        class_label: mirror_class(&m.class_label),
        seed: m.seed,
    }
}

/// Swap "left"/"right" word tokens in a caption.
pub fn mirror_text(caption: &str) -> String {
    caption
        .split(' ')
        .map(|tok| match tok {
            "left" => "right",
            "right" => "left",
            other => other,
        })
        .collect::<Vec<_>>()
        .join(" ")
}
