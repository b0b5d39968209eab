//! Skeleton topology and attention-mask construction, including the
//! cross-limb edges between end effectors.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Labeled end-effector joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndEffectors {
    pub left_hand: usize,
    pub right_hand: usize,
    pub left_foot: usize,
    pub right_foot: usize,
}

impl EndEffectors {
    pub fn as_array(&self) -> [usize; 4] {
        [self.left_hand, self.right_hand, self.left_foot, self.right_foot]
    }
}

/// Joint tree with rest-pose offsets. Parent of the root is the root itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Skeleton {
    pub name: String,
    pub joint_names: Vec<String>,
    pub parents: Vec<usize>,
    pub end_effectors: EndEffectors,
    /// Rest offset from the parent joint, meters. The root's offset is its
    /// base position in world space.
    pub offsets: Vec<[f64; 3]>,
}

impl Skeleton {
    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count();
        if j == 0 || self.parents.len() != j || self.offsets.len() != j {
            return Err(Error::Config("skeleton: field lengths disagree".into()));
        }
        if self.parents[0] != 0 {
            return Err(Error::Config("skeleton: joint 0 must be the root".into()));
        }
        // every joint walks up to the root without cycles
        for start in 0..j {
            let mut cur = start;
            for _ in 0..=j {
                if cur == 0 {
                    break;
                }
                let p = self.parents[cur];
                if p >= j || p == cur {
                    return Err(Error::Config(format!(
                        "skeleton: joint {cur} has invalid parent {p}"
                    )));
                }
                cur = p;
            }
            if cur != 0 {
                return Err(Error::Config(format!(
                    "skeleton: joint {start} does not reach the root"
                )));
            }
        }
        let ee = self.end_effectors.as_array();
        for (i, &a) in ee.iter().enumerate() {
            if a >= j {
                return Err(Error::Config(format!("skeleton: end effector {a} out of range")));
            }
            for &b in &ee[i + 1..] {
                if a == b {
                    return Err(Error::Config("skeleton: end effectors must be distinct".into()));
                }
            }
            // end effectors are leaves
            if self.parents.iter().enumerate().any(|(c, &p)| p == a && c != a) {
                return Err(Error::Config(format!("skeleton: end effector {a} is not a leaf")));
            }
        }
        Ok(())
    }

    /// left_* <-> right_* joint pairing derived from joint names.
    pub fn mirror_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (i, name) in self.joint_names.iter().enumerate() {
            if let Some(rest) = name.strip_prefix("left_") {
                let twin = format!("right_{rest}");
                if let Some(ji) = self.joint_names.iter().position(|n| *n == twin) {
                    pairs.push((i, ji));
                }
            }
        }
        pairs
    }

    /// Default desk-scale skeleton: 14 joints, knees parented directly to
    /// the root.
    pub fn toy14() -> Skeleton {
        let joints: [(&str, usize, [f64; 3]); 14] = [
            ("root", 0, [0.0, 0.9, 0.0]),
            ("spine", 0, [0.0, 0.35, 0.0]),
            ("neck", 1, [0.0, 0.25, 0.0]),
            ("head", 2, [0.0, 0.18, 0.0]),
            ("left_shoulder", 1, [0.22, 0.2, 0.0]),
            ("left_elbow", 4, [0.28, 0.0, 0.0]),
            ("left_hand", 5, [0.26, 0.0, 0.0]),
            ("right_shoulder", 1, [-0.22, 0.2, 0.0]),
            ("right_elbow", 7, [-0.28, 0.0, 0.0]),
            ("right_hand", 8, [-0.26, 0.0, 0.0]),
            ("left_knee", 0, [0.12, -0.45, 0.0]),
            ("left_foot", 10, [0.0, -0.45, 0.0]),
            ("right_knee", 0, [-0.12, -0.45, 0.0]),
            ("right_foot", 12, [0.0, -0.45, 0.0]),
        ];
        let sk = Skeleton {
            name: "toy14".into(),
            joint_names: joints.iter().map(|(n, _, _)| n.to_string()).collect(),
            parents: joints.iter().map(|(_, p, _)| *p).collect(),
            end_effectors: EndEffectors {
                left_hand: 6,
                right_hand: 9,
                left_foot: 11,
                right_foot: 13,
            },
            offsets: joints.iter().map(|(_, _, o)| *o).collect(),
        };
        sk.validate().expect("toy14 skeleton is well formed");
        sk
    }
}

/// Boolean J-by-J spatial attention mask: self edges, parent/child edges,
/// and, when `cross_limb` is set, full mutual connectivity among the four
/// end effectors.
pub fn attention_mask(skeleton: &Skeleton, cross_limb: bool) -> Vec<bool> {
    let j = skeleton.joint_count();
    let mut mask = vec![false; j * j];
    for i in 0..j {
        mask[i * j + i] = true;
        let p = skeleton.parents[i];
        if p != i {
            mask[i * j + p] = true;
            mask[p * j + i] = true;
        }
    }
    if cross_limb {
        let ee = skeleton.end_effectors.as_array();
        for &a in &ee {
            for &b in &ee {
                mask[a * j + b] = true;
            }
        }
    }
    mask
}
