//! Skeleton topology and pose sequences of joint direction vectors.

use std::fmt::Write as _;
use std::path::Path;

use hop_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{HopError, Result};

/// Direction-vector nodes with their parent node (`-1` for the root) and the
/// rest direction used when a generated vector collapses to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    pub parents: Vec<i64>,
    pub rest: Vec<[f64; 3]>,
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

impl Skeleton {
    /// Upper-body tree of the TED gesture data: spine, head and both arms.
    pub fn ted() -> Self {
        let nodes: [(&str, i64, [f64; 3]); 9] = [
            ("spine_neck", -1, [0.0, 1.0, 0.0]),
            ("neck_nose", 0, [0.0, 0.8, 0.6]),
            ("nose_head", 1, [0.0, 1.0, 0.0]),
            ("neck_rshoulder", 0, [-1.0, 0.0, 0.0]),
            ("rshoulder_relbow", 3, [-0.2, -1.0, 0.1]),
            ("relbow_rwrist", 4, [0.0, -0.4, 0.9]),
            ("neck_lshoulder", 0, [1.0, 0.0, 0.0]),
            ("lshoulder_lelbow", 6, [0.2, -1.0, 0.1]),
            ("lelbow_lwrist", 7, [0.0, -0.4, 0.9]),
        ];
        Skeleton {
            names: nodes.iter().map(|n| n.0.to_string()).collect(),
            parents: nodes.iter().map(|n| n.1).collect(),
            rest: nodes.iter().map(|n| unit(n.2)).collect(),
        }
    }

    /// The TED tree plus eyes and head top, and three segments for each
    /// finger of both hands: 42 nodes.
    pub fn ted_expressive() -> Self {
        let mut s = Skeleton::ted();
        for (name, parent, dir) in [
            ("nose_reye", 1, [-0.5, 0.5, 0.7]),
            ("nose_leye", 1, [0.5, 0.5, 0.7]),
            ("head_top", 2, [0.0, 1.0, -0.2]),
        ] {
            s.names.push(name.into());
            s.parents.push(parent);
            s.rest.push(unit(dir));
        }
        for (side, wrist, sign) in [("r", 5i64, -1.0), ("l", 8i64, 1.0)] {
            for (f, finger) in ["thumb", "index", "middle", "ring", "little"]
                .iter()
                .enumerate()
            {
                let mut parent = wrist;
                let spread = sign * (f as f64 - 1.5) * 0.25;
                for seg in 0..3 {
                    s.names.push(format!("{side}{finger}{seg}"));
                    s.parents.push(parent);
                    s.rest.push(unit([spread, -0.3, 1.0]));
                    parent = s.names.len() as i64 - 1;
                }
            }
        }
        s
    }

    pub fn joints(&self) -> usize {
        self.names.len()
    }

    /// Index bounds, a single root and every node reaching it.
    pub fn validate(&self) -> Result<()> {
        let j = self.names.len();
        let bad = |msg: String| Err(HopError::Config(format!("skeleton: {msg}")));
        if j == 0 {
            return bad("no nodes".into());
        }
        if self.parents.len() != j || self.rest.len() != j {
            return bad(format!(
                "{} names, {} parents and {} rest directions must agree",
                j,
                self.parents.len(),
                self.rest.len()
            ));
        }
        if self.parents.iter().filter(|&&p| p < 0).count() != 1 {
            return bad("exactly one node must have parent -1".into());
        }
        if let Some((i, p)) = self
            .parents
            .iter()
            .enumerate()
            .find(|(i, &p)| p >= j as i64 || p == *i as i64 || p < -1)
        {
            return bad(format!("node {i} has invalid parent {p}"));
        }
        for start in 0..j {
            let mut node = start as i64;
            let mut steps = 0;
            while node >= 0 {
                node = self.parents[node as usize];
                steps += 1;
                if steps > j {
                    return bad(format!("node {start} does not reach the root"));
                }
            }
        }
        for (i, r) in self.rest.iter().enumerate() {
            let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return bad(format!("rest direction of node {i} is not unit length"));
            }
        }
        Ok(())
    }

    /// Symmetric 0/1 adjacency of the tree with self-loops.
    pub fn adjacency(&self) -> Tensor {
        let j = self.joints();
        let mut a = Tensor::eye(j).expect("at least one node");
        for (i, &p) in self.parents.iter().enumerate() {
            if p >= 0 {
                let p = p as usize;
                a.data_mut()[i * j + p] = 1.0;
                a.data_mut()[p * j + i] = 1.0;
            }
        }
        a
    }

    pub fn rest_flat(&self) -> Vec<f64> {
        self.rest.iter().flatten().copied().collect()
    }
}

/// Per-frame unit direction vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub fps: f64,
    pub joints: Vec<String>,
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl PoseSequence {
    /// From a `T × J × 3` or `T × (J·3)` tensor.
    pub fn from_tensor(t: &Tensor, fps: f64, joints: Vec<String>) -> Result<Self> {
        let j = joints.len();
        if j == 0 || !t.numel().is_multiple_of(j * 3) || t.shape()[0] * j * 3 != t.numel() {
            return Err(HopError::param(
                "pose_sequence",
                format!("tensor {:?} does not hold frames of {j} joints", t.shape()),
            ));
        }
        let frames = t
            .data()
            .chunks(j * 3)
            .map(|f| f.chunks(3).map(|v| [v[0], v[1], v[2]]).collect())
            .collect();
        Ok(PoseSequence {
            fps,
            joints,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// `T × (J·3)`
    pub fn to_matrix(&self) -> Tensor {
        let j = self.num_joints();
        Tensor::new([self.num_frames(), j * 3], self.flat()).expect("validated frames")
    }

    /// `T × J × 3`
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.num_frames(), self.num_joints(), 3], self.flat())
            .expect("validated frames")
    }

    pub fn flat(&self) -> Vec<f64> {
        self.frames.iter().flatten().flatten().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() || self.joints.is_empty() {
            return Err(HopError::Dataset("pose sequence is empty".into()));
        }
        if !(self.fps > 0.0) {
            return Err(HopError::Dataset("pose fps must be positive".into()));
        }
        if let Some(t) = self
            .frames
            .iter()
            .position(|f| f.len() != self.joints.len())
        {
            return Err(HopError::Dataset(format!(
                "frame {t} has {} joints, expected {}",
                self.frames[t].len(),
                self.joints.len()
            )));
        }
        if self
            .frames
            .iter()
            .flatten()
            .flatten()
            .any(|x| !x.is_finite())
        {
            return Err(HopError::Dataset("pose holds non-finite values".into()));
        }
        Ok(())
    }

    /// Largest deviation of any direction vector from unit length.
    pub fn max_norm_error(&self) -> f64 {
        self.frames
            .iter()
            .flatten()
            .map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Frames `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> PoseSequence {
        PoseSequence {
            fps: self.fps,
            joints: self.joints.clone(),
            frames: self.frames[start..start + len].to_vec(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PoseSequence = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| HopError::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HopError::io(path, e))?;
        Self::from_json(&text)
    }

    /// One frame per row, columns `<joint>_x,<joint>_y,<joint>_z`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self
            .joints
            .iter()
            .flat_map(|j| ["x", "y", "z"].map(|a| format!("{j}_{a}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for frame in &self.frames {
            let mut first = true;
            for v in frame.iter().flatten() {
                if !first {
                    out.push(',');
                }
                first = false;
                write!(out, "{v:?}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeletons_are_valid() {
        let ted = Skeleton::ted();
        ted.validate().unwrap();
        assert_eq!(ted.joints(), 9);
        let expressive = Skeleton::ted_expressive();
        expressive.validate().unwrap();
        assert_eq!(expressive.joints(), 42);
    }

    #[test]
    fn adjacency_is_symmetric_with_self_loops() {
        let a = Skeleton::ted().adjacency();
        let j = 9;
        for r in 0..j {
            assert_eq!(a.get(&[r, r]), 1.0);
            for c in 0..j {
                assert_eq!(a.get(&[r, c]), a.get(&[c, r]));
            }
        }
        assert_eq!(a.get(&[4, 5]), 1.0);
        assert_eq!(a.get(&[1, 4]), 0.0);
    }

    #[test]
    fn cycles_and_bad_indices_are_rejected() {
        let mut s = Skeleton::ted();
        s.parents[1] = 2;
        s.parents[2] = 1;
        assert!(s.validate().is_err());
        let mut s = Skeleton::ted();
        s.parents[3] = 40;
        assert!(s.validate().is_err());
    }
}
