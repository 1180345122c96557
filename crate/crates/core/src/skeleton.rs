//! Pose-sequence data model, skeleton topology and kinematic primitives.
//!
//! A [`PoseSequence`] is a `T x J x 3` array of absolute joint positions in
//! meters together with a per-frame validity mask. The skeleton tree is
//! described by a [`SkeletonTopology`]; limb `k` is the segment between the
//! `k`-th non-root joint (in index order) and its parent.

use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the bundled 17-joint Human3.6M preset.
pub const H36M17: &str = "h36m17";

const H36M_PARENTS: [i64; 17] = [-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15];

const H36M_NAMES: [&str; 17] = [
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

const H36M_PAIRS: [(usize, usize); 6] = [(1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16)];

/// Rest-pose offsets of each joint relative to its parent (y up, +x towards
/// the subject's left), in meters. Used by the synthetic motion generator.
pub(crate) const H36M_REST_OFFSETS: [[f64; 3]; 17] = [
    [0.0, 0.0, 0.0],
    [-0.13, 0.0, 0.0],
    [0.0, -0.45, 0.0],
    [0.0, -0.44, 0.0],
    [0.13, 0.0, 0.0],
    [0.0, -0.45, 0.0],
    [0.0, -0.44, 0.0],
    [0.0, 0.23, 0.0],
    [0.0, 0.25, 0.0],
    [0.0, 0.11, 0.02],
    [0.0, 0.12, 0.0],
    [0.16, -0.02, 0.0],
    [0.0, -0.28, 0.0],
    [0.0, -0.25, 0.0],
    [-0.16, -0.02, 0.0],
    [0.0, -0.28, 0.0],
    [0.0, -0.25, 0.0],
];

/// Joint tree of a skeleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct SkeletonTopology {
    parents: Vec<Option<usize>>,
    names: Option<Vec<String>>,
    left_right_pairs: Vec<(usize, usize)>,
    lateral_axis: usize,
    root: usize,
    /// Child joint of each limb, in joint-index order.
    limbs: Vec<usize>,
}

/// On-disk form of a topology. The parent sentinel is `-1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    pub joint_count: usize,
    pub parent_of: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(default)]
    pub left_right_pairs: Vec<[usize; 2]>,
    #[serde(default)]
    pub lateral_axis: usize,
}

impl TryFrom<TopologyFile> for SkeletonTopology {
    type Error = Error;

    fn try_from(file: TopologyFile) -> Result<Self> {
        if file.parent_of.len() != file.joint_count {
            return Err(Error::Topology(format!(
                "joint_count is {} but parent_of has {} entries",
                file.joint_count,
                file.parent_of.len()
            )));
        }
        let parents = file
            .parent_of
            .iter()
            .enumerate()
            .map(|(j, &p)| match p {
                -1 => Ok(None),
                p if p >= 0 && (p as usize) < file.joint_count => Ok(Some(p as usize)),
                p => Err(Error::Topology(format!("joint {j} has out-of-range parent {p}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs = file.left_right_pairs.iter().map(|p| (p[0], p[1])).collect();
        SkeletonTopology::new(parents, file.names, pairs)?.with_lateral_axis(file.lateral_axis)
    }
}

impl From<SkeletonTopology> for TopologyFile {
    fn from(topo: SkeletonTopology) -> Self {
        TopologyFile {
            joint_count: topo.joint_count(),
            parent_of: topo
                .parents
                .iter()
                .map(|p| p.map_or(-1, |p| p as i64))
                .collect(),
            names: topo.names,
            left_right_pairs: topo.left_right_pairs.iter().map(|&(a, b)| [a, b]).collect(),
            lateral_axis: topo.lateral_axis,
        }
    }
}

impl SkeletonTopology {
    /// Builds and validates a topology: exactly one root, every joint reaches
    /// the root without cycles, and left/right pairs are disjoint.
    pub fn new(
        parents: Vec<Option<usize>>,
        names: Option<Vec<String>>,
        left_right_pairs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::Topology("joint_count must be positive".into()));
        }
        let roots: Vec<usize> = (0..n).filter(|&j| parents[j].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Topology(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        for (j, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::Topology(format!("joint {j} has out-of-range parent {p}")));
                }
            }
        }
        // Every joint must reach the root in fewer than n steps.
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parents[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::Topology(format!("cycle through joint {start}")));
                }
            }
        }
        if let Some(names) = &names {
            if names.len() != n {
                return Err(Error::Topology(format!(
                    "{} names given for {n} joints",
                    names.len()
                )));
            }
        }
        let mut seen = vec![false; n];
        for &(a, b) in &left_right_pairs {
            if a >= n || b >= n || a == b {
                return Err(Error::Topology(format!("invalid left/right pair ({a}, {b})")));
            }
            if seen[a] || seen[b] {
                return Err(Error::Topology(format!(
                    "left/right pair ({a}, {b}) overlaps another pair"
                )));
            }
            seen[a] = true;
            seen[b] = true;
        }
        let limbs = (0..n).filter(|&j| parents[j].is_some()).collect();
        Ok(Self {
            parents,
            names,
            left_right_pairs,
            lateral_axis: 0,
            root: roots[0],
            limbs,
        })
    }

    pub fn with_lateral_axis(mut self, axis: usize) -> Result<Self> {
        if axis > 2 {
            return Err(Error::Topology(format!("lateral axis {axis} is not in 0..3")));
        }
        self.lateral_axis = axis;
        Ok(self)
    }

    /// The 17-joint Human3.6M skeleton rooted at the pelvis.
    pub fn h36m17() -> Self {
        let parents = H36M_PARENTS
            .iter()
            .map(|&p| if p < 0 { None } else { Some(p as usize) })
            .collect();
        let names = H36M_NAMES.iter().map(|s| s.to_string()).collect();
        Self::new(parents, Some(names), H36M_PAIRS.to_vec()).expect("preset topology is valid")
    }

    /// Resolves a bundled preset name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            H36M17 => Ok(Self::h36m17()),
            other => Err(Error::Topology(format!("unknown topology preset {other:?}"))),
        }
    }

    /// Loads a topology from a TOML file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TopologyFile =
            toml::from_str(text).map_err(|e| Error::Topology(e.to_string()))?;
        file.try_into()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&TopologyFile::from(self.clone())).expect("topology serializes")
    }

    /// Accepts either a preset name or a path to a topology file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match Self::preset(spec) {
            Ok(t) => Ok(t),
            Err(_) if Path::new(spec).exists() => Self::from_file(Path::new(spec)),
            Err(e) => Err(e),
        }
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn limb_count(&self) -> usize {
        self.limbs.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn left_right_pairs(&self) -> &[(usize, usize)] {
        &self.left_right_pairs
    }

    pub fn lateral_axis(&self) -> usize {
        self.lateral_axis
    }

    /// `(child, parent)` for every limb, in limb order.
    pub fn limbs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.limbs
            .iter()
            .map(move |&c| (c, self.parents[c].expect("limb child has a parent")))
    }

    /// Joints ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.joint_count();
        let mut order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        order.push(self.root);
        placed[self.root] = true;
        while order.len() < n {
            for j in 0..n {
                if !placed[j] && self.parents[j].is_some_and(|p| placed[p]) {
                    placed[j] = true;
                    order.push(j);
                }
            }
        }
        order
    }
}

/// A `T x J x 3` trajectory of joint positions with per-frame validity.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Array3<f64>,
    fps: f64,
    valid: Vec<bool>,
    topology: Arc<SkeletonTopology>,
}

impl PoseSequence {
    pub fn new(
        frames: Array3<f64>,
        fps: f64,
        valid: Vec<bool>,
        topology: Arc<SkeletonTopology>,
    ) -> Result<Self> {
        let (t, j, c) = frames.dim();
        if t == 0 {
            return Err(Error::Shape("a sequence needs at least one frame".into()));
        }
        if c != 3 {
            return Err(Error::Shape(format!("expected 3 coordinates per joint, got {c}")));
        }
        if j != topology.joint_count() {
            return Err(Error::Shape(format!(
                "frames have {j} joints but the topology declares {}",
                topology.joint_count()
            )));
        }
        if valid.len() != t {
            return Err(Error::Shape(format!(
                "validity mask has {} entries for {t} frames",
                valid.len()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {fps}")));
        }
        for (ti, frame) in frames.outer_iter().enumerate() {
            if valid[ti] && frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("non-finite coordinate on valid frame {ti}")));
            }
        }
        Ok(Self {
            frames,
            fps,
            valid,
            topology,
        })
    }

    /// A sequence whose frames are all valid.
    pub fn dense(frames: Array3<f64>, fps: f64, topology: Arc<SkeletonTopology>) -> Result<Self> {
        let t = frames.dim().0;
        Self::new(frames, fps, vec![true; t], topology)
    }

    /// Same timing and topology, new coordinates, all frames valid.
    pub fn with_frames(&self, frames: Array3<f64>) -> Result<Self> {
        Self::dense(frames, self.fps, self.topology.clone())
    }

    pub fn frames(&self) -> &Array3<f64> {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn topology(&self) -> &Arc<SkeletonTopology> {
        &self.topology
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn num_joints(&self) -> usize {
        self.frames.dim().1
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn is_fully_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn into_frames(self) -> Array3<f64> {
        self.frames
    }

    /// Frames `start..end` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.frames.slice(s![start..end, .., ..]).to_owned(),
            self.fps,
            self.valid[start..end].to_vec(),
            self.topology.clone(),
        )
    }
}

/// Per-frame limb lengths, optionally divided by the mean skeleton length.
#[derive(Debug, Clone, PartialEq)]
pub struct LimbLengthMatrix {
    /// `T x (J-1)`, columns in limb order.
    pub lengths: Array2<f64>,
    /// Divisor applied to the raw lengths (1 when not normalized).
    pub normalization_constant: f64,
}

/// Raw Euclidean limb lengths of a dense `T x J x 3` array.
pub(crate) fn raw_limb_lengths(frames: &ArrayView3<f64>, topo: &SkeletonTopology) -> Array2<f64> {
    let t = frames.dim().0;
    let mut out = Array2::zeros((t, topo.limb_count()));
    for ti in 0..t {
        for (k, (c, p)) in topo.limbs().enumerate() {
            let mut sq = 0.0;
            for d in 0..3 {
                let diff = frames[[ti, c, d]] - frames[[ti, p, d]];
                sq += diff * diff;
            }
            out[[ti, k]] = sq.sqrt();
        }
    }
    out
}

/// Limb lengths of every frame. With `normalize`, entries are divided by the
/// mean over frames of the total skeleton length.
pub fn limb_lengths(seq: &PoseSequence, normalize: bool) -> Result<LimbLengthMatrix> {
    let topo = seq.topology();
    if topo.limb_count() == 0 {
        return Err(Error::Topology("skeleton has no limbs".into()));
    }
    let mut lengths = raw_limb_lengths(&seq.frames().view(), topo);
    let mut normalization_constant = 1.0;
    if normalize {
        let c = lengths.sum() / seq.num_frames() as f64;
        if c <= 0.0 {
            return Err(Error::Degenerate(
                "zero mean skeleton length: all joints coincide".into(),
            ));
        }
        lengths.mapv_inplace(|v| v / c);
        normalization_constant = c;
    }
    Ok(LimbLengthMatrix {
        lengths,
        normalization_constant,
    })
}

/// First (`order = 1`) or second (`order = 2`) temporal differences of a
/// `T x J x 3` array.
pub fn diff_frames(frames: &ArrayView3<f64>, order: usize) -> Result<Array3<f64>> {
    if !(1..=2).contains(&order) {
        return Err(Error::Config(format!("difference order must be 1 or 2, got {order}")));
    }
    let t = frames.dim().0;
    if t < order + 1 {
        return Err(Error::TooShort {
            need: order + 1,
            got: t,
        });
    }
    let first = &frames.slice(s![1.., .., ..]) - &frames.slice(s![..t - 1, .., ..]);
    if order == 1 {
        return Ok(first);
    }
    Ok(&first.slice(s![1.., .., ..]) - &first.slice(s![..t - 2, .., ..]))
}

/// Frame-to-frame differences of a sequence: velocity (order 1, meters per
/// frame) or acceleration (order 2, meters per frame squared).
pub fn finite_difference(seq: &PoseSequence, order: usize) -> Result<Array3<f64>> {
    diff_frames(&seq.frames().view(), order)
}

/// Mirrors a sequence across the lateral axis and swaps left/right joints.
pub fn horizontal_flip(seq: &PoseSequence) -> Result<PoseSequence> {
    let topo = seq.topology();
    if topo.left_right_pairs().is_empty() {
        return Err(Error::Topology(
            "horizontal flip needs left/right joint pairs".into(),
        ));
    }
    Ok(PoseSequence {
        frames: flip_frames(&seq.frames().view(), topo),
        fps: seq.fps,
        valid: seq.valid.clone(),
        topology: seq.topology.clone(),
    })
}

pub(crate) fn flip_frames(frames: &ArrayView3<f64>, topo: &SkeletonTopology) -> Array3<f64> {
    let mut out = frames.to_owned();
    let axis = topo.lateral_axis();
    out.index_axis_mut(Axis(2), axis).mapv_inplace(|v| -v);
    for &(a, b) in topo.left_right_pairs() {
        for ti in 0..out.dim().0 {
            for d in 0..3 {
                out.swap([ti, a, d], [ti, b, d]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Rotation3, Vector3};
    use proptest::prelude::*;

    fn chain(n: usize) -> Arc<SkeletonTopology> {
        let parents = (0..n).map(|j| if j == 0 { None } else { Some(j - 1) }).collect();
        Arc::new(SkeletonTopology::new(parents, None, vec![]).unwrap())
    }

    fn seq_from(points: &[[[f64; 3]; 3]]) -> PoseSequence {
        let t = points.len();
        let mut frames = Array3::zeros((t, 3, 3));
        for (ti, frame) in points.iter().enumerate() {
            for (j, p) in frame.iter().enumerate() {
                for d in 0..3 {
                    frames[[ti, j, d]] = p[d];
                }
            }
        }
        PoseSequence::dense(frames, 30.0, chain(3)).unwrap()
    }

    fn random_h36m(t: usize, seed: u64) -> PoseSequence {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let frames = Array3::from_shape_fn((t, 17, 3), |_| rng.random_range(-1.0..1.0));
        PoseSequence::dense(frames, 50.0, Arc::new(SkeletonTopology::h36m17())).unwrap()
    }

    #[test]
    fn topology_rejects_two_roots_and_cycles() {
        assert!(SkeletonTopology::new(vec![None, None], None, vec![]).is_err());
        assert!(SkeletonTopology::new(vec![None, Some(2), Some(1)], None, vec![]).is_err());
        assert!(SkeletonTopology::new(vec![None, Some(0), Some(0)], None, vec![(1, 2), (2, 1)]).is_err());
    }

    #[test]
    fn h36m_preset_has_sixteen_limbs() {
        let t = SkeletonTopology::h36m17();
        assert_eq!(t.joint_count(), 17);
        assert_eq!(t.limb_count(), 16);
        assert_eq!(t.root(), 0);
        let order = t.topological_order();
        assert_eq!(order.len(), 17);
        for (i, &j) in order.iter().enumerate() {
            if let Some(p) = t.parent(j) {
                assert!(order[..i].contains(&p));
            }
        }
    }

    #[test]
    fn topology_toml_round_trip() {
        let t = SkeletonTopology::h36m17().with_lateral_axis(2).unwrap();
        let back = SkeletonTopology::from_toml(&t.to_toml()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn unit_offset_limb() {
        let topo = chain(2);
        let frames = Array3::from_shape_vec((1, 2, 3), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let seq = PoseSequence::dense(frames, 30.0, topo).unwrap();
        let m = limb_lengths(&seq, false).unwrap();
        assert_eq!(m.lengths, ndarray::array![[1.0]]);
        assert_eq!(m.normalization_constant, 1.0);
    }

    #[test]
    fn time_constant_pose_gives_equal_rows() {
        let p = [[0.0, 0.0, 0.0], [0.3, -0.2, 0.5], [1.0, 1.0, 1.0]];
        let m = limb_lengths(&seq_from(&[p, p]), true).unwrap();
        assert_eq!(m.lengths.row(0), m.lengths.row(1));
    }

    #[test]
    fn normalized_chain_matches_hand_computation() {
        // Raw lengths (1, 2), total 3.
        let m = limb_lengths(&seq_from(&[[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 2.0, 0.0]]]), true)
            .unwrap();
        assert_abs_diff_eq!(m.normalization_constant, 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.lengths[[0, 0]], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.lengths[[0, 1]], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let single = Arc::new(SkeletonTopology::new(vec![None], None, vec![]).unwrap());
        let seq = PoseSequence::dense(Array3::zeros((2, 1, 3)), 30.0, single).unwrap();
        assert!(matches!(limb_lengths(&seq, false), Err(Error::Topology(_))));

        let seq = PoseSequence::dense(Array3::zeros((2, 3, 3)), 30.0, chain(3)).unwrap();
        let err = limb_lengths(&seq, true).unwrap_err();
        assert!(err.to_string().contains("coincide"), "{err}");
    }

    #[test]
    fn sequence_construction_validates() {
        let topo = chain(3);
        assert!(PoseSequence::dense(Array3::zeros((0, 3, 3)), 30.0, topo.clone()).is_err());
        assert!(PoseSequence::dense(Array3::zeros((2, 4, 3)), 30.0, topo.clone()).is_err());
        assert!(PoseSequence::new(Array3::zeros((2, 3, 3)), 30.0, vec![true], topo.clone()).is_err());
        let mut frames = Array3::zeros((2, 3, 3));
        frames[[1, 0, 0]] = f64::NAN;
        assert!(PoseSequence::new(frames.clone(), 30.0, vec![true, true], topo.clone()).is_err());
        assert!(PoseSequence::new(frames, 30.0, vec![true, false], topo).is_ok());
    }

    #[test]
    fn finite_differences_of_polynomials() {
        let topo = chain(1);
        let lin = Array3::from_shape_fn((6, 1, 3), |(t, _, d)| if d == 0 { t as f64 } else { 0.0 });
        let seq = PoseSequence::dense(lin, 30.0, topo.clone()).unwrap();
        let v = finite_difference(&seq, 1).unwrap();
        assert_eq!(v.dim(), (5, 1, 3));
        assert!(v.outer_iter().all(|r| r.iter().copied().eq([1.0, 0.0, 0.0])));
        let a = finite_difference(&seq, 2).unwrap();
        assert_eq!(a.dim(), (4, 1, 3));
        assert!(a.iter().all(|&x| x == 0.0));

        let quad = Array3::from_shape_fn((7, 1, 3), |(t, _, d)| if d == 1 { (t * t) as f64 } else { 0.0 });
        let seq = PoseSequence::dense(quad, 30.0, topo.clone()).unwrap();
        let a = finite_difference(&seq, 2).unwrap();
        for r in a.outer_iter() {
            assert_eq!(r[[0, 1]], 2.0);
            assert_eq!(r[[0, 0]], 0.0);
        }

        let short = PoseSequence::dense(Array3::zeros((2, 1, 3)), 30.0, topo).unwrap();
        assert!(matches!(
            finite_difference(&short, 2),
            Err(Error::TooShort { need: 3, got: 2 })
        ));
    }

    #[test]
    fn flip_moves_left_wrist_to_right() {
        let topo = Arc::new(SkeletonTopology::h36m17());
        let mut frames = Array3::zeros((1, 17, 3));
        frames[[0, 13, 0]] = 0.3;
        frames[[0, 13, 1]] = 1.2;
        frames[[0, 13, 2]] = 0.1;
        let seq = PoseSequence::dense(frames, 50.0, topo).unwrap();
        let f = horizontal_flip(&seq).unwrap();
        assert_eq!(f.frames()[[0, 16, 0]], -0.3);
        assert_eq!(f.frames()[[0, 16, 1]], 1.2);
        assert_eq!(f.frames()[[0, 16, 2]], 0.1);
    }

    #[test]
    fn flip_of_symmetric_rest_pose_is_identity() {
        let topo = Arc::new(SkeletonTopology::h36m17());
        let mut frames = Array3::zeros((1, 17, 3));
        for j in topo.topological_order() {
            if let Some(p) = topo.parent(j) {
                for d in 0..3 {
                    frames[[0, j, d]] = frames[[0, p, d]] + H36M_REST_OFFSETS[j][d];
                }
            }
        }
        let seq = PoseSequence::dense(frames, 50.0, topo).unwrap();
        assert_eq!(horizontal_flip(&seq).unwrap(), seq);
    }

    #[test]
    fn flip_needs_pairs() {
        let seq = PoseSequence::dense(Array3::zeros((1, 3, 3)), 30.0, chain(3)).unwrap();
        assert!(horizontal_flip(&seq).is_err());
    }

    proptest! {
        #[test]
        fn limb_lengths_invariant_under_rigid_motion(
            seed in 0u64..1000,
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.0f64..3.0,
            shift in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let seq = random_h36m(4, seed);
            let rot = Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(Vector3::new(axis[0] + 1e-3, axis[1], axis[2])),
                angle,
            );
            let moved = Array3::from_shape_fn((4, 17, 3), |(t, j, d)| {
                let p = Vector3::new(seq.frames()[[t, j, 0]], seq.frames()[[t, j, 1]], seq.frames()[[t, j, 2]]);
                (rot * p)[d] + shift[d]
            });
            let moved = seq.with_frames(moved).unwrap();
            let a = limb_lengths(&seq, false).unwrap().lengths;
            let b = limb_lengths(&moved, false).unwrap().lengths;
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn normalized_lengths_are_scale_invariant(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let seq = random_h36m(3, seed);
            let scaled = seq.with_frames(seq.frames() * scale).unwrap();
            let a = limb_lengths(&seq, true).unwrap().lengths;
            let b = limb_lengths(&scaled, true).unwrap().lengths;
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn second_difference_is_twice_first(seed in 0u64..1000) {
            let seq = random_h36m(6, seed);
            let twice = diff_frames(&finite_difference(&seq, 1).unwrap().view(), 1).unwrap();
            let direct = finite_difference(&seq, 2).unwrap();
            for (x, y) in twice.iter().zip(direct.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn flip_is_an_involution_preserving_limbs(seed in 0u64..1000) {
            let seq = random_h36m(5, seed);
            let once = horizontal_flip(&seq).unwrap();
            prop_assert_eq!(&horizontal_flip(&once).unwrap(), &seq);
            let a = limb_lengths(&seq, false).unwrap().lengths;
            let b = limb_lengths(&once, false).unwrap().lengths;
            // Swapping pairs permutes limbs; the multiset per frame is preserved.
            for t in 0..5 {
                let mut x: Vec<f64> = a.row(t).to_vec();
                let mut y: Vec<f64> = b.row(t).to_vec();
                x.sort_by(f64::total_cmp);
                y.sort_by(f64::total_cmp);
                for (p, q) in x.iter().zip(&y) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }
}
