//! 22-joint kinematic tree in the SMPL joint order, its trunk/limb partition,
//! the mirrored bone pairs and forward kinematics.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{BpgError, Result};
use crate::rotmath::{mul3, rodrigues, AxisAngle, RotMatrix};

pub const NUM_JOINTS: usize = 22;

pub const HEAD: usize = 15;
pub const LEFT_WRIST: usize = 20;
pub const RIGHT_WRIST: usize = 21;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
];

const TRUNK: [usize; 11] = [0, 1, 2, 3, 4, 5, 6, 9, 12, 13, 14];
const LIMB: [usize; 11] = [7, 8, 10, 11, 15, 16, 17, 18, 19, 20, 21];

const LEFT_BONES: [(usize, usize); 8] = [
    (0, 1),
    (1, 4),
    (4, 7),
    (7, 10),
    (9, 13),
    (13, 16),
    (16, 18),
    (18, 20),
];
const RIGHT_BONES: [(usize, usize); 8] = [
    (0, 2),
    (2, 5),
    (5, 8),
    (8, 11),
    (9, 14),
    (14, 17),
    (17, 19),
    (19, 21),
];

// Neutral rest pose in meters, y up, +x toward the body's left.
const CENTER_OFFSETS: [(usize, [f64; 3]); 5] = [
    (3, [0.0, 0.124, -0.038]),
    (6, [0.0, 0.138, 0.027]),
    (9, [0.0, 0.056, 0.002]),
    (12, [0.0, 0.212, -0.034]),
    (15, [0.0, 0.089, 0.050]),
];
const LEFT_OFFSETS: [(usize, usize, [f64; 3]); 8] = [
    (1, 2, [0.059, -0.086, -0.016]),
    (4, 5, [0.043, -0.385, 0.002]),
    (7, 8, [0.0, -0.424, -0.036]),
    (10, 11, [0.038, -0.061, 0.126]),
    (13, 14, [0.077, 0.120, -0.022]),
    (16, 17, [0.118, 0.047, -0.014]),
    (18, 19, [0.258, -0.014, -0.029]),
    (20, 21, [0.268, 0.008, -0.006]),
];

/// Immutable description of the kinematic tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonModel {
    parent: [Option<usize>; NUM_JOINTS],
    offset: [Vector3<f64>; NUM_JOINTS],
    trunk_set: Vec<usize>,
    limb_set: Vec<usize>,
    left_bones: Vec<(usize, usize)>,
    right_bones: Vec<(usize, usize)>,
}

impl Default for SkeletonModel {
    fn default() -> Self {
        default_skeleton()
    }
}

pub fn default_skeleton() -> SkeletonModel {
    let mut offset = [Vector3::zeros(); NUM_JOINTS];
    for (j, o) in CENTER_OFFSETS {
        offset[j] = Vector3::from(o);
    }
    for (l, r, o) in LEFT_OFFSETS {
        offset[l] = Vector3::from(o);
        offset[r] = Vector3::new(-o[0], o[1], o[2]);
    }
    SkeletonModel {
        parent: PARENTS,
        offset,
        trunk_set: TRUNK.to_vec(),
        limb_set: LIMB.to_vec(),
        left_bones: LEFT_BONES.to_vec(),
        right_bones: RIGHT_BONES.to_vec(),
    }
}

impl SkeletonModel {
    /// Replaces the rest-pose offsets. The topology is fixed, so each joint's
    /// parent must match the built-in table.
    pub fn with_offsets(
        parent: [Option<usize>; NUM_JOINTS],
        offset: [Vector3<f64>; NUM_JOINTS],
    ) -> Result<Self> {
        if parent != PARENTS {
            let j = (0..NUM_JOINTS).find(|&j| parent[j] != PARENTS[j]).unwrap_or(0);
            return Err(BpgError::InvalidArgument(format!(
                "joint {j} has parent {:?}, expected {:?}",
                parent[j], PARENTS[j]
            )));
        }
        if offset.iter().any(|o| !o.iter().all(|c| c.is_finite())) {
            return Err(BpgError::InvalidArgument("non-finite bone offset".into()));
        }
        Ok(SkeletonModel {
            offset,
            ..default_skeleton()
        })
    }

    /// Reads a skeleton config: one `index parent ox oy oz` line per joint,
    /// parent `-1` for the root, `#` starts a comment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BpgError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| BpgError::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut parent = [None; NUM_JOINTS];
        let mut offset = [Vector3::zeros(); NUM_JOINTS];
        let mut seen = [false; NUM_JOINTS];
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 5 {
                return Err(err(lineno, format!("expected 5 columns, found {}", cols.len())));
            }
            let idx: usize = cols[0]
                .parse()
                .map_err(|_| err(lineno, format!("bad joint index `{}`", cols[0])))?;
            if idx >= NUM_JOINTS {
                return Err(err(lineno, format!("joint index {idx} out of range")));
            }
            if seen[idx] {
                return Err(err(lineno, format!("joint {idx} listed twice")));
            }
            let p: i64 = cols[1]
                .parse()
                .map_err(|_| err(lineno, format!("bad parent `{}`", cols[1])))?;
            parent[idx] = match p {
                -1 => None,
                p if p >= 0 && (p as usize) < NUM_JOINTS => Some(p as usize),
                _ => return Err(err(lineno, format!("parent {p} out of range"))),
            };
            let mut o = [0.0; 3];
            for (k, c) in cols[2..].iter().enumerate() {
                o[k] = c
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(lineno, format!("bad offset value `{c}`")))?;
            }
            offset[idx] = Vector3::from(o);
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(err(0, format!("joint {missing} missing")));
        }
        Self::with_offsets(parent, offset)
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn parents(&self) -> &[Option<usize>; NUM_JOINTS] {
        &self.parent
    }

    pub fn offset(&self, joint: usize) -> &Vector3<f64> {
        &self.offset[joint]
    }

    pub fn offsets(&self) -> &[Vector3<f64>; NUM_JOINTS] {
        &self.offset
    }

    pub fn trunk_set(&self) -> &[usize] {
        &self.trunk_set
    }

    pub fn limb_set(&self) -> &[usize] {
        &self.limb_set
    }

    pub fn is_trunk(&self, joint: usize) -> bool {
        self.trunk_set.contains(&joint)
    }

    pub fn left_bones(&self) -> &[(usize, usize)] {
        &self.left_bones
    }

    pub fn right_bones(&self) -> &[(usize, usize)] {
        &self.right_bones
    }

    /// `(parent, child)` for every non-root joint, in child order.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        (0..NUM_JOINTS)
            .filter_map(|j| self.parent[j].map(|p| (p, j)))
            .collect()
    }

    /// Writes the config format accepted by [`SkeletonModel::parse`].
    pub fn to_config_string(&self) -> String {
        let mut out = String::from("# index parent offset_x offset_y offset_z\n");
        for j in 0..NUM_JOINTS {
            let p = self.parent[j].map_or(-1, |p| p as i64);
            let o = &self.offset[j];
            out.push_str(&format!("{j} {p} {} {} {}\n", o.x, o.y, o.z));
        }
        out
    }
}

/// One frame of full-body pose with derived global quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub local_rot: Vec<AxisAngle>,
    pub root_translation: Vector3<f64>,
    pub positions: Vec<Vector3<f64>>,
    pub global_rot: Vec<RotMatrix>,
}

impl PoseEstimate {
    pub fn from_local(
        local_rot: Vec<AxisAngle>,
        root_translation: Vector3<f64>,
        skel: &SkeletonModel,
    ) -> Self {
        let (positions, global_rot) = forward_kinematics(&local_rot, &root_translation, skel);
        PoseEstimate {
            local_rot,
            root_translation,
            positions,
            global_rot,
        }
    }
}

/// Global joint positions and orientations from local joint rotations.
///
/// Joints are visited in index order, which is a topological order of the
/// tree (every parent index is smaller than its child's).
pub fn forward_kinematics(
    local_rot: &[AxisAngle],
    root_translation: &Vector3<f64>,
    skel: &SkeletonModel,
) -> (Vec<Vector3<f64>>, Vec<RotMatrix>) {
    debug_assert_eq!(local_rot.len(), NUM_JOINTS);
    let mut pos = vec![Vector3::zeros(); NUM_JOINTS];
    let mut rot: Vec<Matrix3<f64>> = vec![Matrix3::identity(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let local = rodrigues(&local_rot[j].0);
        match skel.parent[j] {
            None => {
                rot[j] = local;
                pos[j] = *root_translation;
            }
            Some(p) => {
                rot[j] = mul3(&rot[p], &local);
                pos[j] = pos[p] + rot[p] * skel.offset[j];
            }
        }
    }
    let global = rot.into_iter().map(RotMatrix::from_matrix_unchecked).collect();
    (pos, global)
}

pub fn bone_lengths(positions: &[Vector3<f64>], bones: &[(usize, usize)]) -> Vec<f64> {
    bones
        .iter()
        .map(|&(p, c)| (positions[c] - positions[p]).norm())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::{axis_angle_to_matrix, rot_y};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_pose(rng: &mut impl Rng) -> Vec<AxisAngle> {
        (0..NUM_JOINTS)
            .map(|_| {
                AxisAngle::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn topology_matches_tables() {
        let s = default_skeleton();
        let expected: [i64; 22] = [
            -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
        ];
        for j in 0..NUM_JOINTS {
            assert_eq!(s.parent(j).map_or(-1, |p| p as i64), expected[j]);
        }
        assert_eq!(s.trunk_set(), &[0, 1, 2, 3, 4, 5, 6, 9, 12, 13, 14]);
        assert_eq!(s.limb_set(), &[7, 8, 10, 11, 15, 16, 17, 18, 19, 20, 21]);
        let mut all: Vec<usize> = s.trunk_set().iter().chain(s.limb_set()).copied().collect();
        all.sort();
        assert_eq!(all, (0..NUM_JOINTS).collect::<Vec<_>>());
        assert_eq!(s.left_bones().len(), s.right_bones().len());
        assert_eq!(s.bones().len(), 21);
    }

    #[test]
    fn limb_paths_reach_trunk() {
        let s = default_skeleton();
        for &j in s.limb_set() {
            let mut cur = s.parent(j);
            let mut hit = false;
            while let Some(p) = cur {
                if s.is_trunk(p) {
                    hit = true;
                    break;
                }
                cur = s.parent(p);
            }
            assert!(hit, "limb joint {j} never passes through the trunk");
        }
    }

    #[test]
    fn offsets_mirrored() {
        let s = default_skeleton();
        for (l, r) in s.left_bones().iter().zip(s.right_bones()) {
            let ol = s.offset(l.1);
            let or = s.offset(r.1);
            assert_eq!(ol.x, -or.x);
            assert_eq!(ol.y, or.y);
            assert_eq!(ol.z, or.z);
        }
        assert_eq!(s.offset(1).x, -s.offset(2).x);
    }

    #[test]
    fn rest_pose_positions_are_offset_sums() {
        let s = default_skeleton();
        let (pos, _) = forward_kinematics(&[AxisAngle::zero(); 22], &Vector3::zeros(), &s);
        for j in 0..NUM_JOINTS {
            let mut sum = Vector3::zeros();
            let mut cur = Some(j);
            while let Some(c) = cur {
                if s.parent(c).is_some() {
                    sum += s.offset(c);
                }
                cur = s.parent(c);
            }
            assert_abs_diff_eq!(pos[j], sum, epsilon = 1e-15);
        }
    }

    #[test]
    fn root_half_turn_reflects_through_vertical_axis() {
        let s = default_skeleton();
        let (rest, _) = forward_kinematics(&[AxisAngle::zero(); 22], &Vector3::zeros(), &s);
        let mut rots = [AxisAngle::zero(); 22];
        rots[0] = AxisAngle::new(0.0, PI, 0.0);
        let (turned, _) = forward_kinematics(&rots, &Vector3::zeros(), &s);
        for j in 0..NUM_JOINTS {
            let expected = Vector3::new(-rest[j].x, rest[j].y, -rest[j].z);
            assert_abs_diff_eq!(turned[j], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn root_rotation_equivariance() {
        let s = default_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pose = random_pose(&mut rng);
        let (pos, _) = forward_kinematics(&pose, &Vector3::zeros(), &s);
        let extra = rot_y(0.8);
        let root = axis_angle_to_matrix(&pose[0]).unwrap();
        let mut rotated = pose.clone();
        rotated[0] = crate::rotmath::matrix_to_axis_angle(&extra.compose(&root)).unwrap();
        let (pos2, _) = forward_kinematics(&rotated, &Vector3::zeros(), &s);
        for j in 0..NUM_JOINTS {
            assert_abs_diff_eq!(pos2[j], extra.matrix() * pos[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn bone_lengths_rest_and_invariance() {
        let s = default_skeleton();
        let bones = s.bones();
        let (rest, _) = forward_kinematics(&[AxisAngle::zero(); 22], &Vector3::zeros(), &s);
        let lens = bone_lengths(&rest, &bones);
        for (len, &(_, c)) in lens.iter().zip(&bones) {
            assert_abs_diff_eq!(*len, s.offset(c).norm(), epsilon = 1e-15);
        }
        let ll = bone_lengths(&rest, s.left_bones());
        let rl = bone_lengths(&rest, s.right_bones());
        assert_eq!(ll, rl);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pose = random_pose(&mut rng);
        let (a, _) = forward_kinematics(&pose, &Vector3::zeros(), &s);
        let (b, _) = forward_kinematics(&pose, &Vector3::new(3.0, -1.0, 0.5), &s);
        for (x, y) in bone_lengths(&a, &bones).iter().zip(bone_lengths(&b, &bones)) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn config_round_trip_and_errors() {
        let s = default_skeleton();
        let text = s.to_config_string();
        let parsed = SkeletonModel::parse(&text, "inline").unwrap();
        assert_eq!(parsed, s);

        let short: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(SkeletonModel::parse(&short, "inline").is_err());

        let bad_parent = text.replace("\n4 1 ", "\n4 2 ");
        assert!(SkeletonModel::parse(&bad_parent, "inline").is_err());

        let bad_cols = text.replacen("\n3 0 0 ", "\n3 0 ", 1);
        match SkeletonModel::parse(&bad_cols, "inline") {
            Err(BpgError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }
}
