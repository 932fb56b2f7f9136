//! L1 rotation and position losses and the left/right bone-length symmetry
//! loss, as plain functions and as graph builders.

use std::rc::Rc;

use nalgebra::Vector3;

use crate::autograd::{Graph, Var};
use crate::error::{BpgError, Result};
use crate::rotmath::AxisAngle;
use crate::skeleton::{PoseEstimate, SkeletonModel};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub l_rot: f64,
    pub l_pos: f64,
    pub l_bone: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn new(l_rot: f64, l_pos: f64, l_bone: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            l_rot,
            l_pos,
            l_bone,
            l_total: w.rot * l_rot + w.pos * l_pos + w.bone * l_bone,
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("l_rot", self.l_rot),
            ("l_pos", self.l_pos),
            ("l_bone", self.l_bone),
            ("l_total", self.l_total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }

    pub fn csv_row(&self, step: u64) -> String {
        format!("{step},{},{},{},{}", self.l_rot, self.l_pos, self.l_bone, self.l_total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub rot: f64,
    pub pos: f64,
    pub bone: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rot: 1.0,
            pos: 1.0,
            bone: 1.0,
        }
    }
}

fn same_len(context: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(BpgError::shape(context, a, b));
    }
    Ok(())
}

/// Mean absolute difference over all axis-angle components.
pub fn loss_rot(pred: &[AxisAngle], gt: &[AxisAngle]) -> Result<f64> {
    same_len("loss_rot", pred.len(), gt.len())?;
    let n = 3 * pred.len();
    let s: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| (0..3).map(move |i| (p.0[i] - g.0[i]).abs()))
        .sum();
    Ok(s / n as f64)
}

/// Mean absolute difference over all position components (meters).
pub fn loss_pos(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<f64> {
    same_len("loss_pos", pred.len(), gt.len())?;
    let n = 3 * pred.len();
    let s: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(p, g)| (0..3).map(move |i| (p[i] - g[i]).abs()))
        .sum();
    Ok(s / n as f64)
}

/// `Σ | |left bone| − |mirrored right bone| |` over the paired limb bones.
pub fn loss_bone(positions: &[Vector3<f64>], skel: &SkeletonModel) -> f64 {
    let len = |(p, c): (usize, usize)| (positions[c] - positions[p]).norm();
    skel.left_bones()
        .iter()
        .zip(skel.right_bones())
        .map(|(&l, &r)| (len(l) - len(r)).abs())
        .sum()
}

/// Unweighted sum of the three terms.
pub fn total_loss(pred: &PoseEstimate, gt: &PoseEstimate, skel: &SkeletonModel) -> Result<LossBreakdown> {
    total_loss_weighted(pred, gt, skel, &LossWeights::default())
}

pub fn total_loss_weighted(
    pred: &PoseEstimate,
    gt: &PoseEstimate,
    skel: &SkeletonModel,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(LossBreakdown::new(
        loss_rot(&pred.local_rot, &gt.local_rot)?,
        loss_pos(&pred.positions, &gt.positions)?,
        loss_bone(&pred.positions, skel),
        w,
    ))
}

pub fn loss_rot_g(g: &mut Graph, pred: Var, gt: Var) -> Var {
    let d = g.sub(pred, gt);
    let a = g.abs(d);
    g.mean(a)
}

pub fn loss_pos_g(g: &mut Graph, pred: Var, gt: Var) -> Var {
    loss_rot_g(g, pred, gt)
}

pub fn loss_bone_g(g: &mut Graph, pos: Var, skel: &SkeletonModel) -> Var {
    let mut lengths = |bones: &[(usize, usize)]| {
        let parents = g.gather_rows(pos, Rc::new(bones.iter().map(|b| b.0).collect()));
        let children = g.gather_rows(pos, Rc::new(bones.iter().map(|b| b.1).collect()));
        let d = g.sub(children, parents);
        g.row_norm(d)
    };
    let left = lengths(skel.left_bones());
    let right = lengths(skel.right_bones());
    let d = g.sub(left, right);
    let a = g.abs(d);
    g.sum(a)
}

/// Graph nodes of the three terms and their weighted total.
pub struct LossVars {
    pub l_rot: Var,
    pub l_pos: Var,
    pub l_bone: Var,
    pub total: Var,
}

pub fn total_loss_g(
    g: &mut Graph,
    axis: Var,
    pos: Var,
    gt_axis: Var,
    gt_pos: Var,
    skel: &SkeletonModel,
    w: &LossWeights,
) -> LossVars {
    let l_rot = loss_rot_g(g, axis, gt_axis);
    let l_pos = loss_pos_g(g, pos, gt_pos);
    let l_bone = loss_bone_g(g, pos, skel);
    let r = g.scale(l_rot, w.rot);
    let p = g.scale(l_pos, w.pos);
    let b = g.scale(l_bone, w.bone);
    let rp = g.add(r, p);
    let total = g.add(rp, b);
    LossVars {
        l_rot,
        l_pos,
        l_bone,
        total,
    }
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph, w: &LossWeights) -> LossBreakdown {
        LossBreakdown::new(g.scalar(self.l_rot), g.scalar(self.l_pos), g.scalar(self.l_bone), w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{default_skeleton, forward_kinematics, NUM_JOINTS};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> PoseEstimate {
        let skel = default_skeleton();
        let rot: Vec<AxisAngle> = (0..NUM_JOINTS)
            .map(|_| AxisAngle::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        PoseEstimate::from_local(rot, Vector3::new(0.1, 0.9, -0.3), &skel)
    }

    #[test]
    fn rot_loss_single_component() {
        let gt = vec![AxisAngle::zero(); NUM_JOINTS];
        let mut pred = gt.clone();
        pred[7].0.y = 0.066;
        assert_abs_diff_eq!(loss_rot(&pred, &gt).unwrap(), 0.001, epsilon = 1e-15);
        assert_eq!(loss_rot(&pred, &gt).unwrap(), loss_rot(&gt, &pred).unwrap());
        assert_eq!(loss_rot(&gt, &gt).unwrap(), 0.0);
        assert!(loss_rot(&pred[..3], &gt).is_err());
    }

    #[test]
    fn pos_loss_offset_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng);
        let shifted: Vec<_> = p.positions.iter().map(|v| v + Vector3::new(0.0, 0.01, 0.0)).collect();
        assert_abs_diff_eq!(loss_pos(&shifted, &p.positions).unwrap(), 0.01 / 3.0, epsilon = 1e-12);
        let mut swapped = p.positions.clone();
        swapped.swap(4, 11);
        assert!(loss_pos(&swapped, &p.positions).unwrap() > 0.0);
    }

    #[test]
    fn bone_loss_cases() {
        let skel = default_skeleton();
        let zero = vec![AxisAngle::zero(); NUM_JOINTS];
        let (rest, _) = forward_kinematics(&zero, &Vector3::zeros(), &skel);
        assert_abs_diff_eq!(loss_bone(&rest, &skel), 0.0, epsilon = 1e-15);

        // stretch the left thigh by 1 cm along its own direction; the knee
        // subtree follows so no other bone length changes
        let mut stretched = rest.clone();
        let dir = (rest[4] - rest[1]).normalize();
        for j in [4, 7, 10] {
            stretched[j] += dir * 0.01;
        }
        assert_abs_diff_eq!(loss_bone(&stretched, &skel), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn bone_loss_rigid_invariance() {
        let skel = default_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_pose(&mut rng);
        let r = crate::rotmath::rodrigues(&Vector3::new(0.4, -1.2, 0.7));
        let moved: Vec<_> = p.positions.iter().map(|v| r * v + Vector3::new(3.0, -1.0, 2.0)).collect();
        assert_abs_diff_eq!(loss_bone(&moved, &skel), loss_bone(&p.positions, &skel), epsilon = 1e-12);
    }

    #[test]
    fn breakdown_sums_and_zero_on_identity() {
        let skel = default_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        let l = total_loss(&a, &b, &skel).unwrap();
        assert_abs_diff_eq!(l.l_total, l.l_rot + l.l_pos + l.l_bone, epsilon = 1e-12);
        let z = total_loss(&a, &a, &skel).unwrap();
        assert_eq!((z.l_rot, z.l_pos), (0.0, 0.0));

        let no_bone = LossWeights { bone: 0.0, ..Default::default() };
        let nb = total_loss_weighted(&a, &b, &skel, &no_bone).unwrap();
        assert_eq!(nb.l_total, l.l_rot + l.l_pos);
    }

    #[test]
    fn graph_losses_match_values() {
        let skel = default_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        let to_t = |vs: Vec<Vector3<f64>>| {
            ndarray::Array2::from_shape_fn((vs.len(), 3), |(i, j)| vs[i][j])
        };
        let store = crate::params::ParamStore::new();
        let mut g = Graph::new(&store);
        let pa = g.input(to_t(a.local_rot.iter().map(|r| r.0).collect()));
        let ga = g.input(to_t(b.local_rot.iter().map(|r| r.0).collect()));
        let pp = g.input(to_t(a.positions.clone()));
        let gp = g.input(to_t(b.positions.clone()));
        let w = LossWeights::default();
        let vars = total_loss_g(&mut g, pa, pp, ga, gp, &skel, &w);
        let got = vars.breakdown(&g, &w);
        let want = total_loss(&a, &b, &skel).unwrap();
        assert_abs_diff_eq!(got.l_rot, want.l_rot, epsilon = 1e-14);
        assert_abs_diff_eq!(got.l_pos, want.l_pos, epsilon = 1e-14);
        assert_abs_diff_eq!(got.l_bone, want.l_bone, epsilon = 1e-14);
        assert_abs_diff_eq!(g.scalar(vars.total), want.l_total, epsilon = 1e-13);
    }
}
