use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;

use super::board::ObservationSet;
use crate::error::{Error, Result};
use crate::pose::{mean_rotation, relative_pose, Pose};

/// Initial rig state expressed in the camera-0 frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RigInit {
    /// World(camera 0)-to-camera poses; entry 0 is the identity.
    pub cameras: Vec<Pose>,
    /// Board-to-world poses per capture.
    pub boards: BTreeMap<usize, Pose>,
}

fn average_poses(poses: &[Pose]) -> Pose {
    let rots: Vec<_> = poses.iter().map(Pose::rotation).collect();
    let t = poses.iter().fold(Vector3::zeros(), |a, p| a + p.t) / poses.len() as f64;
    Pose::from_rotation(&mean_rotation(rots.iter()), t)
}

/// Chains camera poses along a spanning tree of the camera co-visibility
/// graph rooted at camera 0. Edges with more shared captures are preferred
/// (weight `1 / #shared`), and each edge averages all its shared captures.
///
/// `board_poses` holds per-record board-to-camera poses, keyed like the
/// observations.
pub fn init_rig(obs: &ObservationSet, board_poses: &BTreeMap<(usize, usize), Pose>, num_cameras: usize) -> Result<RigInit> {
    if num_cameras == 0 {
        return Err(Error::Empty("rig has no cameras"));
    }
    for key in obs.records().map(|(k, _)| k) {
        if !board_poses.contains_key(key) {
            return Err(Error::InvalidArgument(format!(
                "missing board pose for camera {} capture {}",
                key.0, key.1
            )));
        }
        if key.0 >= num_cameras {
            return Err(Error::InvalidArgument(format!("observation for camera {} of {num_cameras}", key.0)));
        }
    }

    let mut by_capture: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(i, k) in obs.records().map(|(k, _)| k) {
        by_capture.entry(k).or_default().insert(i);
    }
    let mut shared: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (&k, cams) in &by_capture {
        for &i in cams {
            for &j in cams {
                if i < j {
                    shared.entry((i, j)).or_default().push(k);
                }
            }
        }
    }

    // Prim's algorithm from camera 0; ties resolved by lowest camera ids.
    let mut cameras: Vec<Option<Pose>> = vec![None; num_cameras];
    cameras[0] = Some(Pose::identity());
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (&(a, b), ks) in &shared {
            let (from, to) = match (cameras[a].is_some(), cameras[b].is_some()) {
                (true, false) => (a, b),
                (false, true) => (b, a),
                _ => continue,
            };
            let w = 1.0 / ks.len() as f64;
            if best.is_none_or(|(bw, _, _)| w < bw) {
                best = Some((w, from, to));
            }
        }
        let Some((_, from, to)) = best else { break };
        let key = (from.min(to), from.max(to));
        let edges: Vec<Pose> = shared[&key]
            .iter()
            .map(|&k| relative_pose(&board_poses[&(to, k)], &board_poses[&(from, k)]))
            .collect();
        let edge = average_poses(&edges);
        cameras[to] = Some(edge.compose(cameras[from].as_ref().unwrap()));
    }

    let unreachable: Vec<usize> = (0..num_cameras).filter(|&i| cameras[i].is_none()).collect();
    if !unreachable.is_empty() {
        return Err(Error::Disconnected { cameras: unreachable });
    }
    let cameras: Vec<Pose> = cameras.into_iter().map(Option::unwrap).collect();

    let mut boards = BTreeMap::new();
    for (&k, cams) in &by_capture {
        let estimates: Vec<Pose> = cams
            .iter()
            .map(|&i| cameras[i].inverse().compose(&board_poses[&(i, k)]))
            .collect();
        boards.insert(k, average_poses(&estimates));
    }
    Ok(RigInit { cameras, boards })
}
