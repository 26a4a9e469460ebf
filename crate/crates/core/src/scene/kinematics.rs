//! Kinematic stand-in for grasp physics. An object attaches when the
//! gripper closes near its center and then follows the end-effector; it
//! drops straight down on release.

use serde::{Deserialize, Serialize};

use super::*;
use crate::error::{Error, Result};

pub const GRASP_RADIUS: f64 = 0.04;
pub const HANDLE_RADIUS: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub reach_m: f64,
    pub move_m: f64,
    pub lift_m: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { reach_m: 0.06, move_m: 0.10, lift_m: 0.10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinalState {
    pub objects: Vec<[f64; 3]>,
    /// Highest centroid height reached by each object.
    pub max_z: Vec<f64>,
    pub drawer: Option<Drawer>,
    pub attached: Option<usize>,
    /// Smallest end-effector distance to the target's initial centroid.
    pub min_target_distance: f64,
}

fn initial_positions(scene: &SceneSpec) -> Vec<[f64; 3]> {
    scene.objects.iter().map(|o| [o.position[0], o.position[1], OBJECT_REST_Z]).collect()
}

pub fn simulate_kinematics(scene: &SceneSpec, traj: &Trajectory) -> FinalState {
    let mut pos = initial_positions(scene);
    let target0 = pos[scene.target_index];
    let mut max_z: Vec<f64> = pos.iter().map(|p| p[2]).collect();
    let mut attached: Option<(usize, [f64; 3])> = None;
    let mut drawer = scene.drawer;
    let mut engaged_x: Option<f64> = None;
    let mut prev_closed = false;
    let mut min_target_distance = f64::INFINITY;

    for s in traj.steps() {
        let ee = [s[0], s[1], s[2]];
        let closed = s[3] > 0.5;
        min_target_distance = min_target_distance.min(dist3(ee, target0));

        if closed && !prev_closed && attached.is_none() {
            let nearest = pos
                .iter()
                .enumerate()
                .map(|(i, p)| (i, dist3(*p, ee)))
                .filter(|(_, d)| *d <= GRASP_RADIUS)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = nearest {
                let p = pos[i];
                attached = Some((i, [p[0] - ee[0], p[1] - ee[1], p[2] - ee[2]]));
            }
        }
        if !closed && prev_closed {
            if let Some((i, _)) = attached.take() {
                let xy = [pos[i][0], pos[i][1]];
                let into_drawer = drawer.is_some_and(|d| d.cavity_contains(xy));
                pos[i][2] = if into_drawer { DRAWER_REST_Z } else { OBJECT_REST_Z };
            }
        }
        if let Some((i, off)) = attached {
            pos[i] = [ee[0] + off[0], ee[1] + off[1], ee[2] + off[2]];
            max_z[i] = max_z[i].max(pos[i][2]);
        }

        if let Some(d) = drawer.as_mut().filter(|d| d.open) {
            if attached.is_some() {
                engaged_x = None;
            } else {
                if engaged_x.is_none() && dist3(ee, d.handle()) <= HANDLE_RADIUS {
                    engaged_x = Some(ee[0]);
                }
                if engaged_x.is_some_and(|x0| ee[0] - x0 >= DRAWER_TRAVEL - 1e-9) {
                    for p in pos.iter_mut().filter(|p| d.cavity_contains([p[0], p[1]]) && p[2] <= DRAWER_REST_Z + 1e-9) {
                        p[0] += DRAWER_TRAVEL;
                    }
                    d.position[0] += DRAWER_TRAVEL;
                    d.open = false;
                }
            }
        }
        prev_closed = closed;
    }

    FinalState { objects: pos, max_z, drawer, attached: attached.map(|(i, _)| i), min_target_distance }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    /// Closest approach of the end-effector to the target centroid.
    pub final_distance_m: f64,
    /// Target displacement from its initial centroid.
    pub displacement_m: [f64; 3],
    pub max_height_gain_m: f64,
}

pub fn check_success(scene: &SceneSpec, traj: &Trajectory) -> Result<Outcome> {
    check_success_with(scene, traj, &Thresholds::default())
}

pub fn check_success_with(scene: &SceneSpec, traj: &Trajectory, th: &Thresholds) -> Result<Outcome> {
    if traj.is_empty() {
        return Err(Error::InvalidTrajectory("empty trajectory".into()));
    }
    if traj.steps().iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::InvalidTrajectory("NaN in trajectory".into()));
    }
    let state = simulate_kinematics(scene, traj);
    let i = scene.target_index;
    let p0 = initial_positions(scene)[i];
    let p1 = state.objects[i];
    let displacement = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let gain = state.max_z[i] - p0[2];
    // lateral moves must be carried, not pushed along the table
    let lifted = gain >= 0.5 * th.lift_m;
    let inserted = || {
        state.attached != Some(i)
            && state.drawer.is_some_and(|d| d.cavity_contains([p1[0], p1[1]]))
            && (p1[2] - DRAWER_REST_Z).abs() < 1e-9
    };
    let success = match scene.task {
        Task::Reach => state.min_target_distance < th.reach_m,
        Task::Lift => displacement[2] >= th.lift_m || gain >= th.lift_m,
        Task::MoveLeft => lifted && -displacement[1] >= th.move_m,
        Task::MoveRight => lifted && displacement[1] >= th.move_m,
        Task::ReachLiftInsert => inserted(),
        Task::ReachLiftInsertClose => inserted() && state.drawer.is_some_and(|d| !d.open),
    };
    Ok(Outcome { success, final_distance_m: state.min_target_distance, displacement_m: displacement, max_height_gain_m: gain })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(task: Task) -> SceneSpec {
        SceneSpec {
            objects: vec![SceneObject { kind: ObjectKind::Soap, position: [0.0, 0.1] }],
            target_index: 0,
            robot_base_y: 0.0,
            drawer: task.needs_drawer().then_some(Drawer { position: NOMINAL_DRAWER, open: true }),
            task,
            variability: Variability::Fixed,
        }
    }

    fn path(points: &[[f64; 4]]) -> Trajectory {
        Trajectory::new(points.to_vec()).unwrap()
    }

    #[test]
    fn far_grasp_does_not_attach() {
        let t = path(&[[0.0, 0.2, 0.02, 0.0], [0.0, 0.2, 0.02, 1.0], [0.0, 0.2, 0.2, 1.0]]);
        let st = simulate_kinematics(&scene(Task::Lift), &t);
        assert_eq!(st.objects[0], [0.0, 0.1, OBJECT_REST_Z]);
        assert_eq!(st.attached, None);
    }

    #[test]
    fn grasp_then_lift_tracks() {
        let z = OBJECT_REST_Z;
        let t = path(&[[0.0, 0.1, z, 0.0], [0.0, 0.1, z, 1.0], [0.0, 0.1, z + 0.12, 1.0]]);
        let st = simulate_kinematics(&scene(Task::Lift), &t);
        assert!((st.objects[0][2] - (z + 0.12)).abs() < 1e-12);
        assert!(check_success(&scene(Task::Lift), &t).unwrap().success);
    }

    #[test]
    fn release_drops_to_table() {
        let z = OBJECT_REST_Z;
        let t = path(&[[0.0, 0.1, z, 1.0], [0.0, 0.1, 0.15, 1.0], [0.0, 0.2, 0.15, 1.0], [0.0, 0.2, 0.15, 0.0]]);
        let st = simulate_kinematics(&scene(Task::MoveRight), &t);
        assert_eq!(st.objects[0][2], z);
        assert!((st.objects[0][1] - 0.2).abs() < 1e-12);
        assert_eq!(st.max_z[0], 0.15);
        let o = check_success(&scene(Task::MoveRight), &t).unwrap();
        assert!(o.success);
        assert!((o.displacement_m[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn reach_threshold_boundary() {
        let s = scene(Task::Reach);
        let near = path(&[[0.0, 0.1 + 0.059, OBJECT_REST_Z, 0.0]]);
        let o = check_success(&s, &near).unwrap();
        assert!(o.success);
        assert!((o.final_distance_m - 0.059).abs() < 1e-12);
        let far = path(&[[0.0, 0.1 + 0.061, OBJECT_REST_Z, 0.0]]);
        assert!(!check_success(&s, &far).unwrap().success);
    }

    #[test]
    fn short_move_fails() {
        let z = OBJECT_REST_Z;
        let t = path(&[[0.0, 0.1, z, 0.0], [0.0, 0.1, z, 1.0], [0.0, 0.1, 0.14, 1.0], [0.0, 0.01, 0.14, 1.0]]);
        let o = check_success(&scene(Task::MoveLeft), &t).unwrap();
        assert!((o.displacement_m[1] + 0.09).abs() < 1e-12);
        assert!(!o.success);
    }

    #[test]
    fn dragging_is_not_a_move() {
        let z = OBJECT_REST_Z;
        let t = path(&[[0.0, 0.1, z, 0.0], [0.0, 0.1, z, 1.0], [0.0, -0.05, z, 1.0]]);
        assert!(!check_success(&scene(Task::MoveLeft), &t).unwrap().success);
    }

    #[test]
    fn drawer_closes_only_after_full_push() {
        let s = scene(Task::ReachLiftInsertClose);
        let h = s.drawer.unwrap().handle();
        let partial = path(&[[h[0], h[1], h[2], 0.0], [h[0] + 0.03, h[1], h[2], 0.0]]);
        assert!(simulate_kinematics(&s, &partial).drawer.unwrap().open);
        let full = path(&[[h[0] - 0.05, h[1], h[2], 0.0], [h[0], h[1], h[2], 0.0], [h[0] + DRAWER_TRAVEL, h[1], h[2], 0.0]]);
        let d = simulate_kinematics(&s, &full).drawer.unwrap();
        assert!(!d.open);
        assert!((d.position[0] - (NOMINAL_DRAWER[0] + DRAWER_TRAVEL)).abs() < 1e-12);
    }

    #[test]
    fn nan_is_rejected() {
        let t = Trajectory::from_raw(vec![[0.0, f64::NAN, 0.0, 0.0]]);
        assert!(matches!(check_success(&scene(Task::Reach), &t), Err(Error::InvalidTrajectory(_))));
    }
}
