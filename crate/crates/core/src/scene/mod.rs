//! Synthetic tabletop scenes: sampling, top-view rendering, scripted
//! demonstrations, instructions and the geometric success checker.
//!
//! Frame: the table plane is `z = 0`, `+x` points away from the robot
//! base, `+y` runs along the table edge. All lengths are meters.

mod config;
mod instruction;
mod kinematics;
mod render;
mod sample;
mod trajectory;

pub use config::{DatasetConfig, Variability, PRESET_NAMES};
pub use instruction::{make_instruction, TokenSequence, Vocabulary, L_MAX, PAD, VOCABULARY};
pub use kinematics::{check_success, check_success_with, simulate_kinematics, FinalState, Outcome, Thresholds};
pub use render::{render_topview, ImageTensor, IMAGE_SIZE};
pub use sample::sample_scene;
pub use trajectory::{median_script_length, synthesize_trajectory, Trajectory, T_MAX};

use serde::{Deserialize, Serialize};

/// Half-width of the square workspace objects are placed in.
pub const WORKSPACE_HALF: f64 = 0.25;
/// Slack allowed for end-effector positions outside the workspace.
pub const WORKSPACE_SLACK: f64 = 0.5;
pub const NOMINAL_TARGET: [f64; 2] = [0.0, 0.10];
pub const NOMINAL_DRAWER: [f64; 2] = [0.0, -0.12];
pub const POSITION_JITTER: f64 = 0.05;
pub const BASE_Y_RANGE: f64 = 0.20;
pub const BASE_X: f64 = -0.30;
pub const MIN_SEPARATION: f64 = 0.08;
/// Height of an object's centroid when it rests on the table.
pub const OBJECT_REST_Z: f64 = 0.02;
/// Height of an object's centroid when it rests on the drawer floor.
pub const DRAWER_REST_Z: f64 = 0.01;
pub const DRAWER_HALF: f64 = 0.06;
pub const CAVITY_HALF: f64 = 0.045;
pub const DRAWER_TRAVEL: f64 = 0.06;
pub const HANDLE_Z: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Apple,
    Lemon,
    Soap,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Apple, ObjectKind::Lemon, ObjectKind::Soap];

    pub fn word(self) -> &'static str {
        match self {
            ObjectKind::Apple => "apple",
            ObjectKind::Lemon => "lemon",
            ObjectKind::Soap => "soap",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Reach,
    Lift,
    MoveLeft,
    MoveRight,
    ReachLiftInsert,
    ReachLiftInsertClose,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Reach,
        Task::Lift,
        Task::MoveLeft,
        Task::MoveRight,
        Task::ReachLiftInsert,
        Task::ReachLiftInsertClose,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Reach => "reach",
            Task::Lift => "lift",
            Task::MoveLeft => "move_left",
            Task::MoveRight => "move_right",
            Task::ReachLiftInsert => "reach_lift_insert",
            Task::ReachLiftInsertClose => "reach_lift_insert_close",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn needs_drawer(self) -> bool {
        matches!(self, Task::ReachLiftInsert | Task::ReachLiftInsertClose)
    }

    /// Number of scripted stages; trajectory length grows with it.
    pub fn stage_count(self) -> usize {
        match self {
            Task::Reach => 1,
            Task::Lift => 2,
            Task::MoveLeft | Task::MoveRight => 3,
            Task::ReachLiftInsert => 3,
            Task::ReachLiftInsertClose => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub kind: ObjectKind,
    pub position: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drawer {
    /// Center of the cavity while the drawer is open.
    pub position: [f64; 2],
    pub open: bool,
}

impl Drawer {
    /// Point the end-effector pushes on to close the drawer.
    pub fn handle(&self) -> [f64; 3] {
        [self.position[0] - DRAWER_HALF - 0.01, self.position[1], HANDLE_Z]
    }

    pub fn cavity_contains(&self, xy: [f64; 2]) -> bool {
        (xy[0] - self.position[0]).abs() <= CAVITY_HALF && (xy[1] - self.position[1]).abs() <= CAVITY_HALF
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    pub target_index: usize,
    pub robot_base_y: f64,
    pub drawer: Option<Drawer>,
    pub task: Task,
    pub variability: Variability,
}

impl SceneSpec {
    pub fn target(&self) -> &SceneObject {
        &self.objects[self.target_index]
    }

    pub fn home(&self) -> [f64; 3] {
        [-0.20, self.robot_base_y, 0.15]
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
