use rand::Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const T_MAX: usize = 80;
/// End-effector travel per timestep.
pub const SPEED: f64 = 0.02;
const WAYPOINT_JITTER: f64 = 0.005;
const APPROACH_Z: f64 = 0.05;
const LIFT_HEIGHT: f64 = 0.12;
const MOVE_DISTANCE: f64 = 0.12;
const CARRY_Z: f64 = OBJECT_REST_Z + LIFT_HEIGHT;
const RELEASE_Z: f64 = 0.06;
const RETREAT_Z: f64 = 0.10;

/// End-effector path: one `[x, y, z, g]` row per timestep, gripper closed
/// iff `g > 0.5`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    steps: Vec<[f64; 4]>,
}

impl Trajectory {
    pub fn new(steps: Vec<[f64; 4]>) -> Result<Self> {
        if steps.is_empty() || steps.len() > T_MAX {
            return Err(Error::InvalidTrajectory(format!("length {} outside 1..={T_MAX}", steps.len())));
        }
        if steps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTrajectory("non-finite coordinate".into()));
        }
        if steps.iter().any(|s| !(0.0..=1.0).contains(&s[3])) {
            return Err(Error::InvalidTrajectory("gripper signal outside [0, 1]".into()));
        }
        Ok(Self { steps })
    }

    /// Builds from unchecked values, e.g. decoder output, keeping NaNs so
    /// the success checker can reject them.
    pub fn from_raw(steps: Vec<[f64; 4]>) -> Self {
        Self { steps }
    }

    pub fn steps(&self) -> &[[f64; 4]] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Zero-padded `t_max x 4` matrix plus validity mask.
    pub fn padded(&self, t_max: usize) -> (Vec<f32>, Vec<u8>) {
        let mut data = vec![0f32; t_max * 4];
        let mut mask = vec![0u8; t_max];
        for (t, s) in self.steps.iter().take(t_max).enumerate() {
            for c in 0..4 {
                data[t * 4 + c] = s[c] as f32;
            }
            mask[t] = 1;
        }
        (data, mask)
    }

    /// Inverse of [`Self::padded`]; the mask must be a non-empty prefix.
    pub fn from_padded(data: &[f32], mask: &[u8]) -> Result<Self> {
        if data.len() != mask.len() * 4 {
            return Err(Error::Shape(format!("{} values for {} mask entries", data.len(), mask.len())));
        }
        let len = mask.iter().take_while(|m| **m != 0).count();
        if mask[len..].iter().any(|m| *m != 0) {
            return Err(Error::InvalidTrajectory("mask is not a prefix".into()));
        }
        let steps = (0..len)
            .map(|t| [data[t * 4] as f64, data[t * 4 + 1] as f64, data[t * 4 + 2] as f64, data[t * 4 + 3] as f64])
            .collect();
        Self::new(steps)
    }
}

struct Script {
    steps: Vec<[f64; 4]>,
}

impl Script {
    fn start(p: [f64; 3]) -> Self {
        Self { steps: vec![[p[0], p[1], p[2], 0.0]] }
    }

    fn current(&self) -> [f64; 4] {
        *self.steps.last().expect("script starts non-empty")
    }

    fn move_to(&mut self, p: [f64; 3]) -> Result<()> {
        let lim = WORKSPACE_HALF + WORKSPACE_SLACK;
        if p[0].abs() > lim || p[1].abs() > lim || !(-WORKSPACE_SLACK..=0.15 + WORKSPACE_SLACK).contains(&p[2]) {
            return Err(Error::Generation(format!("waypoint {p:?} is outside the reachable workspace")));
        }
        let c = self.current();
        let d = dist3([c[0], c[1], c[2]], p);
        let n = (d / SPEED - 1e-9).ceil().max(0.0) as usize;
        for k in 1..=n {
            let f = k as f64 / n as f64;
            self.steps.push([c[0] + (p[0] - c[0]) * f, c[1] + (p[1] - c[1]) * f, c[2] + (p[2] - c[2]) * f, c[3]]);
        }
        Ok(())
    }

    fn gripper(&mut self, g: f64) {
        let mut c = self.current();
        c[3] = g;
        self.steps.push(c);
    }
}

/// Scripted demonstration for the scene's task: piecewise-linear waypoints
/// traversed at constant speed, with small jitter on the intermediate
/// waypoints.
pub fn synthesize_trajectory<R: Rng + ?Sized>(scene: &SceneSpec, rng: &mut R) -> Result<Trajectory> {
    let mut j = || rng.random_range(-WAYPOINT_JITTER..=WAYPOINT_JITTER);
    let [tx, ty] = scene.target().position;
    let mut s = Script::start(scene.home());
    s.move_to([tx + j(), ty + j(), APPROACH_Z])?;
    s.move_to([tx, ty, OBJECT_REST_Z])?;
    if scene.task == Task::Reach {
        return Trajectory::new(s.steps);
    }
    s.gripper(1.0);
    s.move_to([tx + j(), ty + j(), CARRY_Z + j()])?;
    let c = s.current();
    match scene.task {
        Task::Lift => {}
        Task::MoveLeft => s.move_to([c[0], c[1] - MOVE_DISTANCE + j(), c[2]])?,
        Task::MoveRight => s.move_to([c[0], c[1] + MOVE_DISTANCE + j(), c[2]])?,
        Task::ReachLiftInsert | Task::ReachLiftInsertClose => {
            let drawer = scene
                .drawer
                .ok_or_else(|| Error::Generation("insert task without a drawer".into()))?;
            let [dx, dy] = drawer.position;
            let (px, py) = (dx + j(), dy + j());
            s.move_to([px, py, c[2]])?;
            s.move_to([px, py, RELEASE_Z])?;
            s.gripper(0.0);
            if scene.task == Task::ReachLiftInsertClose {
                let h = drawer.handle();
                s.move_to([px, py, RETREAT_Z])?;
                s.move_to([h[0] - 0.03, h[1] + j(), RETREAT_Z])?;
                s.move_to([h[0] - 0.03, h[1], h[2]])?;
                s.move_to(h)?;
                s.move_to([h[0] + DRAWER_TRAVEL + 0.01, h[1], h[2]])?;
            }
        }
        Task::Reach => unreachable!(),
    }
    Trajectory::new(s.steps)
}

/// Median scripted length of `task` under the scene distribution of
/// `config`, over a fixed set of seeded trials.
pub fn median_script_length(config: &DatasetConfig, task: Task) -> Result<usize> {
    let cfg = DatasetConfig { tasks: vec![task], ..config.clone() };
    let mut lengths = (0..101)
        .map(|i| {
            let mut rng = rng_for(0, "median-length", i);
            let scene = sample_scene(&cfg, &mut rng)?;
            Ok(synthesize_trajectory(&scene, &mut rng)?.len())
        })
        .collect::<Result<Vec<_>>>()?;
    lengths.sort_unstable();
    Ok(lengths[lengths.len() / 2])
}
