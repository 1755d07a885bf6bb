//! Planar arena with colored targets, a unicycle robot and a scripted expert.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};

use rand::Rng;
use serde::Serialize;

use crate::action_space::ActionCommand;
use crate::policy::{GoalInstruction, Image, Observation};

/// The arena is `[-ARENA_HALF, ARENA_HALF]²`.
pub const ARENA_HALF: f64 = 2.0;
pub const NUM_TARGETS: usize = 3;
/// Distance at which targets reach the top image row.
pub const RENDER_RANGE: f64 = 3.0;
pub const EXPERT_V_GAIN: f64 = 0.5;
pub const EXPERT_W_GAIN: f64 = 2.0;
pub const EXPERT_V_MAX: f64 = 0.5;
pub const EXPERT_W_MAX: f64 = 1.5;

const ROBOT_SPAWN: f64 = 1.5;
const TARGET_SPAWN: f64 = 1.8;
const MIN_TARGET_SEPARATION: f64 = 0.6;
const MIN_START_DISTANCE: f64 = 0.5;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Target {
    pub x: f64,
    pub y: f64,
    /// 0 red, 1 green, 2 blue; also the image channel and goal id.
    pub color: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldState {
    pub pose: Pose,
    pub targets: Vec<Target>,
    /// Index into `targets`.
    pub active_goal: usize,
    pub time_ns: u64,
}

impl WorldState {
    /// Random layout: robot in `[-1.5, 1.5]²` with any heading, three
    /// targets of distinct colors at least 0.6 m apart and 0.5 m from the
    /// robot.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let pose = Pose {
            x: rng.random_range(-ROBOT_SPAWN..=ROBOT_SPAWN),
            y: rng.random_range(-ROBOT_SPAWN..=ROBOT_SPAWN),
            theta: wrap_angle(rng.random_range(-PI..PI)),
        };
        let mut targets: Vec<Target> = Vec::with_capacity(NUM_TARGETS);
        while targets.len() < NUM_TARGETS {
            let x = rng.random_range(-TARGET_SPAWN..=TARGET_SPAWN);
            let y = rng.random_range(-TARGET_SPAWN..=TARGET_SPAWN);
            let clear = (x - pose.x).hypot(y - pose.y) >= MIN_START_DISTANCE
                && targets
                    .iter()
                    .all(|t| (x - t.x).hypot(y - t.y) >= MIN_TARGET_SEPARATION);
            if clear {
                targets.push(Target {
                    x,
                    y,
                    color: targets.len(),
                });
            }
        }
        Self {
            pose,
            targets,
            active_goal: rng.random_range(0..NUM_TARGETS),
            time_ns: 0,
        }
    }

    pub fn goal(&self) -> &Target {
        &self.targets[self.active_goal]
    }

    pub fn instruction(&self) -> GoalInstruction {
        GoalInstruction::new(self.goal().color).expect("target colors are valid goal ids")
    }

    pub fn distance_to_goal(&self) -> f64 {
        let g = self.goal();
        (g.x - self.pose.x).hypot(g.y - self.pose.y)
    }

    /// Bearing of the goal in the robot frame, in `(-π, π]`; positive is left.
    pub fn heading_error(&self) -> f64 {
        bearing(&self.pose, self.goal().x, self.goal().y)
    }

    /// Moves the active target to the other side of the robot's view,
    /// about 1.2 m away. The new bearing is ±60° with sign opposite to the
    /// current one, so a tracking controller must reverse its turn.
    pub fn shift_goal(&mut self) {
        self.shift_goal_against(self.heading_error())
    }

    /// Like [`shift_goal`](Self::shift_goal), placing the target on the side
    /// opposite to `turn` (positive is left), e.g. the last commanded ω.
    pub fn shift_goal_against(&mut self, turn: f64) {
        let side = if turn >= 0.0 { -1.0 } else { 1.0 };
        let limit = ARENA_HALF - 0.1;
        for angle in [FRAC_PI_3, FRAC_PI_3 * 1.25, FRAC_PI_2 * 0.9] {
            for dist in [1.2, 0.9, 0.6, 0.4] {
                let a = self.pose.theta + side * angle;
                let x = self.pose.x + dist * a.cos();
                let y = self.pose.y + dist * a.sin();
                if x.abs() <= limit && y.abs() <= limit {
                    let g = &mut self.targets[self.active_goal];
                    g.x = x;
                    g.y = y;
                    return;
                }
            }
        }
        // cornered: keep the bearing sign, clamp into the arena
        let a = self.pose.theta + side * FRAC_PI_3;
        let g = &mut self.targets[self.active_goal];
        g.x = (self.pose.x + 0.4 * a.cos()).clamp(-limit, limit);
        g.y = (self.pose.y + 0.4 * a.sin()).clamp(-limit, limit);
    }
}

fn bearing(pose: &Pose, x: f64, y: f64) -> f64 {
    wrap_angle((y - pose.y).atan2(x - pose.x) - pose.theta)
}

/// Unicycle step with clamping at the arena walls.
pub fn step_unicycle(pose: &Pose, cmd: ActionCommand, dt: f64) -> Pose {
    let v = cmd.linear_velocity;
    Pose {
        x: (pose.x + v * pose.theta.cos() * dt).clamp(-ARENA_HALF, ARENA_HALF),
        y: (pose.y + v * pose.theta.sin() * dt).clamp(-ARENA_HALF, ARENA_HALF),
        theta: wrap_angle(pose.theta + cmd.angular_velocity * dt),
    }
}

/// Proportional go-to-goal controller.
pub fn expert_command(world: &WorldState) -> ActionCommand {
    ActionCommand::new(
        (EXPERT_V_GAIN * world.distance_to_goal()).clamp(0.0, EXPERT_V_MAX),
        (EXPERT_W_GAIN * world.heading_error()).clamp(-EXPERT_W_MAX, EXPERT_W_MAX),
    )
}

/// Egocentric top-down-in-polar rendering.
///
/// Column encodes bearing (left edge +90°, right edge −90°), row encodes
/// distance (top edge at [`RENDER_RANGE`] and beyond, bottom edge at 0 m).
/// Each visible target is a 2×2-pixel square in its color channel centred
/// on its continuous image position and rasterized by area coverage, so the
/// intensity centroid recovers the exact bearing and distance.
pub fn render_observation(world: &WorldState, height: usize, width: usize) -> Observation {
    let mut image = Image::blank(height, width);
    for t in &world.targets {
        let b = bearing(&world.pose, t.x, t.y);
        if b.abs() > FRAC_PI_2 {
            continue;
        }
        let d = (t.x - world.pose.x).hypot(t.y - world.pose.y);
        // keep the square inside the frame so every target has the same mass
        let cx = ((1.0 - b / FRAC_PI_2) * width as f64 / 2.0).clamp(1.0, width as f64 - 1.0);
        let cy = (height as f64 * (1.0 - d.min(RENDER_RANGE) / RENDER_RANGE))
            .clamp(1.0, height as f64 - 1.0);
        let (r0, c0) = ((cy - 1.0).floor() as usize, (cx - 1.0).floor() as usize);
        for row in r0..(r0 + 3).min(height) {
            let wy = overlap(row as f64, cy - 1.0, cy + 1.0);
            for col in c0..(c0 + 3).min(width) {
                let w = wy * overlap(col as f64, cx - 1.0, cx + 1.0);
                if w > 0.0 {
                    let v = image.get(row, col, t.color) + w;
                    image.set(row, col, t.color, v);
                }
            }
        }
    }
    Observation::new(image, world.instruction())
}

/// Length of `[p, p + 1) ∩ [lo, hi)`.
fn overlap(p: f64, lo: f64, hi: f64) -> f64 {
    ((p + 1.0).min(hi) - p.max(lo)).max(0.0)
}
