//! Social-force crowd simulation for synthetic training and test scenes.
//!
//! Each agent relaxes toward its preferred velocity (toward its goal, slowing
//! on arrival) and is pushed away from every other agent by an isotropic
//! exponential repulsion. Integration runs at 25 Hz and is decimated to the
//! 2.5 Hz output rate. Scenes add a small random velocity perturbation per
//! step so that trajectories are not perfectly predictable.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::ConfigError;
use crate::dataio::{Record, TrajectoryDataset, DEFAULT_FRAME_RATE};
use crate::error::{Error, Result};

/// Integration steps per output frame (25 Hz inside, 2.5 Hz out).
pub const DECIMATION: usize = 10;
pub const DEFAULT_FRAMES: usize = 40;
/// Lateral gap of the parallel template: where repulsion and goal attraction
/// balance under the default forces.
pub const PARALLEL_SPACING: f64 = 3.4;

#[derive(Clone, Debug, PartialEq)]
pub struct ForceConfig {
    /// Preferred walking speed in m/s; agents draw theirs around this value.
    pub desired_speed: f64,
    /// Time constant of the goal attraction, seconds.
    pub relaxation_time: f64,
    /// Repulsion magnitude at zero distance, m/s².
    pub repulsion_strength: f64,
    /// Decay length of the repulsion, metres.
    pub repulsion_range: f64,
    /// Distance from the goal within which the preferred speed ramps down.
    pub arrival_radius: f64,
    /// Integration step in seconds.
    pub dt: f64,
    /// Speed limit as a multiple of each agent's preferred speed.
    pub speed_cap: f64,
    /// Agents are kept inside `[-bounds, bounds]²`.
    pub bounds: f64,
    /// Standard deviation of the random velocity perturbation, m/s per sqrt(s).
    pub noise: f64,
}

impl Default for ForceConfig {
    fn default() -> Self {
        Self {
            desired_speed: 1.3,
            relaxation_time: 1.5,
            repulsion_strength: 10.0,
            repulsion_range: 0.5,
            arrival_radius: 1.0,
            dt: 1.0 / (DEFAULT_FRAME_RATE * DECIMATION as f64),
            speed_cap: 1.3,
            bounds: 50.0,
            noise: 0.15,
        }
    }
}

impl ForceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("desired_speed", self.desired_speed),
            ("relaxation_time", self.relaxation_time),
            ("repulsion_range", self.repulsion_range),
            ("arrival_radius", self.arrival_radius),
            ("dt", self.dt),
            ("speed_cap", self.speed_cap),
            ("bounds", self.bounds),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid { key: key.into(), msg: format!("must be finite and > 0, got {v}") });
            }
        }
        for (key, v) in [("repulsion_strength", self.repulsion_strength), ("noise", self.noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid { key: key.into(), msg: format!("must be finite and >= 0, got {v}") });
            }
        }
        if self.dt > 0.4 {
            return Err(ConfigError::Invalid { key: "dt".into(), msg: format!("must be <= 0.4 s, got {}", self.dt) });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agent {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
    /// This agent's preferred speed, m/s.
    pub speed: f64,
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn cap_speed(v: [f64; 2], limit: f64) -> [f64; 2] {
    let s = norm(v);
    if s > limit {
        [v[0] * limit / s, v[1] * limit / s]
    } else {
        v
    }
}

/// Acceleration on agent `i` from its goal and every other agent.
fn force(agents: &[Agent], i: usize, cfg: &ForceConfig) -> [f64; 2] {
    let a = &agents[i];
    let to_goal = [a.goal[0] - a.pos[0], a.goal[1] - a.pos[1]];
    let dist = norm(to_goal);
    let mut desired = [0.0, 0.0];
    if dist > 0.0 {
        let speed = a.speed * (dist / cfg.arrival_radius).min(1.0);
        desired = [to_goal[0] / dist * speed, to_goal[1] / dist * speed];
    }
    let mut f = [(desired[0] - a.vel[0]) / cfg.relaxation_time, (desired[1] - a.vel[1]) / cfg.relaxation_time];
    for (j, b) in agents.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = [a.pos[0] - b.pos[0], a.pos[1] - b.pos[1]];
        let r = norm(d);
        if r > 0.0 {
            let mag = cfg.repulsion_strength * (-r / cfg.repulsion_range).exp();
            f[0] += mag * d[0] / r;
            f[1] += mag * d[1] / r;
        }
    }
    f
}

/// Advance every agent by `dt` (semi-implicit Euler: velocity first, then position).
pub fn social_force_step(agents: &[Agent], cfg: &ForceConfig, dt: f64) -> Result<Vec<Agent>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("time step must be > 0, got {dt}")));
    }
    let mut next = Vec::with_capacity(agents.len());
    for (i, a) in agents.iter().enumerate() {
        let f = force(agents, i, cfg);
        let vel = cap_speed([a.vel[0] + dt * f[0], a.vel[1] + dt * f[1]], cfg.speed_cap * a.speed);
        let pos = [
            (a.pos[0] + dt * vel[0]).clamp(-cfg.bounds, cfg.bounds),
            (a.pos[1] + dt * vel[1]).clamp(-cfg.bounds, cfg.bounds),
        ];
        if !(pos.iter().chain(&vel).all(|v| v.is_finite())) {
            return Err(Error::Numerics(format!("agent {i} left the finite range")));
        }
        next.push(Agent { pos, vel, ..*a });
    }
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Template {
    /// Side-by-side walkers sharing a heading.
    Parallel,
    /// Two streams converging into one corridor.
    Merge,
    /// Two perpendicular flows through a shared crossing.
    Crossing,
    /// Walkers converging on a standing group.
    GroupMeet,
    /// Many agents with random goals in a small area.
    DenseCrowd,
}

impl Template {
    pub const ALL: [Template; 5] = [Template::Parallel, Template::Merge, Template::Crossing, Template::GroupMeet, Template::DenseCrowd];
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Parallel => "parallel",
            Template::Merge => "merge",
            Template::Crossing => "crossing",
            Template::GroupMeet => "group-meet",
            Template::DenseCrowd => "dense-crowd",
        })
    }
}

impl FromStr for Template {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Template::ALL.into_iter().find(|t| t.to_string() == s).ok_or_else(|| ConfigError::Invalid {
            key: "template".into(),
            msg: format!("unknown template {s:?}; expected one of parallel, merge, crossing, group-meet, dense-crowd"),
        })
    }
}

fn jitter(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    rng.random_range(-scale..=scale)
}

fn walker(rng: &mut ChaCha8Rng, cfg: &ForceConfig, pos: [f64; 2], goal: [f64; 2], speed_spread: f64) -> Agent {
    let speed = (cfg.desired_speed + jitter(rng, speed_spread)).max(0.2);
    let d = [goal[0] - pos[0], goal[1] - pos[1]];
    // Start off the preferred velocity so the approach to it shows in the tracks.
    let heading = d[1].atan2(d[0]) + jitter(rng, 0.6);
    let start_speed = speed * rng.random_range(0.3..1.3);
    Agent { pos, vel: [start_speed * heading.cos(), start_speed * heading.sin()], goal, speed }
}

fn initial_agents(template: Template, n: usize, cfg: &ForceConfig, rng: &mut ChaCha8Rng) -> Vec<Agent> {
    let mut agents = Vec::with_capacity(n);
    match template {
        Template::Parallel => {
            // Shared speed keeps the formation. Closer pairs are pushed out to
            // about this gap within a few seconds and then hold it.
            let speed = cfg.desired_speed + jitter(rng, 0.1);
            for k in 0..n {
                let y = k as f64 * PARALLEL_SPACING;
                let pos = [-12.0 + jitter(rng, 0.05), y];
                agents.push(Agent { pos, vel: [speed, 0.0], goal: [40.0, y], speed });
            }
        }
        Template::Crossing => {
            for k in 0..n {
                let lane = jitter(rng, 2.0);
                let start = -10.0 - jitter(rng, 2.0).abs() - (k / 2) as f64 * 1.5;
                let (pos, goal) = if k % 2 == 0 { ([start, lane], [40.0, lane]) } else { ([lane, start], [lane, 40.0]) };
                agents.push(walker(rng, cfg, pos, goal, 0.2));
            }
        }
        Template::Merge => {
            for k in 0..n {
                let side = if k % 2 == 0 { -1.0 } else { 1.0 };
                let back = (k / 2) as f64 * 1.5 + jitter(rng, 0.5);
                let pos = [-10.0 - back, side * (6.0 + jitter(rng, 1.0))];
                let goal = [40.0, jitter(rng, 0.5)];
                agents.push(walker(rng, cfg, pos, goal, 0.2));
            }
        }
        Template::GroupMeet => {
            let standing = n / 2;
            for k in 0..n {
                let angle = k as f64 / n.max(1) as f64 * std::f64::consts::TAU;
                let spot = [1.2 * angle.cos(), 1.2 * angle.sin()];
                if k < standing {
                    agents.push(Agent { pos: spot, vel: [0.0, 0.0], goal: spot, speed: cfg.desired_speed });
                } else {
                    let r = 12.0 + jitter(rng, 3.0);
                    let a = angle + jitter(rng, 0.4);
                    agents.push(walker(rng, cfg, [r * a.cos(), r * a.sin()], [1.8 * angle.cos(), 1.8 * angle.sin()], 0.2));
                }
            }
        }
        Template::DenseCrowd => {
            let half = (n as f64).sqrt() * 1.2;
            for k in 0..n {
                let pos = [jitter(rng, half), jitter(rng, half)];
                let dir = if k % 2 == 0 { 1.0 } else { -1.0 };
                let goal = [dir * 40.0, jitter(rng, half)];
                agents.push(walker(rng, cfg, pos, goal, 0.2));
            }
        }
    }
    // Nudge exact overlaps apart so the repulsion direction is defined.
    for i in 0..agents.len() {
        for j in 0..i {
            if agents[i].pos == agents[j].pos {
                agents[i].pos[0] += 0.3;
            }
        }
    }
    agents
}

/// Simulate a scene and return its `frames` output frames at 2.5 Hz.
pub fn simulate(template: Template, n: usize, seed: u64, cfg: &ForceConfig, frames: usize) -> Result<Vec<Vec<Agent>>> {
    if n == 0 {
        return Err(Error::Input("a scene needs at least one agent".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = initial_agents(template, n, cfg, &mut rng);
    let noise = cfg.noise * cfg.dt.sqrt();
    let mut out = Vec::with_capacity(frames);
    for frame in 0..frames {
        if frame > 0 {
            for _ in 0..DECIMATION {
                agents = social_force_step(&agents, cfg, cfg.dt)?;
                if noise > 0.0 {
                    for a in &mut agents {
                        if a.pos == a.goal && a.vel == [0.0, 0.0] {
                            continue; // standing still at the goal
                        }
                        let kick = [noise * rng.sample::<f64, _>(StandardNormal), noise * rng.sample::<f64, _>(StandardNormal)];
                        a.vel = cap_speed([a.vel[0] + kick[0], a.vel[1] + kick[1]], cfg.speed_cap * a.speed);
                    }
                }
            }
        }
        out.push(agents.clone());
    }
    Ok(out)
}

/// A synthetic scene in the four-column trajectory format: frames 0, 1, ... at
/// 2.5 Hz, track ids 1..=n, every agent present in every frame.
pub fn generate_scene_with(template: Template, n: usize, seed: u64, cfg: &ForceConfig, frames: usize) -> Result<TrajectoryDataset> {
    if frames < 20 {
        return Err(Error::Input(format!("scenes need at least 20 frames, got {frames}")));
    }
    let rollout = simulate(template, n, seed, cfg, frames)?;
    let mut records = Vec::with_capacity(n * frames);
    for (f, agents) in rollout.iter().enumerate() {
        for (i, a) in agents.iter().enumerate() {
            records.push(Record { frame: f as i64, track: i as i64 + 1, x: a.pos[0], y: a.pos[1] });
        }
    }
    Ok(TrajectoryDataset::new(records, DEFAULT_FRAME_RATE)?.with_scene(format!("{template}-{seed}")))
}

pub fn generate_scene(template: Template, n: usize, seed: u64) -> Result<TrajectoryDataset> {
    generate_scene_with(template, n, seed, &ForceConfig::default(), DEFAULT_FRAMES)
}
