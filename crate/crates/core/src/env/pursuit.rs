//! Point-mass pursuit world on the unit square.
//!
//! The ego disc walks toward a goal on the far side of a horizontal barrier
//! that is only passable through three gates, while adversary discs move
//! deterministically toward it. Reaching the goal and committing an
//! infraction are both absorbing.

use arrayvec::ArrayVec;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Environment, Featurize};

pub const MAX_ADVERSARIES: usize = 6;
pub const N_GATES: usize = 3;
const ARENA_SIZE: f64 = 1.0;

pub type Vec2 = [f64; 2];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PursuitConfig {
    pub n_adversaries: usize,
    pub ego_radius: f64,
    pub adversary_radius: f64,
    pub goal_radius: f64,
    pub adversary_speed: f64,
    pub max_step: f64,
    pub prior_step: f64,
    pub prior_sigma: f64,
    pub horizon: usize,
    pub barrier_y: f64,
    pub barrier_thickness: f64,
    pub gate_x: [f64; N_GATES],
    pub gate_width: f64,
    pub min_separation: f64,
    /// Distance kept between spawn points and the arena edge or barrier.
    pub spawn_margin: f64,
    pub penalty: f64,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        Self {
            n_adversaries: 3,
            ego_radius: 0.02,
            adversary_radius: 0.03,
            goal_radius: 0.04,
            adversary_speed: 0.01,
            max_step: 0.04,
            prior_step: 0.03,
            prior_sigma: 0.015,
            horizon: 40,
            barrier_y: 0.5,
            barrier_thickness: 0.01,
            gate_x: [0.2, 0.5, 0.8],
            gate_width: 0.12,
            min_separation: 0.1,
            spawn_margin: 0.05,
            penalty: 10_000.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Infraction {
    Collision,
    Wall,
    Perimeter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Active,
    Reached,
    Crashed(Infraction),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PursuitState {
    pub ego: Vec2,
    pub adversaries: ArrayVec<Vec2, MAX_ADVERSARIES>,
    pub goal: Vec2,
    pub status: Status,
}

#[derive(Clone, Debug)]
pub struct PursuitWorld {
    pub config: PursuitConfig,
    /// Solid barrier spans `[x0, x1]` between the gates.
    solid: Vec<(f64, f64)>,
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl PursuitWorld {
    pub fn new(config: PursuitConfig) -> Self {
        assert!(config.n_adversaries <= MAX_ADVERSARIES, "at most {MAX_ADVERSARIES} adversaries are supported");
        let mut gates: Vec<(f64, f64)> =
            config.gate_x.iter().map(|&x| (x - config.gate_width / 2.0, x + config.gate_width / 2.0)).collect();
        gates.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut solid = Vec::new();
        let mut cursor = 0.0;
        for (lo, hi) in gates {
            if lo > cursor {
                solid.push((cursor, lo));
            }
            cursor = cursor.max(hi);
        }
        if cursor < ARENA_SIZE {
            solid.push((cursor, ARENA_SIZE));
        }
        Self { config, solid }
    }

    pub fn gate_centers(&self) -> [Vec2; N_GATES] {
        self.config.gate_x.map(|x| [x, self.config.barrier_y])
    }

    /// Clamps a displacement to the maximum step norm, preserving direction.
    pub fn clamp_action(&self, a: Vec2) -> Vec2 {
        let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
        if norm > self.config.max_step {
            let s = self.config.max_step / norm;
            [a[0] * s, a[1] * s]
        } else {
            a
        }
    }

    /// Mean of the prior step: toward the goal, length `prior_step` (or the
    /// remaining distance when closer than that).
    pub fn prior_mean(&self, state: &PursuitState) -> Vec2 {
        let d = [state.goal[0] - state.ego[0], state.goal[1] - state.ego[1]];
        let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if norm == 0.0 {
            return [0.0, 0.0];
        }
        let scale = self.config.prior_step.min(norm) / norm;
        [d[0] * scale, d[1] * scale]
    }

    fn overlaps_barrier(&self, p: Vec2) -> bool {
        let c = &self.config;
        let y0 = c.barrier_y - c.barrier_thickness / 2.0;
        let y1 = c.barrier_y + c.barrier_thickness / 2.0;
        let dy = if p[1] < y0 {
            y0 - p[1]
        } else if p[1] > y1 {
            p[1] - y1
        } else {
            0.0
        };
        if dy >= c.ego_radius {
            return false;
        }
        self.solid.iter().any(|&(x0, x1)| {
            let dx = if p[0] < x0 {
                x0 - p[0]
            } else if p[0] > x1 {
                p[0] - x1
            } else {
                0.0
            };
            dx * dx + dy * dy < c.ego_radius * c.ego_radius
        })
    }

    /// Checks the ego disc along the straight path `from -> to` against the
    /// solid barrier, sub-sampled finely enough that it cannot tunnel.
    fn path_hits_barrier(&self, from: Vec2, to: Vec2) -> bool {
        let c = &self.config;
        let band = c.barrier_thickness / 2.0 + c.ego_radius;
        let lo = from[1].min(to[1]);
        let hi = from[1].max(to[1]);
        if hi < c.barrier_y - band || lo > c.barrier_y + band {
            return false;
        }
        let len = dist(from, to);
        let pieces = ((len / (0.25 * c.ego_radius.min(c.barrier_thickness))).ceil() as usize).max(1);
        (0..=pieces).any(|i| {
            let u = i as f64 / pieces as f64;
            self.overlaps_barrier([from[0] + u * (to[0] - from[0]), from[1] + u * (to[1] - from[1])])
        })
    }

    fn outside_arena(p: Vec2) -> bool {
        !(0.0..=ARENA_SIZE).contains(&p[0]) || !(0.0..=ARENA_SIZE).contains(&p[1])
    }

    fn collides(&self, state: &PursuitState) -> bool {
        let r = self.config.ego_radius + self.config.adversary_radius;
        state.adversaries.iter().any(|&o| dist(o, state.ego) < r)
    }

    /// Which infraction, if any, the geometry of `state` exhibits.
    pub fn infraction(&self, state: &PursuitState) -> Option<Infraction> {
        if let Status::Crashed(kind) = state.status {
            return Some(kind);
        }
        if Self::outside_arena(state.ego) {
            Some(Infraction::Perimeter)
        } else if self.collides(state) {
            Some(Infraction::Collision)
        } else if self.overlaps_barrier(state.ego) {
            Some(Infraction::Wall)
        } else {
            None
        }
    }

    fn uniform_in<R: Rng + ?Sized>(rng: &mut R, x: (f64, f64), y: (f64, f64)) -> Vec2 {
        [rng.random_range(x.0..x.1), rng.random_range(y.0..y.1)]
    }
}

impl Default for PursuitWorld {
    fn default() -> Self {
        Self::new(PursuitConfig::default())
    }
}

impl Environment for PursuitWorld {
    type State = PursuitState;
    type Action = Vec2;

    /// Ego and adversaries start below the barrier, the goal above it.
    /// Adversary placements closer than `min_separation` to the ego are
    /// redrawn.
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> PursuitState {
        let c = &self.config;
        let m = c.spawn_margin;
        let xs = (m, ARENA_SIZE - m);
        let below = (m, c.barrier_y - c.barrier_thickness / 2.0 - m);
        let above = (c.barrier_y + c.barrier_thickness / 2.0 + m, ARENA_SIZE - m);
        let ego = Self::uniform_in(rng, xs, below);
        let goal = Self::uniform_in(rng, xs, above);
        let mut adversaries = ArrayVec::new();
        while adversaries.len() < c.n_adversaries {
            let p = Self::uniform_in(rng, (0.0, ARENA_SIZE), (0.0, below.1 + m));
            if dist(p, ego) >= c.min_separation {
                adversaries.push(p);
            }
        }
        PursuitState { ego, adversaries, goal, status: Status::Active }
    }

    fn transition(&self, state: &PursuitState, action: &Vec2) -> PursuitState {
        if self.is_terminal(state) {
            return state.clone();
        }
        let c = &self.config;
        let a = self.clamp_action(*action);
        let ego = [state.ego[0] + a[0], state.ego[1] + a[1]];
        let adversaries = state
            .adversaries
            .iter()
            .map(|&o| {
                let d = dist(o, state.ego);
                if d <= c.adversary_speed {
                    state.ego
                } else {
                    let s = c.adversary_speed / d;
                    [o[0] + (state.ego[0] - o[0]) * s, o[1] + (state.ego[1] - o[1]) * s]
                }
            })
            .collect();
        let mut next = PursuitState { ego, adversaries, goal: state.goal, status: Status::Active };
        let crossed = self.path_hits_barrier(state.ego, ego);
        next.status = match self.infraction(&next) {
            Some(kind) => Status::Crashed(kind),
            None if crossed => Status::Crashed(Infraction::Wall),
            None if dist(ego, state.goal) < c.goal_radius => Status::Reached,
            None => Status::Active,
        };
        next
    }

    fn prior_sample_into<R: Rng + ?Sized>(&self, state: &PursuitState, rng: &mut R, count: usize, out: &mut Vec<Vec2>) {
        let mu = self.prior_mean(state);
        let sigma = self.config.prior_sigma;
        out.extend((0..count).map(|_| {
            let zx: f64 = StandardNormal.sample(rng);
            let zy: f64 = StandardNormal.sample(rng);
            [mu[0] + sigma * zx, mu[1] + sigma * zy]
        }));
    }

    fn constraint_ok(&self, state: &PursuitState) -> bool {
        self.infraction(state).is_none()
    }

    fn penalty(&self) -> f64 {
        self.config.penalty
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn is_terminal(&self, state: &PursuitState) -> bool {
        state.status != Status::Active
    }
}

impl Featurize for PursuitWorld {
    /// `2 * (adversaries + gates + goal)`.
    fn state_dim(&self) -> usize {
        2 * (self.config.n_adversaries + N_GATES + 1)
    }

    fn action_dim(&self) -> usize {
        2
    }

    /// Ego-relative displacements, in order: adversaries (nearest first),
    /// gate centers, goal.
    fn state_features(&self, state: &PursuitState, out: &mut [f64]) {
        let e = state.ego;
        let mut adversaries = state.adversaries.clone();
        adversaries.sort_by(|a, b| dist(*a, e).total_cmp(&dist(*b, e)));
        let referents = adversaries.into_iter().chain(self.gate_centers()).chain(std::iter::once(state.goal));
        for (chunk, p) in out.chunks_exact_mut(2).zip(referents) {
            chunk[0] = (p[0] - e[0]) / ARENA_SIZE;
            chunk[1] = (p[1] - e[1]) / ARENA_SIZE;
        }
    }

    fn action_features(&self, action: &Vec2, out: &mut [f64]) {
        let a = self.clamp_action(*action);
        out[0] = a[0] / self.config.max_step;
        out[1] = a[1] / self.config.max_step;
    }

    fn feature_scales(&self) -> [f64; 2] {
        [ARENA_SIZE, self.config.max_step]
    }
}
