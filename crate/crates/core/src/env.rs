//! A two-dimensional point-reaching task with an obstacle, scripted experts that
//! pass it on either side, offline dataset generation, and policy rollouts.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::dataset::{OfflineDataset, Transition};
use crate::error::{Error, Result};
use crate::meanflow::one_step_action;
use crate::nets::{CriticEnsemble, PolicyNet};
use crate::qlearning::{bound_loss, select_best_of_k};
use crate::tensor::Tensor;

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;

/// Behaviour noise of the scripted experts.
pub const EXPERT_NOISE_STD: f64 = 0.15;
/// Probability that a behaviour action is replaced by a uniform random one.
pub const EXPERT_RANDOM_PROB: f64 = 0.1;
/// Half-width of the square around the start from which dataset episodes begin.
pub const DATASET_START_JITTER: f64 = 0.1;
/// Fraction of dataset episodes driven by the [`Route::Direct`] demonstrator.
pub const DIRECT_EPISODE_PROB: f64 = 0.2;

/// Axis-aligned box `[min_x, max_x] × [min_y, max_y]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Obstacle {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Obstacle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointReachEnv {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub step_scale: f64,
    pub success_radius: f64,
    pub horizon: usize,
    pub obstacle: Obstacle,
    /// How far above or below the obstacle the experts route.
    pub waypoint_offset: f64,
}

impl Default for PointReachEnv {
    fn default() -> Self {
        PointReachEnv {
            start: [-0.7, 0.0],
            goal: [0.7, 0.0],
            step_scale: 0.1,
            success_radius: 0.1,
            horizon: 50,
            obstacle: Obstacle {
                min: [-0.15, -0.45],
                max: [0.15, 0.45],
            },
            waypoint_offset: 0.25,
        }
    }
}

/// Which side of the obstacle an expert passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    /// Above the obstacle (clockwise around it when travelling left to right).
    Over,
    /// Below the obstacle.
    Under,
    /// Straight at the goal, which stalls against the obstacle.
    Direct,
}

impl Route {
    /// Draws a route from the dataset mixture: [`Route::Direct`] with
    /// probability [`DIRECT_EPISODE_PROB`], otherwise either side equally.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Route {
        if rng.random::<f64>() < DIRECT_EPISODE_PROB {
            Route::Direct
        } else if rng.random::<bool>() {
            Route::Over
        } else {
            Route::Under
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub next: [f64; 2],
    pub reward: f64,
    pub success: bool,
}

fn clip_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

impl PointReachEnv {
    pub fn is_success(&self, p: [f64; 2]) -> bool {
        let d = ((p[0] - self.goal[0]).powi(2) + (p[1] - self.goal[1]).powi(2)).sqrt();
        d < self.success_radius
    }

    /// Intermediate target of a route; the goal itself for [`Route::Direct`].
    pub fn waypoint(&self, route: Route) -> [f64; 2] {
        let x = 0.5 * (self.obstacle.min[0] + self.obstacle.max[0]);
        match route {
            Route::Over => [x, self.obstacle.max[1] + self.waypoint_offset],
            Route::Under => [x, self.obstacle.min[1] - self.waypoint_offset],
            Route::Direct => self.goal,
        }
    }

    /// Noise-free expert action: head for the route's waypoint until level with
    /// it, then for the goal. Unit length unless the target is within one step.
    pub fn expert_action(&self, s: [f64; 2], route: Route) -> [f64; 2] {
        let wp = self.waypoint(route);
        let target = if s[0] < wp[0] { wp } else { self.goal };
        let d = [target[0] - s[0], target[1] - s[1]];
        let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let a = if norm > self.step_scale {
            [d[0] / norm, d[1] / norm]
        } else {
            [d[0] / self.step_scale, d[1] / self.step_scale]
        };
        [clip_unit(a[0]), clip_unit(a[1])]
    }

    /// Expert action with Gaussian noise and occasional uniform random actions.
    pub fn behavior_action<R: Rng + ?Sized>(
        &self,
        s: [f64; 2],
        route: Route,
        rng: &mut R,
    ) -> [f64; 2] {
        if rng.random::<f64>() < EXPERT_RANDOM_PROB {
            return [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        }
        let noise = Normal::new(0.0, EXPERT_NOISE_STD).expect("valid std");
        let a = self.expert_action(s, route);
        [
            clip_unit(a[0] + noise.sample(rng)),
            clip_unit(a[1] + noise.sample(rng)),
        ]
    }
}

/// One transition. The action is clipped to `[−1, 1]²`, the position is clamped
/// to `[−1, 1]²`, and moves that end inside the obstacle are rejected.
pub fn env_step(env: &PointReachEnv, s: [f64; 2], a: [f64; 2]) -> StepOutcome {
    let mut next = [0.0; 2];
    for k in 0..2 {
        let a_k = if a[k].is_nan() { 0.0 } else { clip_unit(a[k]) };
        next[k] = (s[k] + env.step_scale * a_k).clamp(-1.0, 1.0);
    }
    if env.obstacle.contains(next) {
        next = s;
    }
    let success = env.is_success(next);
    StepOutcome {
        next,
        reward: if success { 0.0 } else { -1.0 },
        success,
    }
}

/// Episodes from the behaviour mixture: each episode draws a route with
/// [`Route::sample`] and starts near the start position. Terminal flags mark success;
/// episodes that hit the horizon end without one.
pub fn gen_offline_dataset<R: Rng + ?Sized>(
    env: &PointReachEnv,
    n_episodes: usize,
    rng: &mut R,
) -> Result<OfflineDataset> {
    gen_offline_dataset_stats(env, n_episodes, rng).map(|(ds, _)| ds)
}

/// [`gen_offline_dataset`] also returning the fraction of successful episodes.
pub fn gen_offline_dataset_stats<R: Rng + ?Sized>(
    env: &PointReachEnv,
    n_episodes: usize,
    rng: &mut R,
) -> Result<(OfflineDataset, f64)> {
    if n_episodes == 0 {
        return Err(Error::config("n_episodes must be at least 1"));
    }
    let mut transitions = Vec::new();
    let mut successes = 0usize;
    for _ in 0..n_episodes {
        let route = Route::sample(rng);
        let mut s = [
            env.start[0] + rng.random_range(-DATASET_START_JITTER..=DATASET_START_JITTER),
            env.start[1] + rng.random_range(-DATASET_START_JITTER..=DATASET_START_JITTER),
        ];
        for _ in 0..env.horizon {
            let a = env.behavior_action(s, route, rng);
            let out = env_step(env, s, a);
            transitions.push(Transition {
                s: s.to_vec(),
                a: a.to_vec(),
                r: out.reward,
                s_next: out.next.to_vec(),
                done: out.success,
            });
            s = out.next;
            if out.success {
                successes += 1;
                break;
            }
        }
    }
    let ds = OfflineDataset::new(transitions, STATE_DIM, ACTION_DIM, None)?;
    Ok((ds, successes as f64 / n_episodes as f64))
}

/// Anything that maps a batch of states `[B, 2]` to raw actions `[B, 2]`.
pub trait Actor {
    fn act(&self, states: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor>;
}

/// Value-guided best-of-K sampling from a one-step policy.
pub struct BestOfKActor<'a> {
    pub policy: &'a PolicyNet,
    pub critic: &'a CriticEnsemble,
    pub k: usize,
}

impl Actor for BestOfKActor<'_> {
    fn act(&self, states: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor> {
        select_best_of_k(self.policy, self.critic, states, self.k, rng)
    }
}

/// A single policy sample per state.
pub struct PolicyActor<'a> {
    pub policy: &'a PolicyNet,
}

impl Actor for PolicyActor<'_> {
    fn act(&self, states: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor> {
        let e = crate::meanflow::gaussian_noise(states.rows(), self.policy.action_dim(), rng);
        one_step_action(self.policy, states, &e)
    }
}

/// One scripted expert, optionally with behaviour noise.
pub struct ScriptedExpert {
    pub env: PointReachEnv,
    pub route: Route,
    pub noisy: bool,
}

impl Actor for ScriptedExpert {
    fn act(&self, states: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor> {
        let mut out = Vec::with_capacity(states.rows() * 2);
        for i in 0..states.rows() {
            let s = [states.row(i)[0], states.row(i)[1]];
            let a = if self.noisy {
                self.env.behavior_action(s, self.route, rng)
            } else {
                self.env.expert_action(s, self.route)
            };
            out.extend_from_slice(&a);
        }
        Tensor::matrix(states.rows(), 2, out)
    }
}

/// Uniform random actions in `[−1, 1]²`.
pub struct RandomActor;

impl Actor for RandomActor {
    fn act(&self, states: &Tensor, rng: &mut dyn RngCore) -> Result<Tensor> {
        let data = (0..states.rows() * 2)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        Tensor::matrix(states.rows(), 2, data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub success_rate: f64,
    pub mean_episode_len: f64,
    /// [`bound_loss`] of every raw action the actor produced.
    pub bound_loss: f64,
}

/// Runs `episodes` episodes from the fixed start in lockstep.
pub fn rollout_eval_actor(
    actor: &dyn Actor,
    env: &PointReachEnv,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::config(
            "nothing to evaluate: episodes must be at least 1",
        ));
    }
    let mut pos = vec![env.start; episodes];
    let mut active: Vec<usize> = (0..episodes).collect();
    let mut success = vec![false; episodes];
    let mut lengths = vec![env.horizon; episodes];
    let mut bound_sum = 0.0;
    let mut bound_count = 0usize;
    for t in 0..env.horizon {
        if active.is_empty() {
            break;
        }
        let states: Vec<[f64; 2]> = active.iter().map(|&i| pos[i]).collect();
        let s = Tensor::from_rows(&states)?;
        let a = actor.act(&s, rng)?;
        if a.shape() != [active.len(), 2] {
            return Err(Error::shape(format!(
                "actor returned {:?} for {} states",
                a.shape(),
                active.len()
            )));
        }
        bound_sum += bound_loss(&a) * a.len() as f64;
        bound_count += a.len();
        let mut still = Vec::with_capacity(active.len());
        for (row, &i) in active.iter().enumerate() {
            let out = env_step(env, pos[i], [a.row(row)[0], a.row(row)[1]]);
            pos[i] = out.next;
            if out.success {
                success[i] = true;
                lengths[i] = t + 1;
            } else {
                still.push(i);
            }
        }
        active = still;
    }
    let n = episodes as f64;
    Ok(EvalReport {
        success_rate: success.iter().filter(|&&x| x).count() as f64 / n,
        mean_episode_len: lengths.iter().sum::<usize>() as f64 / n,
        bound_loss: if bound_count > 0 {
            bound_sum / bound_count as f64
        } else {
            0.0
        },
    })
}

/// Best-of-`k` rollouts of a policy scored by `critic`.
pub fn rollout_eval(
    policy: &PolicyNet,
    critic: &CriticEnsemble,
    env: &PointReachEnv,
    episodes: usize,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalReport> {
    let actor = BestOfKActor { policy, critic, k };
    rollout_eval_actor(&actor, env, episodes, rng)
}

/// Fractions of behaviour actions at `probe` whose lateral (second) component is
/// positive and negative, over `visits` draws from the dataset mixture.
pub fn probe_lateral_split<R: Rng + ?Sized>(
    env: &PointReachEnv,
    probe: [f64; 2],
    visits: usize,
    rng: &mut R,
) -> (f64, f64) {
    let (mut up, mut down) = (0usize, 0usize);
    for _ in 0..visits {
        let a = env.behavior_action(probe, Route::sample(rng), rng);
        if a[1] > 0.0 {
            up += 1;
        } else if a[1] < 0.0 {
            down += 1;
        }
    }
    let n = visits.max(1) as f64;
    (up as f64 / n, down as f64 / n)
}
