//! Single-primitive episode environment: wraps the simulator step with the
//! phase latches, the reward breakdown, and the termination rules of one
//! regrasp primitive, and maintains the observation history windows the
//! policy and the student encoder consume.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::Primitive;
use crate::hand::NUM_JOINTS;
use crate::nets::{L1_WINDOW, L2_WINDOW};
use crate::reward::{
    check_termination, phase_update, primitive_success, total_reward, PhaseFlags, RewardBreakdown,
    RewardConfig, TerminationConfig, TerminationVerdict,
};
use crate::simcore::{observation_of, step, Observation, Privileged, SimConfig, WorldState, OBS_DIM};
use crate::Result;

/// Everything one environment step produces.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Observation,
    pub privileged: Privileged,
    pub reward: RewardBreakdown,
    pub verdict: TerminationVerdict,
    /// Episode is over: early termination or horizon exhausted.
    pub done: bool,
}

/// One primitive-execution episode over a [`WorldState`].
#[derive(Debug, Clone)]
pub struct PrimitiveEnv {
    pub world: WorldState,
    pub primitive: Primitive,
    pub sim_cfg: SimConfig,
    pub reward_cfg: RewardConfig,
    pub term_cfg: TerminationConfig,
    pub rng: ChaCha8Rng,
    /// Most recent observation last; capped at the student window length.
    history: VecDeque<Observation>,
    terminated: bool,
}

impl PrimitiveEnv {
    /// Fresh training episode: the current pose becomes the episode origin.
    pub fn new(
        mut world: WorldState,
        primitive: Primitive,
        sim_cfg: SimConfig,
        reward_cfg: RewardConfig,
        term_cfg: TerminationConfig,
        seed: u64,
    ) -> Self {
        world.begin_episode();
        Self::from_parts(world, primitive, sim_cfg, reward_cfg, term_cfg, seed)
    }

    /// Continuation episode for skill chaining: the step counter and the
    /// phase latches reset, but the episode origin (reference pose for yaw,
    /// roll, and drift) is kept from the incoming state.
    pub fn continuing(
        mut world: WorldState,
        primitive: Primitive,
        sim_cfg: SimConfig,
        reward_cfg: RewardConfig,
        term_cfg: TerminationConfig,
        seed: u64,
    ) -> Self {
        world.t = 0;
        world.phase = PhaseFlags::default();
        Self::from_parts(world, primitive, sim_cfg, reward_cfg, term_cfg, seed)
    }

    fn from_parts(
        world: WorldState,
        primitive: Primitive,
        sim_cfg: SimConfig,
        reward_cfg: RewardConfig,
        term_cfg: TerminationConfig,
        seed: u64,
    ) -> Self {
        let mut history = VecDeque::with_capacity(L2_WINDOW);
        history.push_back(observation_of(&world));
        Self {
            world,
            primitive,
            sim_cfg,
            reward_cfg,
            term_cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            history,
            terminated: false,
        }
    }

    /// Reward configuration matching the primitive's position in the chain.
    pub fn reward_for(primitive: &Primitive) -> RewardConfig {
        if primitive.index == primitive.total {
            RewardConfig::final_primitive()
        } else {
            RewardConfig::standard()
        }
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn done(&self) -> bool {
        self.terminated || self.world.t >= self.sim_cfg.horizon
    }

    /// Advance one control step: simulate, update the phase latches, check
    /// termination, and score the step.
    pub fn step(&mut self, action: &[f64; NUM_JOINTS]) -> Result<StepOutcome> {
        let (obs, privileged) = step(&mut self.world, action, &self.sim_cfg, &mut self.rng)?;

        let f = self.primitive.moving_finger;
        let goal = &self.primitive.goal.descriptor;
        self.world.phase = phase_update(&self.world, f, goal.side(f), goal, self.world.phase);

        let verdict = check_termination(&self.world, &self.term_cfg);
        if verdict.terminated() {
            self.terminated = true;
        }
        let reward = total_reward(&self.world, f, self.world.phase, &self.reward_cfg, self.terminated);

        if self.history.len() == L2_WINDOW {
            self.history.pop_front();
        }
        self.history.push_back(obs);

        Ok(StepOutcome {
            obs,
            privileged,
            reward,
            verdict,
            done: self.done(),
        })
    }

    /// Observation history, oldest first (at most the student window).
    pub fn history(&self) -> &VecDeque<Observation> {
        &self.history
    }

    /// Last `n` observations stacked oldest-first into one flat vector,
    /// zero-padded at the front while the episode is younger than the window.
    pub fn obs_window(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * OBS_DIM];
        let have = self.history.len().min(n);
        let start = n - have;
        for (k, obs) in self.history.iter().skip(self.history.len() - have).enumerate() {
            out[(start + k) * OBS_DIM..(start + k + 1) * OBS_DIM].copy_from_slice(&obs.to_vec());
        }
        out
    }

    /// Short (policy) observation window.
    pub fn window_l1(&self) -> Vec<f64> {
        self.obs_window(L1_WINDOW)
    }

    /// Long (student encoder) observation window.
    pub fn window_l2(&self) -> Vec<f64> {
        self.obs_window(L2_WINDOW)
    }

    /// Did the episode end on the primitive's goal contact state?
    pub fn succeeded(&self) -> bool {
        primitive_success(&self.world, &self.primitive.goal.descriptor)
    }

    pub fn into_world(self) -> WorldState {
        self.world
    }
}
