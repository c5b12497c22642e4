//! Desk-scale group-relative policy optimisation.
//!
//! Each iteration samples `G` responses for one instance from a
//! [`ToyPolicy`], scores them with the combined reward, converts rewards to
//! advantages and takes one gradient step on
//!
//! ```text
//! J(θ) = (1/N) Σ_i A_i Σ_s log π_θ(y_i,s) − β Σ_s KL(π_θ,s ‖ π_ref,s)
//! ```
//!
//! where `s` ranges over the slots the instance uses, `π_ref` is the frozen
//! initial policy and `N` is the number of responses trained on: `G` for
//! group-relative advantages, 1 for best-of-G. Log-probabilities in `J` are taken at unit
//! temperature; the sampling temperature only shapes exploration.

mod policy;

pub use policy::{
    kl_divergence, log_softmax, softmax, ActionSpace, Choices, FormatChoice, SlotTable, ToyPolicy,
    FORMAT_SLOT,
};

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{ActionInstance, TemplateSet};
use crate::rewards::{reward_total, RewardBreakdown, RewardConfig};

/// Added to the group standard deviation before dividing.
pub const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("cannot parse training config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("policy has no slot `{0}`")]
    UnknownSlot(String),
    #[error("cannot render response: {0}")]
    Render(String),
    #[error("non-finite gradient at iteration {iteration}, slot `{slot}`: {values:?}")]
    NonFiniteGradient {
        iteration: usize,
        slot: String,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Train on the single highest-reward response.
    #[default]
    BestOfG,
    /// Standardise rewards within the group.
    GroupRelative,
}

impl AdvantageMode {
    /// `N` in the objective: how many responses one update trains on.
    pub fn batch_size(self, group_size: usize) -> f64 {
        match self {
            AdvantageMode::BestOfG => 1.0,
            AdvantageMode::GroupRelative => group_size as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub group_size: usize,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub temperature: f64,
    pub mode: AdvantageMode,
    pub seed: u64,
    pub offset_bins: Vec<f64>,
    pub quality_bins: usize,
    pub difficulty_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let space = ActionSpace::default();
        Self {
            group_size: 8,
            kl_beta: 0.04,
            learning_rate: 2.0,
            iterations: 500,
            temperature: 1.5,
            mode: AdvantageMode::BestOfG,
            seed: 0,
            offset_bins: space.offset_bins,
            quality_bins: space.quality_bins,
            difficulty_bins: space.difficulty_bins,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, GrpoError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("train config is TOML-representable")
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be >= 2");
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return bad("kl_beta must be >= 0");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be > 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be >= 0");
        }
        self.action_space(&RewardConfig::default()).validate()
    }

    pub fn action_space(&self, rewards: &RewardConfig) -> ActionSpace {
        ActionSpace {
            offset_bins: self.offset_bins.clone(),
            quality_bins: self.quality_bins,
            difficulty_bins: self.difficulty_bins,
            scales: rewards.normalization.clone(),
        }
    }
}

/// `G` responses for one instance with their slot choices, rewards and
/// advantages (the last two empty until filled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    pub responses: Vec<String>,
    pub choices: Vec<Choices>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

impl GroupSample {
    pub fn totals(&self) -> Vec<f64> {
        self.rewards.iter().map(|r| r.total).collect()
    }
}

/// Draws `G` independent responses. Deterministic given `rng`.
pub fn sample_group(
    policy: &ToyPolicy,
    inst: &ActionInstance,
    cfg: &TrainConfig,
    templates: &TemplateSet,
    rewards: &RewardConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GroupSample, GrpoError> {
    let mut responses = Vec::with_capacity(cfg.group_size);
    let mut choices = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let c = policy.sample_choices(inst, cfg.temperature, rng)?;
        responses.push(policy.render(inst, &c, templates, &rewards.schema, rng)?);
        choices.push(c);
    }
    Ok(GroupSample {
        responses,
        choices,
        rewards: Vec::new(),
        advantages: Vec::new(),
    })
}

pub fn score_group(group: &mut GroupSample, inst: &ActionInstance, rewards: &RewardConfig) {
    group.rewards = group
        .responses
        .iter()
        .map(|text| reward_total(inst, text, rewards))
        .collect();
}

/// Advantages for one group. A group whose rewards are all equal gets zero
/// advantages in either mode.
pub fn group_advantages(rewards: &[f64], mode: AdvantageMode) -> Vec<f64> {
    let g = rewards.len();
    if g == 0 || rewards.iter().all(|&r| r == rewards[0]) {
        return vec![0.0; g];
    }
    match mode {
        AdvantageMode::BestOfG => {
            let best = (0..g).fold(0, |b, i| if rewards[i] > rewards[b] { i } else { b });
            (0..g).map(|i| if i == best { 1.0 } else { 0.0 }).collect()
        }
        AdvantageMode::GroupRelative => {
            let mean = rewards.iter().sum::<f64>() / g as f64;
            let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
            let denom = var.sqrt() + ADVANTAGE_EPS;
            rewards.iter().map(|r| (r - mean) / denom).collect()
        }
    }
}

/// Slots touched by any sample; the KL term is restricted to these.
fn kl_scope(samples: &[Choices]) -> BTreeSet<&str> {
    samples.iter().flatten().map(|(s, _)| s.as_str()).collect()
}

/// The surrogate objective `J` for fixed samples and advantages.
pub fn objective(
    logits: &SlotTable,
    reference: &SlotTable,
    samples: &[Choices],
    advantages: &[f64],
    batch_size: f64,
    beta: f64,
) -> f64 {
    let mut pg = 0.0;
    for (choices, a) in samples.iter().zip(advantages) {
        for (slot, k) in choices {
            pg += a * log_softmax(&logits[slot])[*k];
        }
    }
    let kl: f64 = kl_scope(samples)
        .into_iter()
        .map(|s| kl_divergence(&logits[s], &reference[s]))
        .sum();
    pg / batch_size - beta * kl
}

/// Analytic gradient of [`objective`] with respect to every in-scope slot.
pub fn objective_gradient(
    logits: &SlotTable,
    reference: &SlotTable,
    samples: &[Choices],
    advantages: &[f64],
    batch_size: f64,
    beta: f64,
) -> SlotTable {
    let mut grad = SlotTable::new();
    for slot in kl_scope(samples) {
        let p = softmax(&logits[slot], 1.0);
        let lp = log_softmax(&logits[slot]);
        let lq = log_softmax(&reference[slot]);
        let kl = kl_divergence(&logits[slot], &reference[slot]);
        // d KL / d z_j = p_j (log p_j − log q_j − KL)
        let v = p
            .iter()
            .zip(lp.iter().zip(&lq))
            .map(|(pj, (a, b))| -beta * pj * (a - b - kl))
            .collect();
        grad.insert(slot.to_string(), v);
    }
    for (choices, a) in samples.iter().zip(advantages) {
        if *a == 0.0 {
            continue;
        }
        for (slot, k) in choices {
            let p = softmax(&logits[slot], 1.0);
            let v = grad.get_mut(slot).expect("slot in scope");
            for (j, pj) in p.iter().enumerate() {
                let indicator = if j == *k { 1.0 } else { 0.0 };
                v[j] += a * (indicator - pj) / batch_size;
            }
        }
    }
    grad
}

/// One gradient-ascent step on the scored group. Returns the total KL to
/// the reference after the step.
pub fn update_policy(
    policy: &mut ToyPolicy,
    group: &GroupSample,
    cfg: &TrainConfig,
    reference: &SlotTable,
    iteration: usize,
) -> Result<f64, GrpoError> {
    let grad = objective_gradient(
        &policy.logits,
        reference,
        &group.choices,
        &group.advantages,
        cfg.mode.batch_size(group.choices.len()),
        cfg.kl_beta,
    );
    if let Some((slot, values)) = grad.iter().find(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(GrpoError::NonFiniteGradient {
            iteration,
            slot: slot.clone(),
            values: values.clone(),
        });
    }
    for (slot, g) in grad {
        let z = policy.logits.get_mut(&slot).expect("gradient slots exist");
        for (zj, gj) in z.iter_mut().zip(&g) {
            *zj += cfg.learning_rate * gj;
        }
        // A finite gradient can still overflow the logits at a large step.
        if z.iter().any(|x| !x.is_finite()) {
            return Err(GrpoError::NonFiniteGradient {
                iteration,
                slot,
                values: g.iter().map(|gj| cfg.learning_rate * gj).collect(),
            });
        }
    }
    Ok(total_kl(&policy.logits, reference))
}

/// Sum of per-slot KL divergences to the reference.
pub fn total_kl(logits: &SlotTable, reference: &SlotTable) -> f64 {
    logits
        .iter()
        .map(|(s, z)| kl_divergence(z, &reference[s]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub best_reward: f64,
    pub kl: f64,
    pub r_form: f64,
    pub r_temp: f64,
    pub r_action: f64,
    pub r_score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean of `mean_reward` over the given rows; `None` when empty.
    pub fn window_mean(&self, rows: std::ops::Range<usize>) -> Option<f64> {
        let w = self.rows.get(rows)?;
        (!w.is_empty()).then(|| w.iter().map(|r| r.mean_reward).sum::<f64>() / w.len() as f64)
    }

    /// Means of the first and last `window` iterations (clipped to the
    /// trace length).
    pub fn initial_and_final(&self, window: usize) -> Option<(f64, f64)> {
        let w = window.min(self.len());
        Some((self.window_mean(0..w)?, self.window_mean(self.len() - w..self.len())?))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(["iteration", "mean_reward", "best_reward", "kl", "r_form", "r_temp", "r_action", "r_score"])
                .expect("in-memory write");
        }
        for row in &self.rows {
            w.serialize(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub trace: TrainingTrace,
    pub policy: ToyPolicy,
    pub initial_policy: ToyPolicy,
}

fn mean(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    xs.sum::<f64>() / n as f64
}

/// Round-robin training over `dataset`, fully determined by `cfg.seed`.
pub fn train(
    dataset: &[ActionInstance],
    cfg: &TrainConfig,
    rewards: &RewardConfig,
) -> Result<TrainOutcome, GrpoError> {
    cfg.validate()?;
    let mut policy = ToyPolicy::uniform(dataset, cfg.action_space(rewards))?;
    let initial_policy = policy.clone();
    let reference = policy.logits.clone();
    let templates = TemplateSet::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = TrainingTrace::default();
    for iteration in 0..cfg.iterations {
        let inst = &dataset[iteration % dataset.len()];
        let mut group = sample_group(&policy, inst, cfg, &templates, rewards, &mut rng)?;
        score_group(&mut group, inst, rewards);
        group.advantages = group_advantages(&group.totals(), cfg.mode);
        let kl = update_policy(&mut policy, &group, cfg, &reference, iteration)?;
        let g = group.rewards.len();
        let r = &group.rewards;
        trace.rows.push(TraceRow {
            iteration,
            mean_reward: mean(r.iter().map(|b| b.total), g),
            best_reward: r.iter().map(|b| b.total).fold(f64::NEG_INFINITY, f64::max),
            kl,
            r_form: mean(r.iter().map(|b| b.r_form), g),
            r_temp: mean(r.iter().map(|b| b.r_temp), g),
            r_action: mean(r.iter().map(|b| b.r_action), g),
            r_score: mean(r.iter().map(|b| b.r_score), g),
        });
    }
    Ok(TrainOutcome {
        trace,
        policy,
        initial_policy,
    })
}
