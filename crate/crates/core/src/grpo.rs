//! Group-relative policy optimization on a finite response alphabet.
//!
//! The policy is a softmax over logits, one per candidate output. Each step
//! samples a group from a frozen snapshot, normalizes the group's rewards
//! into advantages and takes one exact gradient-ascent step on
//! `surrogate - beta * KL(policy || reference)`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::domain::{validate_sample, GroundTruth, GroundingSample, Segment};
use crate::error::GrpoError;
use crate::providers::EmbeddingProvider;
use crate::reward::{render_time_answer, total_reward, AnswerReferences, RewardOptions, SURROGATE_REFUSAL};

const STD_EPS: f64 = 1e-12;
/// Groups with a smaller reward variance are treated as all-equal.
pub const VARIANCE_EPS: f64 = 1e-12;

/// `(r - mean) / std` with the population standard deviation. A group whose
/// rewards are all (numerically) equal carries no signal and maps to zeros.
pub fn normalize_advantages(rewards: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    if !(var >= VARIANCE_EPS) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Sampled responses with their rewards and normalized advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseGroup {
    pub responses: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl ResponseGroup {
    pub fn new(responses: Vec<String>, rewards: Vec<f64>) -> Result<Self, GrpoError> {
        if responses.len() != rewards.len() {
            return Err(GrpoError::InvalidConfig(format!(
                "{} responses but {} rewards",
                responses.len(),
                rewards.len()
            )));
        }
        let advantages = normalize_advantages(&rewards)?;
        Ok(Self {
            responses,
            rewards,
            advantages,
        })
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// Softmax policy over a fixed candidate alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    alphabet: Arc<[String]>,
    logits: Vec<f64>,
}

impl ToyPolicy {
    pub fn uniform(alphabet: Vec<String>) -> Result<Self, GrpoError> {
        let n = alphabet.len();
        Self::from_logits(alphabet.into(), vec![0.0; n])
    }

    pub fn from_logits(alphabet: Arc<[String]>, logits: Vec<f64>) -> Result<Self, GrpoError> {
        if alphabet.is_empty() || alphabet.len() != logits.len() {
            return Err(GrpoError::AlphabetMismatch {
                left: alphabet.len(),
                right: logits.len(),
            });
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(GrpoError::InvalidConfig("non-finite logit".into()));
        }
        Ok(Self { alphabet, logits })
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn with_logits(&self, logits: Vec<f64>) -> Result<Self, GrpoError> {
        Self::from_logits(Arc::clone(&self.alphabet), logits)
    }

    pub fn probs(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = self.logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        exp.into_iter().map(|e| e / sum).collect()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        self.logits.iter().map(|z| z - lse).collect()
    }

    pub fn index_of(&self, response: &str) -> Result<usize, GrpoError> {
        self.alphabet
            .iter()
            .position(|c| c == response)
            .ok_or_else(|| GrpoError::UnknownResponse(response.to_string()))
    }

    fn check_same_alphabet(&self, other: &ToyPolicy) -> Result<(), GrpoError> {
        if self.alphabet != other.alphabet {
            return Err(GrpoError::AlphabetMismatch {
                left: self.alphabet.len(),
                right: other.alphabet.len(),
            });
        }
        Ok(())
    }
}

/// Per-candidate advantage mass divided by the snapshot probability,
/// `c_x = sum_{i: o_i = x} A_i / pi_old(x)`. The surrogate is `sum_x pi(x) c_x`.
fn advantage_weights(old: &ToyPolicy, group: &ResponseGroup) -> Result<Vec<f64>, GrpoError> {
    let p_old = old.probs();
    let mut c = vec![0.0; p_old.len()];
    for (resp, adv) in group.responses.iter().zip(&group.advantages) {
        let k = old.index_of(resp)?;
        c[k] += adv / p_old[k];
    }
    Ok(c)
}

/// `sum_i pi(o_i) / pi_old(o_i) * A_i`, unclipped.
pub fn surrogate_value(policy: &ToyPolicy, old: &ToyPolicy, group: &ResponseGroup) -> Result<f64, GrpoError> {
    policy.check_same_alphabet(old)?;
    let p = policy.probs();
    let p_old = old.probs();
    group
        .responses
        .iter()
        .zip(&group.advantages)
        .map(|(resp, adv)| {
            let k = policy.index_of(resp)?;
            Ok(p[k] / p_old[k] * adv)
        })
        .sum()
}

/// Exact `KL(policy || reference)`.
pub fn kl_divergence(policy: &ToyPolicy, reference: &ToyPolicy) -> Result<f64, GrpoError> {
    policy.check_same_alphabet(reference)?;
    let p = policy.probs();
    let lp = policy.log_probs();
    let lr = reference.log_probs();
    let kl: f64 = p.iter().zip(lp.iter().zip(&lr)).map(|(p, (a, b))| p * (a - b)).sum();
    Ok(kl.max(0.0))
}

pub fn objective(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    group: &ResponseGroup,
    beta: f64,
) -> Result<f64, GrpoError> {
    Ok(surrogate_value(policy, old, group)? - beta * kl_divergence(policy, reference)?)
}

/// Analytic gradient of [`objective`] with respect to the policy logits.
pub fn gradient(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    group: &ResponseGroup,
    beta: f64,
) -> Result<Vec<f64>, GrpoError> {
    policy.check_same_alphabet(old)?;
    policy.check_same_alphabet(reference)?;
    let p = policy.probs();
    let lp = policy.log_probs();
    let lr = reference.log_probs();
    let c = advantage_weights(old, group)?;

    let s_bar: f64 = p.iter().zip(&c).map(|(p, c)| p * c).sum();
    let log_ratio: Vec<f64> = lp.iter().zip(&lr).map(|(a, b)| a - b).collect();
    let kl: f64 = p.iter().zip(&log_ratio).map(|(p, d)| p * d).sum();

    Ok((0..p.len())
        .map(|k| {
            let ds = p[k] * (c[k] - s_bar);
            let dkl = p[k] * (log_ratio[k] - kl);
            ds - beta * dkl
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub group_size: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            beta: 0.01,
            learning_rate: 0.1,
            steps: 500,
            seed: 7,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be a non-negative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be positive");
        }
        Ok(())
    }
}

pub fn gradient_step(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    group: &ResponseGroup,
    config: &SimConfig,
) -> Result<ToyPolicy, GrpoError> {
    let g = gradient(policy, old, reference, group, config.beta)?;
    let logits = policy
        .logits
        .iter()
        .zip(&g)
        .map(|(z, d)| z + config.learning_rate * d)
        .collect();
    policy.with_logits(logits)
}

pub const MIN_CANDIDATES: usize = 4;
pub const MAX_CANDIDATES: usize = 16;

/// Optional simulation overrides stored in a scenario file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOverrides {
    pub group_size: Option<usize>,
    pub beta: Option<f64>,
    pub learning_rate: Option<f64>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

impl SimOverrides {
    pub fn apply(&self, base: SimConfig) -> SimConfig {
        SimConfig {
            group_size: self.group_size.unwrap_or(base.group_size),
            beta: self.beta.unwrap_or(base.beta),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            steps: self.steps.unwrap_or(base.steps),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    description: String,
    candidates: Vec<String>,
    paired_segment: Option<[f64; 2]>,
    negative_reference: Option<String>,
    sample: Map<String, Value>,
    #[serde(default)]
    sim: SimOverrides,
}

/// One sample and a finite set of candidate outputs for it.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub description: String,
    pub sample: GroundingSample,
    pub candidates: Vec<String>,
    pub references: AnswerReferences,
    pub sim: SimOverrides,
}

impl ScenarioSpec {
    pub fn new(
        name: impl Into<String>,
        sample: GroundingSample,
        candidates: Vec<String>,
        references: AnswerReferences,
    ) -> Result<Self, GrpoError> {
        let spec = Self {
            name: name.into(),
            description: String::new(),
            sample,
            candidates,
            references,
            sim: SimOverrides::default(),
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), GrpoError> {
        let n = self.candidates.len();
        if !(MIN_CANDIDATES..=MAX_CANDIDATES).contains(&n) {
            return Err(GrpoError::InvalidScenario(format!(
                "need {MIN_CANDIDATES}-{MAX_CANDIDATES} candidates, got {n}"
            )));
        }
        for (i, c) in self.candidates.iter().enumerate() {
            if self.candidates[..i].contains(c) {
                return Err(GrpoError::InvalidScenario(format!("duplicate candidate {c:?}")));
            }
        }
        Ok(())
    }

    /// Parses the TOML scenario format (see `docs/formats.md`).
    pub fn from_toml(text: &str) -> Result<Self, GrpoError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| GrpoError::InvalidScenario(e.to_string()))?;
        let sample = validate_sample(&file.sample)?;
        let references = match sample.truth() {
            GroundTruth::Relevant { segment } => AnswerReferences {
                positive: render_time_answer(segment),
                negative: file
                    .negative_reference
                    .unwrap_or_else(|| SURROGATE_REFUSAL.to_string()),
            },
            GroundTruth::Irrelevant { refusal, .. } => {
                let [s, e] = file.paired_segment.ok_or_else(|| {
                    GrpoError::InvalidScenario("irrelevant sample needs paired_segment".into())
                })?;
                AnswerReferences {
                    positive: refusal.clone(),
                    negative: render_time_answer(&Segment::new(s, e)?),
                }
            }
        };
        let spec = Self {
            name: file.name,
            description: file.description,
            sample,
            candidates: file.candidates,
            references,
            sim: file.sim,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, GrpoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GrpoError::InvalidScenario(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

pub const REFUSAL_SCENARIO: &str = include_str!("../scenarios/refusal.toml");
pub const ZERO_VARIANCE_SCENARIO: &str = include_str!("../scenarios/zero_variance.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub mean_reward: f64,
    pub kl: f64,
    pub policy_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub candidate_rewards: Vec<f64>,
    pub initial_probs: Vec<f64>,
    pub steps: Vec<TraceStep>,
    pub final_probs: Vec<f64>,
    /// Index of the unique highest-reward candidate, if there is one.
    pub reward_argmax: Option<usize>,
    pub converged: bool,
}

pub const CONVERGENCE_PROB: f64 = 0.9;

impl SimulationTrace {
    /// True when every candidate earns the same reward, so no group can
    /// ever produce a non-zero advantage.
    pub fn no_learning_signal(&self) -> bool {
        let first = self.candidate_rewards[0];
        self.candidate_rewards.iter().all(|r| (r - first).abs() < STD_EPS)
    }

    pub fn policy_argmax(&self) -> usize {
        argmax(&self.final_probs).expect("non-empty alphabet")
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    (!xs.is_empty()).then_some(best)
}

fn unique_argmax(xs: &[f64]) -> Option<usize> {
    let best = argmax(xs)?;
    let ties = xs.iter().filter(|x| **x == xs[best]).count();
    (ties == 1).then_some(best)
}

pub fn run_simulation(
    config: &SimConfig,
    scenario: &ScenarioSpec,
    embedder: &dyn EmbeddingProvider,
    options: RewardOptions,
) -> Result<SimulationTrace, GrpoError> {
    config.validate()?;
    scenario.check()?;

    // The reward of a candidate never changes, so score each one once.
    let candidate_rewards = scenario
        .candidates
        .iter()
        .map(|c| Ok(total_reward(&scenario.sample, &scenario.references, c, embedder, options)?.total))
        .collect::<Result<Vec<f64>, GrpoError>>()?;

    let reference = ToyPolicy::uniform(scenario.candidates.clone())?;
    let mut policy = reference.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut steps = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let old = policy.clone();
        let dist = WeightedIndex::new(old.probs())
            .map_err(|e| GrpoError::InvalidConfig(format!("sampling distribution: {e}")))?;
        let picks: Vec<usize> = (0..config.group_size).map(|_| dist.sample(&mut rng)).collect();
        let group = ResponseGroup::new(
            picks.iter().map(|&k| scenario.candidates[k].clone()).collect(),
            picks.iter().map(|&k| candidate_rewards[k]).collect(),
        )?;
        policy = gradient_step(&policy, &old, &reference, &group, config)?;
        steps.push(TraceStep {
            step: step + 1,
            mean_reward: group.mean_reward(),
            kl: kl_divergence(&policy, &reference)?,
            policy_probs: policy.probs(),
        });
    }

    let final_probs = policy.probs();
    let reward_argmax = unique_argmax(&candidate_rewards);
    let converged = match (reward_argmax, argmax(&final_probs)) {
        (Some(r), Some(p)) => r == p && final_probs[p] >= CONVERGENCE_PROB,
        _ => false,
    };
    Ok(SimulationTrace {
        candidate_rewards,
        initial_probs: reference.probs(),
        steps,
        final_probs,
        reward_argmax,
        converged,
    })
}
