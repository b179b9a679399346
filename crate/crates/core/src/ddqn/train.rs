use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::evaluate_policy;
use super::{
    select_action, train_step, Featurizer, QNetwork, ReplayBuffer, TrainConfig, Transition, Variant,
};
use crate::env::{AcquisitionEnv, EnvConfig, Reconstructor};
use crate::error::{Error, Result};
use crate::metrics::{auc, mean_ci95};
use crate::nn::Mlp;
use crate::policies::{greedy_q_policy, Policy, PolicyInput};
use crate::transforms::Image;

/// Greedy policy of a frozen value network.
#[derive(Clone, Debug)]
pub struct DdqnPolicy {
    featurizer: Featurizer,
    network: Arc<Mlp<f64>>,
}

impl DdqnPolicy {
    pub fn new(featurizer: Featurizer, network: Arc<Mlp<f64>>) -> Result<Self> {
        if network.input_size() != featurizer.len() || network.output_size() != featurizer.width {
            return Err(Error::shape(
                format!("{} -> {}", featurizer.len(), featurizer.width),
                format!("{} -> {}", network.input_size(), network.output_size()),
            ));
        }
        Ok(Self {
            featurizer,
            network,
        })
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }
}

impl Policy<f64> for DdqnPolicy {
    fn name(&self) -> &str {
        self.featurizer.variant.policy_name()
    }

    fn select(&mut self, input: &PolicyInput<'_, f64>, _rng: &mut dyn RngCore) -> Result<usize> {
        let q = self
            .network
            .forward(&self.featurizer.features(input.observation)?)?;
        greedy_q_policy(&q, input.valid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub env_steps: usize,
    /// Mean validation AUC of the training cost (lower is better).
    pub eval_auc_mean: f64,
    pub eval_auc_ci95: f64,
    pub epsilon: f64,
    /// Mean TD loss since the previous evaluation; absent before learning starts.
    pub loss_avg: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    /// Online network at the best validation evaluation.
    pub network: Mlp<f64>,
    pub featurizer: Featurizer,
    pub log: Vec<TrainingLogRow>,
    pub best_env_steps: usize,
    pub best_auc: f64,
    /// Largest replay buffer size observed during the run.
    pub peak_replay_len: usize,
    pub train_steps: u64,
}

impl TrainingOutcome {
    pub fn policy(&self) -> DdqnPolicy {
        DdqnPolicy::new(self.featurizer, Arc::new(self.network.clone()))
            .expect("shape fixed by training")
    }
}

fn validation_auc(
    qnet: &QNetwork,
    val: &[(&str, &Image<f64>)],
    env_config: &EnvConfig,
    reconstructor: &Arc<dyn Reconstructor<f64>>,
) -> Result<(f64, f64)> {
    let policy = DdqnPolicy::new(*qnet.featurizer(), Arc::new(qnet.online().clone()))?;
    let make = move || -> Result<Box<dyn Policy<f64>>> { Ok(Box::new(policy.clone())) };
    let eval = evaluate_policy(
        "validation",
        &make,
        val,
        env_config,
        reconstructor.clone(),
        0,
    )?;
    let aucs = eval
        .records
        .iter()
        .map(|r| auc(&r.costs))
        .collect::<Result<Vec<_>>>()?;
    mean_ci95(&aucs)
}

/// Epsilon-greedy rollouts on random training images with one update per
/// environment step once `learning_starts` transitions are stored. Every
/// `eval_interval` steps, and at the end, the greedy policy is scored on a
/// fixed validation subset; the best-scoring network is returned.
pub fn train_loop(
    train: &[&Image<f64>],
    val: &[&Image<f64>],
    env_config: &EnvConfig,
    reconstructor: Arc<dyn Reconstructor<f64>>,
    config: &TrainConfig,
) -> Result<TrainingOutcome> {
    config.validate()?;
    env_config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(
            "training and validation splits must be non-empty".into(),
        ));
    }
    if env_config.budget == 0 {
        return Err(Error::Config("nothing to learn with a zero budget".into()));
    }
    if config.variant == Variant::SubjectSpecific
        && config.pool > env_config.height.min(env_config.width)
    {
        return Err(Error::Config(format!(
            "pool side {} exceeds the image size",
            config.pool
        )));
    }
    let dims = (env_config.height, env_config.width);
    if let Some(bad) = train
        .iter()
        .chain(val)
        .find(|im| (im.height(), im.width()) != dims)
    {
        return Err(Error::Config(format!(
            "image of size {}x{} does not match the environment {}x{}",
            bad.height(),
            bad.width(),
            dims.0,
            dims.1
        )));
    }

    let mut subset_rng = ChaCha8Rng::seed_from_u64(config.seed);
    subset_rng.set_stream(1);
    let mut val_order: Vec<usize> = (0..val.len()).collect();
    val_order.shuffle(&mut subset_rng);
    val_order.truncate(config.val_subset);
    val_order.sort_unstable();
    let val_ids: Vec<String> = val_order.iter().map(|i| format!("val{i}")).collect();
    let val_subset: Vec<(&str, &Image<f64>)> = val_order
        .iter()
        .zip(&val_ids)
        .map(|(&i, id)| (id.as_str(), val[i]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let featurizer = Featurizer::new(config.variant, env_config, config.pool);
    let mut qnet = QNetwork::new(featurizer, &config.hidden, config.adam(), &mut rng)?;
    let reward_scale = config
        .reward_scale
        .unwrap_or_else(|| env_config.cost.default_reward_scale());
    let discount = env_config.discount;
    let mut env = AcquisitionEnv::new(env_config.clone(), reconstructor.clone())?;
    let mut buffer = ReplayBuffer::new(config.replay_capacity)?;
    let mut peak_replay_len = 0;
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Mlp<f64>)> = None;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);

    let obs = env.reset(train[rng.random_range(0..train.len())])?;
    let mut features = featurizer.features(&obs)?;
    for step in 1..=config.total_steps {
        let epsilon = config.epsilon.value(step - 1, config.total_steps);
        let valid = env.valid_actions();
        let action = select_action(&qnet, &features, &valid, epsilon, &mut rng)?;
        let out = env.step(action)?;
        let next_features = featurizer.features(&out.observation)?;
        let next_valid = if out.done {
            vec![false; env_config.width]
        } else {
            out.observation.mask.columns().iter().map(|&m| !m).collect()
        };
        let state = std::mem::replace(&mut features, next_features.clone());
        buffer.push(Transition {
            state,
            action,
            reward: reward_scale * out.reward,
            next_state: next_features,
            done: out.done,
            next_valid,
        });
        peak_replay_len = peak_replay_len.max(buffer.len());
        if buffer.len() >= config.learning_starts.max(config.batch_size) {
            if let Some(loss) = train_step(&mut qnet, &buffer, config, discount, &mut rng)? {
                loss_sum += loss;
                loss_count += 1;
            }
        }
        if out.done {
            let obs = env.reset(train[rng.random_range(0..train.len())])?;
            features = featurizer.features(&obs)?;
        }

        if step % config.eval_interval == 0 || step == config.total_steps {
            let (mean, ci95) = validation_auc(&qnet, &val_subset, env_config, &reconstructor)?;
            log.push(TrainingLogRow {
                env_steps: step,
                eval_auc_mean: mean,
                eval_auc_ci95: ci95,
                epsilon,
                loss_avg: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            });
            (loss_sum, loss_count) = (0.0, 0);
            if best.as_ref().is_none_or(|(b, _, _)| mean < *b) {
                best = Some((mean, step, qnet.online().clone()));
            }
        }
    }
    let (best_auc, best_env_steps, network) = best.expect("at least one evaluation");
    Ok(TrainingOutcome {
        network,
        featurizer,
        log,
        best_env_steps,
        best_auc,
        peak_replay_len,
        train_steps: qnet.train_steps(),
    })
}

/// Sidecar metadata stored next to a network checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub featurizer: Featurizer,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub best_env_steps: usize,
    pub best_auc: f64,
    pub history: Vec<TrainingLogRow>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Mlp<f64>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_training(outcome: &TrainingOutcome, env: &EnvConfig, train: &TrainConfig) -> Self {
        Self {
            network: outcome.network.clone(),
            meta: CheckpointMeta {
                featurizer: outcome.featurizer,
                env: env.clone(),
                train: train.clone(),
                best_env_steps: outcome.best_env_steps,
                best_auc: outcome.best_auc,
                history: outcome.log.clone(),
            },
        }
    }

    pub fn policy(&self) -> Result<DdqnPolicy> {
        DdqnPolicy::new(self.meta.featurizer, Arc::new(self.network.clone()))
    }
}

/// Path of the JSON sidecar belonging to a network file.
pub fn sidecar_path(network: &Path) -> PathBuf {
    network.with_extension("json")
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    checkpoint.network.save(path)?;
    let side = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(&checkpoint.meta)
        .map_err(|e| Error::InvalidInput(format!("checkpoint metadata: {e}")))?;
    text.push('\n');
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let network = Mlp::load(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;
    let checkpoint = Checkpoint { network, meta };
    checkpoint.policy()?;
    Ok(checkpoint)
}
