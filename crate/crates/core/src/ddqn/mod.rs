//! Double DQN over the acquisition environment.
//!
//! The agent works in `f64`. Discount and cost are read from the
//! [`EnvConfig`], everything else from [`TrainConfig`].

mod eval;
mod replay;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use eval::{evaluate_policy, AucSummary, Evaluation};
pub use replay::{ReplayBuffer, Transition};
pub use train::{
    load_checkpoint, save_checkpoint, train_loop, Checkpoint, CheckpointMeta, DdqnPolicy,
    TrainingLogRow, TrainingOutcome,
};

use crate::env::{record_invalid_selection, EnvConfig, Observation};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Gradients, Mlp};
use crate::policies::{greedy_q_policy, random_policy};
use crate::transforms::average_pool;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Sees the reconstruction, the mask and the step.
    SubjectSpecific,
    /// Sees only the step.
    DatasetSpecific,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::SubjectSpecific => "subject-specific",
            Variant::DatasetSpecific => "dataset-specific",
        }
    }

    /// Name of the matching evaluation policy.
    pub fn policy_name(self) -> &'static str {
        match self {
            Variant::SubjectSpecific => "ddqn-subject",
            Variant::DatasetSpecific => "ddqn-dataset",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subject-specific" | "subject" => Ok(Variant::SubjectSpecific),
            "dataset-specific" | "dataset" => Ok(Variant::DatasetSpecific),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of
/// training, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: usize, total_steps: usize) -> f64 {
        let horizon = self.decay_fraction * total_steps as f64;
        if horizon <= 0.0 || step as f64 >= horizon {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / horizon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub total_steps: usize,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Train steps between hard copies of the online weights into the target.
    pub target_sync: usize,
    /// Buffer fill level at which gradient updates begin.
    pub learning_starts: usize,
    pub epsilon: EpsilonSchedule,
    pub learning_rate: f64,
    /// Multiplier on environment rewards; `None` picks the cost's default.
    pub reward_scale: Option<f64>,
    pub huber_delta: f64,
    pub hidden: Vec<usize>,
    /// Pooled reconstruction side for subject-specific features.
    pub pool: usize,
    /// Environment steps between validation evaluations.
    pub eval_interval: usize,
    /// Size of the fixed random validation subset.
    pub val_subset: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DatasetSpecific,
            total_steps: 200_000,
            replay_capacity: 20_000,
            batch_size: 32,
            target_sync: 500,
            learning_starts: 1000,
            epsilon: EpsilonSchedule::default(),
            learning_rate: 1e-3,
            reward_scale: None,
            huber_delta: 1.0,
            hidden: vec![128],
            pool: 8,
            eval_interval: 10_000,
            val_subset: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let e = self.epsilon;
        if [e.start, e.end, e.decay_fraction]
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return fail(format!("epsilon schedule {e:?} must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return fail(format!(
                "replay capacity {} must be at least the batch size {} (> 0)",
                self.replay_capacity, self.batch_size
            ));
        }
        if self.learning_starts > self.replay_capacity {
            return fail(format!(
                "learning starts at {} transitions but the buffer holds {}",
                self.learning_starts, self.replay_capacity
            ));
        }
        if self.total_steps == 0
            || self.target_sync == 0
            || self.eval_interval == 0
            || self.val_subset == 0
        {
            return fail("step counts, sync and evaluation intervals must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(self.huber_delta > 0.0) {
            return fail(format!("Huber delta {} must be positive", self.huber_delta));
        }
        if let Some(s) = self.reward_scale {
            if !(s > 0.0 && s.is_finite()) {
                return fail(format!("reward scale {s} must be positive"));
            }
        }
        if self.hidden.contains(&0) || self.pool == 0 {
            return fail("hidden layer sizes and pool side must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Maps observations to network inputs for one variant and environment shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub variant: Variant,
    pub width: usize,
    pub budget: usize,
    pub pool: usize,
}

impl Featurizer {
    pub fn new(variant: Variant, env: &EnvConfig, pool: usize) -> Self {
        Self {
            variant,
            width: env.width,
            budget: env.budget,
            pool,
        }
    }

    pub fn len(&self) -> usize {
        match self.variant {
            Variant::SubjectSpecific => self.pool * self.pool + self.width + 1,
            Variant::DatasetSpecific => self.budget + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Subject-specific: pooled magnitude scaled by its maximum, mask, `t/T`.
    /// Dataset-specific: one-hot of `t` over `T + 1` slots.
    pub fn features(&self, obs: &Observation<f64>) -> Result<Vec<f64>> {
        if obs.mask.width() != self.width {
            return Err(Error::shape(self.width, obs.mask.width()));
        }
        if obs.step > self.budget {
            return Err(Error::Index {
                index: obs.step,
                len: self.budget + 1,
            });
        }
        Ok(match self.variant {
            Variant::DatasetSpecific => {
                let mut f = vec![0.0; self.budget + 1];
                f[obs.step] = 1.0;
                f
            }
            Variant::SubjectSpecific => {
                let mut f = average_pool(obs.reconstruction.magnitude(), self.pool);
                let peak = f.iter().copied().fold(0.0, f64::max);
                if peak > 0.0 {
                    f.iter_mut().for_each(|v| *v /= peak);
                }
                f.extend(obs.mask.to_vec::<f64>());
                f.push(if self.budget == 0 {
                    0.0
                } else {
                    obs.step as f64 / self.budget as f64
                });
                f
            }
        })
    }
}

/// Online and target value networks plus the optimizer state of the online one.
#[derive(Clone, Debug)]
pub struct QNetwork {
    featurizer: Featurizer,
    online: Mlp<f64>,
    target: Mlp<f64>,
    adam: AdamState<f64>,
    train_steps: u64,
}

impl QNetwork {
    pub fn new(
        featurizer: Featurizer,
        hidden: &[usize],
        adam: AdamConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(featurizer.len())
            .chain(hidden.iter().copied())
            .chain(std::iter::once(featurizer.width))
            .collect();
        Self::from_network(featurizer, Mlp::new(&sizes, rng)?, adam)
    }

    pub fn from_network(
        featurizer: Featurizer,
        online: Mlp<f64>,
        adam: AdamConfig,
    ) -> Result<Self> {
        if online.input_size() != featurizer.len() || online.output_size() != featurizer.width {
            return Err(Error::shape(
                format!("{} -> {}", featurizer.len(), featurizer.width),
                format!("{} -> {}", online.input_size(), online.output_size()),
            ));
        }
        Ok(Self {
            featurizer,
            target: online.clone(),
            adam: AdamState::new(&online, adam),
            online,
            train_steps: 0,
        })
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn online(&self) -> &Mlp<f64> {
        &self.online
    }

    pub fn target(&self) -> &Mlp<f64> {
        &self.target
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn q_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(features)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

/// Epsilon-greedy choice: a uniform valid column with probability `epsilon`,
/// the masked argmax of the online values otherwise.
pub fn select_action(
    qnet: &QNetwork,
    features: &[f64],
    valid: &[usize],
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> Result<usize> {
    if valid.is_empty() {
        return Err(Error::NoAction);
    }
    let action = if rng.random::<f64>() < epsilon {
        random_policy(valid, rng)?
    } else {
        greedy_q_policy(&qnet.q_values(features)?, valid)?
    };
    if !valid.contains(&action) {
        record_invalid_selection();
        return Err(Error::InvalidAction(action));
    }
    Ok(action)
}

fn stack(
    rows: impl ExactSizeIterator<Item = impl AsRef<[f64]>>,
    cols: usize,
) -> Result<Array2<f64>> {
    let n = rows.len();
    let mut out = Array2::zeros((n, cols));
    for (i, r) in rows.enumerate() {
        let r = r.as_ref();
        if r.len() != cols {
            return Err(Error::shape(cols, r.len()));
        }
        out.row_mut(i).assign(&ndarray::ArrayView1::from(r));
    }
    Ok(out)
}

/// Masked argmax of one row of action values.
fn masked_argmax(q: ndarray::ArrayView1<'_, f64>, valid: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (&v, &ok)) in q.iter().zip(valid).enumerate() {
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j)
}

/// Double-estimator bootstrap targets: the online network picks the best
/// valid next action and the target network scores it.
pub fn td_targets(
    batch: &[&Transition],
    online: &Mlp<f64>,
    target: &Mlp<f64>,
    discount: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let next = stack(batch.iter().map(|t| &t.next_state), online.input_size())?;
    let q_online = online.forward_batch(&next)?;
    let q_target = target.forward_batch(&next)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done || discount == 0.0 {
                return t.reward;
            }
            match masked_argmax(q_online.row(i), &t.next_valid) {
                Some(a) => t.reward + discount * q_target[[i, a]],
                None => t.reward,
            }
        })
        .collect())
}

pub fn huber(x: f64, delta: f64) -> f64 {
    if x.abs() <= delta {
        0.5 * x * x
    } else {
        delta * (x.abs() - 0.5 * delta)
    }
}

/// States, taken actions and fixed regression targets of one update.
#[derive(Clone, Debug)]
pub struct TdBatch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub targets: Vec<f64>,
}

impl TdBatch {
    pub fn new(states: Array2<f64>, actions: Vec<usize>, targets: Vec<f64>) -> Result<Self> {
        let n = states.nrows();
        if n == 0 || actions.len() != n || targets.len() != n {
            return Err(Error::shape(
                n,
                format!("{} actions, {} targets", actions.len(), targets.len()),
            ));
        }
        Ok(Self {
            states,
            actions,
            targets,
        })
    }
}

fn check_actions(batch: &TdBatch, width: usize) -> Result<()> {
    match batch.actions.iter().find(|&&a| a >= width) {
        Some(&a) => Err(Error::Index {
            index: a,
            len: width,
        }),
        None => Ok(()),
    }
}

/// Mean Huber loss of `Q(s_i, a_i) - y_i`.
pub fn td_loss(net: &Mlp<f64>, batch: &TdBatch, delta: f64) -> Result<f64> {
    check_actions(batch, net.output_size())?;
    let q = net.forward_batch(&batch.states)?;
    let n = batch.actions.len() as f64;
    Ok(batch
        .actions
        .iter()
        .zip(&batch.targets)
        .enumerate()
        .map(|(i, (&a, &y))| huber(q[[i, a]] - y, delta))
        .sum::<f64>()
        / n)
}

/// Loss and its gradient with respect to every online parameter.
pub fn td_loss_and_gradient(
    net: &Mlp<f64>,
    batch: &TdBatch,
    delta: f64,
) -> Result<(f64, Gradients<f64>)> {
    check_actions(batch, net.output_size())?;
    let n = batch.actions.len() as f64;
    let mut loss = 0.0;
    let (_, grads) = net.forward_backward(&batch.states, |q| {
        let mut g = Array2::zeros(q.dim());
        for (i, (&a, &y)) in batch.actions.iter().zip(&batch.targets).enumerate() {
            let err = q[[i, a]] - y;
            loss += huber(err, delta);
            g[[i, a]] = err.clamp(-delta, delta) / n;
        }
        g
    })?;
    Ok((loss / n, grads))
}

/// One Adam update on a uniformly sampled batch; `Ok(None)` while the buffer
/// holds fewer transitions than a batch.
pub fn train_step(
    qnet: &mut QNetwork,
    buffer: &ReplayBuffer,
    config: &TrainConfig,
    discount: f64,
    rng: &mut dyn RngCore,
) -> Result<Option<f64>> {
    if buffer.len() < config.batch_size {
        return Ok(None);
    }
    let batch = buffer.sample(config.batch_size, rng)?;
    let targets = td_targets(&batch, &qnet.online, &qnet.target, discount)?;
    let states = stack(batch.iter().map(|t| &t.state), qnet.online.input_size())?;
    let td = TdBatch::new(states, batch.iter().map(|t| t.action).collect(), targets)?;
    let (loss, grads) = td_loss_and_gradient(&qnet.online, &td, config.huber_delta)?;
    adam_step(&mut qnet.online, &grads, &mut qnet.adam)?;
    qnet.train_steps += 1;
    if qnet.train_steps.is_multiple_of(config.target_sync as u64) {
        qnet.sync_target();
    }
    Ok(Some(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvCost;
    use crate::metrics::CostMetric;
    use crate::nn::Dense;
    use crate::transforms::{Mask, Reconstruction};
    use ndarray::{arr1, arr2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env_config() -> EnvConfig {
        EnvConfig::new(16, 16, 2, EnvCost::Metric(CostMetric::Mse))
    }

    fn obs(value: f64, step: usize) -> Observation<f64> {
        let mut mask = Mask::low_frequency(16, 2).unwrap();
        for j in 0..step {
            mask.observe(j).unwrap();
        }
        Observation {
            reconstruction: Reconstruction::from_magnitude(Array2::from_elem((16, 16), value)),
            mask,
            step,
        }
    }

    #[test]
    fn dataset_features_are_one_hot() {
        let f = Featurizer::new(Variant::DatasetSpecific, &env_config(), 4);
        let x = f.features(&obs(0.3, 0)).unwrap();
        assert_eq!(x.len(), 15);
        assert_eq!(x[0], 1.0);
        assert_eq!(x.iter().sum::<f64>(), 1.0);
        assert_eq!(f.features(&obs(0.3, 5)).unwrap()[5], 1.0);
    }

    #[test]
    fn subject_features() {
        let f = Featurizer::new(Variant::SubjectSpecific, &env_config(), 4);
        let zero = f.features(&obs(0.0, 0)).unwrap();
        assert_eq!(zero.len(), 16 + 16 + 1);
        assert!(zero[..16].iter().all(|&v| v == 0.0));
        let constant = f.features(&obs(0.7, 3)).unwrap();
        assert!(constant[..16].iter().all(|&v| v == 1.0));
        assert_eq!(constant[16..32].iter().filter(|&&m| m == 1.0).count(), 5);
        assert_eq!(constant[32], 3.0 / 14.0);
    }

    #[test]
    fn epsilon_schedule() {
        let e = EpsilonSchedule::default();
        assert_eq!(e.value(0, 100), 1.0);
        assert!((e.value(25, 100) - 0.525).abs() < 1e-12);
        assert_eq!(e.value(50, 100), 0.05);
        assert_eq!(e.value(99, 100), 0.05);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                replay_capacity: 8,
                batch_size: 32,
                learning_starts: 8,
                ..Default::default()
            },
            TrainConfig {
                epsilon: EpsilonSchedule {
                    start: 1.5,
                    ..Default::default()
                },
                ..Default::default()
            },
            TrainConfig {
                learning_starts: 30_000,
                ..Default::default()
            },
            TrainConfig {
                total_steps: 0,
                ..Default::default()
            },
            TrainConfig {
                reward_scale: Some(-1.0),
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    fn tiny(weights: Array2<f64>, bias: Vec<f64>) -> Mlp<f64> {
        Mlp::from_layers(vec![Dense {
            weights,
            bias: arr1(&bias),
        }])
        .unwrap()
    }

    fn transition(
        next_state: Vec<f64>,
        reward: f64,
        done: bool,
        next_valid: Vec<bool>,
    ) -> Transition {
        Transition {
            state: vec![0.0; 2],
            action: 0,
            reward,
            next_state,
            done,
            next_valid,
        }
    }

    #[test]
    fn targets_use_online_argmax_and_target_value() {
        // Online prefers action 1, target prefers action 0.
        let online = tiny(arr2(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]), vec![0.0; 3]);
        let target = tiny(arr2(&[[5.0, 0.0], [1.0, 0.0], [0.0, 0.0]]), vec![0.0; 3]);
        let t = transition(vec![1.0, 0.0], 0.5, false, vec![true, true, true]);
        assert_eq!(
            td_targets(&[&t], &online, &target, 0.5).unwrap(),
            vec![0.5 + 0.5 * 1.0]
        );
        let masked = transition(vec![1.0, 0.0], 0.5, false, vec![true, false, true]);
        assert_eq!(
            td_targets(&[&masked], &online, &target, 0.5).unwrap(),
            vec![0.5 + 0.5 * 5.0]
        );
        let done = transition(vec![1.0, 0.0], 0.5, true, vec![false; 3]);
        assert_eq!(
            td_targets(&[&done], &online, &target, 0.9).unwrap(),
            vec![0.5]
        );
        assert_eq!(td_targets(&[&t], &online, &target, 0.0).unwrap(), vec![0.5]);
    }

    #[test]
    fn huber_shape() {
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(-3.0, 1.0), 2.5);
    }

    #[test]
    fn targets_at_predictions_leave_parameters_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feat = Featurizer::new(Variant::DatasetSpecific, &env_config(), 4);
        let mut q = QNetwork::new(feat, &[8], AdamConfig::default(), &mut rng).unwrap();
        let states = Array2::from_shape_fn((4, feat.len()), |(i, j)| (i == j) as u8 as f64);
        let preds = q.online.forward_batch(&states).unwrap();
        let actions = vec![0, 3, 5, 7];
        let targets = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| preds[[i, a]])
            .collect();
        let batch = TdBatch::new(states, actions, targets).unwrap();
        let (loss, grads) = td_loss_and_gradient(&q.online, &batch, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        let before = q.online.clone();
        adam_step(&mut q.online, &grads, &mut q.adam).unwrap();
        assert_eq!(q.online, before);
    }

    #[test]
    fn train_step_not_ready_then_sync() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let feat = Featurizer::new(Variant::DatasetSpecific, &env_config(), 4);
        let mut q = QNetwork::new(feat, &[8], AdamConfig::default(), &mut rng).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            target_sync: 2,
            learning_starts: 4,
            ..Default::default()
        };
        let mut buf = ReplayBuffer::new(10).unwrap();
        assert_eq!(train_step(&mut q, &buf, &cfg, 0.5, &mut rng).unwrap(), None);
        for k in 0..4 {
            let mut s = vec![0.0; feat.len()];
            s[k] = 1.0;
            let mut n = vec![0.0; feat.len()];
            n[k + 1] = 1.0;
            buf.push(Transition {
                state: s,
                action: k + 3,
                reward: 1.0,
                next_state: n,
                done: false,
                next_valid: vec![true; 16],
            });
        }
        let target_before = q.target.clone();
        let loss = train_step(&mut q, &buf, &cfg, 0.5, &mut rng)
            .unwrap()
            .unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
        assert_eq!(q.target, target_before);
        assert_ne!(q.online, target_before);
        train_step(&mut q, &buf, &cfg, 0.5, &mut rng).unwrap();
        assert_eq!(q.target, q.online);
    }

    #[test]
    fn select_action_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let feat = Featurizer::new(Variant::DatasetSpecific, &env_config(), 4);
        let q = QNetwork::new(feat, &[8], AdamConfig::default(), &mut rng).unwrap();
        let x = feat.features(&obs(0.0, 0)).unwrap();
        let valid: Vec<usize> = (0..16).filter(|j| j % 3 != 0).collect();
        let greedy = greedy_q_policy(&q.q_values(&x).unwrap(), &valid).unwrap();
        for _ in 0..100 {
            assert_eq!(
                select_action(&q, &x, &valid, 0.0, &mut rng).unwrap(),
                greedy
            );
        }
        assert!(matches!(
            select_action(&q, &x, &[], 0.5, &mut rng),
            Err(Error::NoAction)
        ));
    }
}
