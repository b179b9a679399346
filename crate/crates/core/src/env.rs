//! Episodic acquisition environment.
//!
//! The hidden state is the ground-truth image and its spectrum; the agent
//! sees the current reconstruction, the column mask and the step index.
//! Each action acquires one unobserved column and is rewarded with the
//! decrease of the configured cost.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CostMetric, Metric, MetricCurve};
use crate::policies::{GroundTruthAccess, Policy, PolicyInput};
use crate::scalar::Scalar;
use crate::transforms::{Dft2, Image, KSpace, Mask, Reconstruction};

static INVALID_SELECTIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of times any policy driven by this crate proposed an action
/// outside the valid set, process-wide.
pub fn invalid_selection_count() -> usize {
    INVALID_SELECTIONS.load(Ordering::Relaxed)
}

pub(crate) fn record_invalid_selection() {
    INVALID_SELECTIONS.fetch_add(1, Ordering::Relaxed);
}

/// Maps a zero-filled reconstruction to the estimate the agent observes.
pub trait Reconstructor<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    fn reconstruct(&self, zero_filled: Reconstruction<T>, mask: &Mask) -> Reconstruction<T>;
}

/// Returns the zero-filled inverse DFT unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroFilled;

impl<T: Scalar> Reconstructor<T> for ZeroFilled {
    fn name(&self) -> &str {
        "zero-filled"
    }

    fn reconstruct(&self, zero_filled: Reconstruction<T>, _mask: &Mask) -> Reconstruction<T> {
        zero_filled
    }
}

/// Cost used for rewards.
///
/// `ComplexMse` compares the complex reconstruction with the ground truth
/// and makes each reward equal to the acquired column's energy divided by
/// `H * W` under zero filling; the other variants score the magnitude image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EnvCost {
    Metric(CostMetric),
    ComplexMse,
}

impl EnvCost {
    pub fn evaluate<T: Scalar>(self, recon: &Reconstruction<T>, truth: &Image<T>) -> Result<T> {
        match self {
            EnvCost::Metric(c) => c.evaluate(recon.magnitude(), truth),
            EnvCost::ComplexMse => {
                if recon.complex_image().dim() != truth.pixels().dim() {
                    return Err(Error::shape(
                        format!("{:?}", truth.pixels().dim()),
                        format!("{:?}", recon.complex_image().dim()),
                    ));
                }
                let sum = recon
                    .complex_image()
                    .iter()
                    .zip(truth.pixels())
                    .map(|(c, &x)| (c.re - x) * (c.re - x) + c.im * c.im)
                    .fold(T::zero(), |a, b| a + b);
                Ok(sum / T::of_usize(truth.pixels().len()))
            }
        }
    }

    /// Reported metric whose area is used for model selection.
    pub fn metric(self) -> Metric {
        match self {
            EnvCost::Metric(c) => c.metric(),
            EnvCost::ComplexMse => Metric::Mse,
        }
    }

    /// Default reward multiplier: raw MSE decrements are tiny.
    pub fn default_reward_scale(self) -> f64 {
        match self {
            EnvCost::Metric(CostMetric::NegPsnr | CostMetric::NegSsim) => 1.0,
            _ => 100.0,
        }
    }
}

impl From<CostMetric> for EnvCost {
    fn from(c: CostMetric) -> Self {
        EnvCost::Metric(c)
    }
}

impl fmt::Display for EnvCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvCost::Metric(c) => c.fmt(f),
            EnvCost::ComplexMse => f.write_str("complex-mse"),
        }
    }
}

impl FromStr for EnvCost {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "complex-mse" {
            Ok(EnvCost::ComplexMse)
        } else {
            s.parse().map(EnvCost::Metric)
        }
    }
}

impl TryFrom<String> for EnvCost {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EnvCost> for String {
    fn from(c: EnvCost) -> String {
        c.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub height: usize,
    pub width: usize,
    pub low_freq_count: usize,
    pub budget: usize,
    pub cost: EnvCost,
    /// Consumed by the agent, not by the environment.
    pub discount: f64,
}

impl EnvConfig {
    /// Configuration with the default budget `min(100 - L, W - L)`.
    pub fn new(height: usize, width: usize, low_freq_count: usize, cost: EnvCost) -> Self {
        Self {
            height,
            width,
            low_freq_count,
            budget: default_budget(width, low_freq_count),
            cost,
            discount: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.low_freq_count + self.budget > self.width {
            return Err(Error::Config(format!(
                "L + T = {} + {} exceeds width {}",
                self.low_freq_count, self.budget, self.width
            )));
        }
        if self.budget == 0 && self.low_freq_count < self.width {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config(format!(
                "discount {} outside [0, 1]",
                self.discount
            )));
        }
        if !self.width.is_multiple_of(2) || self.width < 8 || self.height < 8 {
            return Err(Error::Config(format!(
                "image size {}x{} must be at least 8x8 with even width",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

pub fn default_budget(width: usize, low_freq_count: usize) -> usize {
    width
        .saturating_sub(low_freq_count)
        .min(100usize.saturating_sub(low_freq_count))
}

/// What the agent sees at step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation<T> {
    pub reconstruction: Reconstruction<T>,
    pub mask: Mask,
    pub step: usize,
}

#[derive(Clone, Debug)]
pub struct StepOutcome<T> {
    pub observation: Observation<T>,
    pub reward: T,
    pub done: bool,
}

#[derive(Clone)]
struct Episode<T> {
    truth: Image<T>,
    kspace: KSpace<T>,
    mask: Mask,
    step: usize,
    reconstruction: Reconstruction<T>,
    last_cost: T,
    done: bool,
}

pub struct AcquisitionEnv<T: Scalar> {
    config: EnvConfig,
    dft: Dft2<T>,
    reconstructor: Arc<dyn Reconstructor<T>>,
    episode: Option<Episode<T>>,
}

impl<T: Scalar> fmt::Debug for AcquisitionEnv<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AcquisitionEnv")
            .field("config", &self.config)
            .field("reconstructor", &self.reconstructor.name())
            .field("step", &self.episode.as_ref().map(|e| e.step))
            .finish()
    }
}

impl<T: Scalar> AcquisitionEnv<T> {
    pub fn new(config: EnvConfig, reconstructor: Arc<dyn Reconstructor<T>>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            dft: Dft2::new(config.height, config.width),
            config,
            reconstructor,
            episode: None,
        })
    }

    /// Environment with the zero-filled reconstructor.
    pub fn zero_filled(config: EnvConfig) -> Result<Self> {
        Self::new(config, Arc::new(ZeroFilled))
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reconstructor(&self) -> &Arc<dyn Reconstructor<T>> {
        &self.reconstructor
    }

    fn reconstruct(&self, kspace: &KSpace<T>, mask: &Mask) -> Result<Reconstruction<T>> {
        let zf = self.dft.zero_filled(kspace, mask)?;
        Ok(self.reconstructor.reconstruct(zf, mask))
    }

    fn episode(&self) -> Result<&Episode<T>> {
        self.episode
            .as_ref()
            .ok_or_else(|| Error::Config("environment has not been reset".into()))
    }

    /// Starts an episode on `image` with the `L` centermost columns observed.
    pub fn reset(&mut self, image: &Image<T>) -> Result<Observation<T>> {
        if (image.height(), image.width()) != (self.config.height, self.config.width) {
            return Err(Error::Config(format!(
                "image is {}x{}, environment expects {}x{}",
                image.height(),
                image.width(),
                self.config.height,
                self.config.width
            )));
        }
        let kspace = self.dft.forward(image)?;
        let mask = Mask::low_frequency(self.config.width, self.config.low_freq_count)?;
        let reconstruction = self.reconstruct(&kspace, &mask)?;
        let last_cost = self.config.cost.evaluate(&reconstruction, image)?;
        let episode = Episode {
            truth: image.clone(),
            kspace,
            done: mask.observed_count() == mask.width() || self.config.budget == 0,
            mask,
            step: 0,
            reconstruction,
            last_cost,
        };
        self.episode = Some(episode);
        self.observation()
    }

    pub fn observation(&self) -> Result<Observation<T>> {
        let e = self.episode()?;
        Ok(Observation {
            reconstruction: e.reconstruction.clone(),
            mask: e.mask.clone(),
            step: e.step,
        })
    }

    /// Acquires `column`; the reward is `C(x_t) - C(x_{t+1})`.
    pub fn step(&mut self, column: usize) -> Result<StepOutcome<T>> {
        let (mask, reconstruction, cost) = {
            let e = self.episode()?;
            if e.done {
                return Err(Error::EpisodeFinished);
            }
            let mask = e.mask.with(column)?;
            let reconstruction = self.reconstruct(&e.kspace, &mask)?;
            let cost = self.config.cost.evaluate(&reconstruction, &e.truth)?;
            (mask, reconstruction, cost)
        };
        let budget = self.config.budget;
        let e = self.episode.as_mut().expect("checked above");
        let reward = e.last_cost - cost;
        e.mask = mask;
        e.reconstruction = reconstruction;
        e.last_cost = cost;
        e.step += 1;
        e.done = e.step >= budget || e.mask.observed_count() == e.mask.width();
        let done = e.done;
        Ok(StepOutcome {
            observation: self.observation()?,
            reward,
            done,
        })
    }

    /// Unobserved columns in ascending order; empty once the episode is done.
    pub fn valid_actions(&self) -> Vec<usize> {
        match &self.episode {
            Some(e) if !e.done => e.mask.unobserved().collect(),
            _ => Vec::new(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    pub fn step_index(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.step)
    }

    pub fn current_cost(&self) -> Result<T> {
        Ok(self.episode()?.last_cost)
    }

    pub fn truth(&self) -> Result<&Image<T>> {
        Ok(&self.episode()?.truth)
    }

    pub fn kspace(&self) -> Result<&KSpace<T>> {
        Ok(&self.episode()?.kspace)
    }

    /// Current values of the four reported metrics, in [`Metric::ALL`] order.
    pub fn current_metrics(&self) -> Result<[T; 4]> {
        let e = self.episode()?;
        let mut out = [T::zero(); 4];
        for (slot, m) in out.iter_mut().zip(Metric::ALL) {
            *slot = m.evaluate(e.reconstruction.magnitude(), &e.truth)?;
        }
        Ok(out)
    }
}

impl<T: Scalar> GroundTruthAccess<T> for AcquisitionEnv<T> {
    fn cost_after(&self, column: usize) -> Result<T> {
        let e = self.episode()?;
        let mask = e.mask.with(column)?;
        let recon = self.reconstruct(&e.kspace, &mask)?;
        self.config.cost.evaluate(&recon, &e.truth)
    }
}

/// Trajectory summary of one evaluation episode.
#[derive(Clone, Debug)]
pub struct EpisodeRecord<T> {
    /// One curve per entry of [`Metric::ALL`], each of length `T + 1`.
    pub curves: Vec<MetricCurve<T>>,
    /// Environment cost at every step.
    pub costs: Vec<T>,
    pub rewards: Vec<T>,
    pub actions: Vec<usize>,
}

impl<T: Scalar> EpisodeRecord<T> {
    pub fn curve(&self, metric: Metric) -> &MetricCurve<T> {
        &self.curves[Metric::ALL
            .iter()
            .position(|&m| m == metric)
            .expect("all metrics")]
    }
}

/// Runs `policy` on `image` until the episode ends, recording every metric.
pub fn run_episode<T: Scalar>(
    env: &mut AcquisitionEnv<T>,
    image: &Image<T>,
    policy: &mut dyn Policy<T>,
    rng: &mut dyn RngCore,
) -> Result<EpisodeRecord<T>> {
    let mut obs = env.reset(image)?;
    let mut values: Vec<Vec<T>> = vec![Vec::new(); Metric::ALL.len()];
    let mut costs = vec![env.current_cost()?];
    let mut rewards = Vec::new();
    let mut actions = Vec::new();
    let push = |env: &AcquisitionEnv<T>, values: &mut Vec<Vec<T>>| -> Result<()> {
        for (v, m) in values.iter_mut().zip(env.current_metrics()?) {
            v.push(m);
        }
        Ok(())
    };
    push(env, &mut values)?;
    while !env.is_done() {
        let valid = env.valid_actions();
        let input = PolicyInput {
            observation: &obs,
            valid: &valid,
            ground_truth: Some(&*env),
        };
        let action = policy.select(&input, rng)?;
        if valid.binary_search(&action).is_err() {
            record_invalid_selection();
            return Err(Error::InvalidAction(action));
        }
        let out = env.step(action)?;
        rewards.push(out.reward);
        costs.push(env.current_cost()?);
        actions.push(action);
        push(env, &mut values)?;
        obs = out.observation;
    }
    let curves = Metric::ALL
        .iter()
        .zip(values)
        .map(|(&m, v)| MetricCurve::new(m, v))
        .collect::<Result<_>>()?;
    Ok(EpisodeRecord {
        curves,
        costs,
        rewards,
        actions,
    })
}
