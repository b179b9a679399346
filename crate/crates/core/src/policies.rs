//! Heuristic, oracle and value-greedy acquisition rules.
//!
//! Ties are always resolved toward the lowest column index.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transforms::frequency_distance;

/// Evaluation-time access to the hidden state.
pub trait GroundTruthAccess<T> {
    /// Cost of the reconstruction obtained after also acquiring `column`.
    fn cost_after(&self, column: usize) -> Result<T>;
}

/// Everything a policy may look at when choosing an action.
pub struct PolicyInput<'a, T> {
    pub observation: &'a Observation<T>,
    /// Unobserved columns, ascending.
    pub valid: &'a [usize],
    pub ground_truth: Option<&'a dyn GroundTruthAccess<T>>,
}

pub trait Policy<T>: Send {
    fn name(&self) -> &str;

    fn select(&mut self, input: &PolicyInput<'_, T>, rng: &mut dyn RngCore) -> Result<usize>;
}

fn non_empty(valid: &[usize]) -> Result<()> {
    if valid.is_empty() {
        Err(Error::NoAction)
    } else {
        Ok(())
    }
}

/// Uniform over the valid set.
pub fn random_policy(valid: &[usize], rng: &mut dyn RngCore) -> Result<usize> {
    non_empty(valid)?;
    Ok(valid[rng.random_range(0..valid.len())])
}

/// Samples `j` with probability proportional to `exp(-|j - W/2| / tau)`.
pub fn random_lb_policy(
    valid: &[usize],
    width: usize,
    tau: f64,
    rng: &mut dyn RngCore,
) -> Result<usize> {
    non_empty(valid)?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "low-frequency bias tau {tau} must be positive"
        )));
    }
    let weights: Vec<f64> = valid
        .iter()
        .map(|&j| (-(frequency_distance(j, width) as f64) / tau).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&j, &w) in valid.iter().zip(&weights) {
        if u < w {
            return Ok(j);
        }
        u -= w;
    }
    Ok(*valid.last().expect("non-empty"))
}

/// The valid column closest to DC; equidistant columns resolve to the lower index.
pub fn low_to_high_policy(valid: &[usize], width: usize) -> Result<usize> {
    valid
        .iter()
        .copied()
        .min_by_key(|&j| (frequency_distance(j, width), j))
        .ok_or(Error::NoAction)
}

/// One-step lookahead with ground truth: the column whose acquisition
/// minimizes the cost.
///
/// Costs within `sqrt(eps)` relative of the minimum count as ties and go to
/// the lowest index. Mirrored columns of a real image carry equal energy,
/// and rounding alone must not decide between them.
pub fn oracle_policy<T: Scalar>(
    valid: &[usize],
    truth: &dyn GroundTruthAccess<T>,
) -> Result<usize> {
    let mut sorted = valid.to_vec();
    sorted.sort_unstable();
    let costs = sorted
        .iter()
        .map(|&j| truth.cost_after(j))
        .collect::<Result<Vec<T>>>()?;
    let min = costs.iter().copied().fold(T::infinity(), T::min);
    let slack = min.abs() * T::epsilon().sqrt();
    sorted
        .iter()
        .zip(&costs)
        .find(|&(_, &c)| c <= min + slack)
        .map(|(&j, _)| j)
        .ok_or(Error::NoAction)
}

/// Argmax of `q` after setting every column outside `valid` to `-inf`.
pub fn greedy_q_policy<T: Scalar>(q: &[T], valid: &[usize]) -> Result<usize> {
    non_empty(valid)?;
    let mut masked = vec![T::neg_infinity(); q.len()];
    for &j in valid {
        let v = *q.get(j).ok_or(Error::Index {
            index: j,
            len: q.len(),
        })?;
        masked[j] = if v.is_nan() { T::neg_infinity() } else { v };
    }
    let mut best = valid.iter().copied().min().expect("non-empty");
    for (j, &v) in masked.iter().enumerate() {
        if v > masked[best] {
            best = j;
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

impl<T: Scalar> Policy<T> for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn select(&mut self, input: &PolicyInput<'_, T>, rng: &mut dyn RngCore) -> Result<usize> {
        random_policy(input.valid, rng)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RandomLowBiasPolicy {
    pub tau: f64,
}

impl RandomLowBiasPolicy {
    /// Bias scale `W / 8`.
    pub fn for_width(width: usize) -> Self {
        Self {
            tau: width as f64 / 8.0,
        }
    }
}

impl<T: Scalar> Policy<T> for RandomLowBiasPolicy {
    fn name(&self) -> &str {
        "random-lb"
    }

    fn select(&mut self, input: &PolicyInput<'_, T>, rng: &mut dyn RngCore) -> Result<usize> {
        random_lb_policy(input.valid, input.observation.mask.width(), self.tau, rng)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LowToHighPolicy;

impl<T: Scalar> Policy<T> for LowToHighPolicy {
    fn name(&self) -> &str {
        "low-to-high"
    }

    fn select(&mut self, input: &PolicyInput<'_, T>, _rng: &mut dyn RngCore) -> Result<usize> {
        low_to_high_policy(input.valid, input.observation.mask.width())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePolicy;

impl<T: Scalar> Policy<T> for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn select(&mut self, input: &PolicyInput<'_, T>, _rng: &mut dyn RngCore) -> Result<usize> {
        let truth = input
            .ground_truth
            .ok_or_else(|| Error::Config("oracle policy needs ground-truth access".into()))?;
        oracle_policy(input.valid, truth)
    }
}

/// Policy names accepted on the command line and in configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    Random,
    RandomLb,
    LowToHigh,
    Oracle,
    DdqnSubject,
    DdqnDataset,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Random,
        PolicyKind::RandomLb,
        PolicyKind::LowToHigh,
        PolicyKind::Oracle,
        PolicyKind::DdqnSubject,
        PolicyKind::DdqnDataset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::RandomLb => "random-lb",
            PolicyKind::LowToHigh => "low-to-high",
            PolicyKind::Oracle => "oracle",
            PolicyKind::DdqnSubject => "ddqn-subject",
            PolicyKind::DdqnDataset => "ddqn-dataset",
        }
    }

    /// Fixed heuristics that do not learn and do not peek at the truth.
    pub fn is_heuristic(self) -> bool {
        matches!(
            self,
            PolicyKind::Random | PolicyKind::RandomLb | PolicyKind::LowToHigh
        )
    }

    pub fn is_ddqn(self) -> bool {
        matches!(self, PolicyKind::DdqnSubject | PolicyKind::DdqnDataset)
    }

    /// Builds the non-learned policies; DDQN policies need a trained network.
    pub fn heuristic<T: Scalar>(self, width: usize) -> Option<Box<dyn Policy<T>>> {
        match self {
            PolicyKind::Random => Some(Box::new(RandomPolicy)),
            PolicyKind::RandomLb => Some(Box::new(RandomLowBiasPolicy::for_width(width))),
            PolicyKind::LowToHigh => Some(Box::new(LowToHighPolicy)),
            PolicyKind::Oracle => Some(Box::new(OraclePolicy)),
            PolicyKind::DdqnSubject | PolicyKind::DdqnDataset => None,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(k: PolicyKind) -> String {
        k.name().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Costs(Vec<f64>);

    impl GroundTruthAccess<f64> for Costs {
        fn cost_after(&self, column: usize) -> Result<f64> {
            Ok(self.0[column])
        }
    }

    #[test]
    fn empty_valid_set_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(random_policy(&[], &mut rng), Err(Error::NoAction)));
        assert!(matches!(
            random_lb_policy(&[], 8, 1.0, &mut rng),
            Err(Error::NoAction)
        ));
        assert!(matches!(low_to_high_policy(&[], 8), Err(Error::NoAction)));
        assert!(matches!(
            oracle_policy(&[], &Costs(vec![])),
            Err(Error::NoAction)
        ));
        assert!(matches!(
            greedy_q_policy::<f64>(&[0.0], &[]),
            Err(Error::NoAction)
        ));
    }

    #[test]
    fn single_valid_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_policy(&[7], &mut rng).unwrap(), 7);
        assert_eq!(random_lb_policy(&[7], 64, 8.0, &mut rng).unwrap(), 7);
    }

    #[test]
    fn low_to_high_order() {
        // Columns within distance 3 of DC (29..=35) are observed.
        let valid: Vec<usize> = (0..64).filter(|j| !(29..=35).contains(j)).collect();
        assert_eq!(low_to_high_policy(&valid, 64).unwrap(), 28);
        assert_eq!(low_to_high_policy(&[0, 63], 64).unwrap(), 63);
        assert_eq!(low_to_high_policy(&[33, 31], 64).unwrap(), 31);
        let mut valid: Vec<usize> = (0..64).collect();
        let mut last = 0;
        while !valid.is_empty() {
            let j = low_to_high_policy(&valid, 64).unwrap();
            assert!(frequency_distance(j, 64) >= last);
            last = frequency_distance(j, 64);
            valid.retain(|&v| v != j);
        }
    }

    #[test]
    fn oracle_picks_lowest_cost_lowest_index() {
        let c = Costs(vec![0.5, 0.2, 0.3, 0.2]);
        assert_eq!(oracle_policy(&[0, 1, 2, 3], &c).unwrap(), 1);
        assert_eq!(oracle_policy(&[3, 2, 0], &c).unwrap(), 3);
    }

    #[test]
    fn greedy_q_masking_and_ties() {
        assert_eq!(greedy_q_policy(&[1.0; 6], &[2, 4, 5]).unwrap(), 2);
        assert_eq!(
            greedy_q_policy(&[0.0, 9.0, 3.0, 1.0], &[0, 2, 3]).unwrap(),
            2
        );
        assert!(greedy_q_policy(&[0.0, 1.0], &[0, 5]).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("evaluator".parse::<PolicyKind>().is_err());
    }
}
