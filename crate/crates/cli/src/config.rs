use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use active_kspace::data::{PhantomConfig, Split, SplitFractions};
use active_kspace::ddqn::TrainConfig;
use active_kspace::env::{default_budget, EnvConfig, EnvCost};
use active_kspace::metrics::CostMetric;
use active_kspace::policies::PolicyKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Name accepted for the learned-evaluator baseline, which is not shipped.
pub const EVALUATOR: &str = "evaluator";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Existing dataset directory or manifest; required by train and eval.
    pub path: Option<PathBuf>,
    /// Number of phantoms written by gen-data.
    pub count: usize,
    pub phantom: PhantomConfig,
    pub splits: SplitFractions,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            count: 100,
            phantom: PhantomConfig::default(),
            splits: SplitFractions::default(),
        }
    }
}

/// Environment settings; the image size comes from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub low_freq_count: usize,
    /// `None` means `min(100 - L, W - L)`.
    pub budget: Option<usize>,
    pub cost: EnvCost,
    pub discount: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            low_freq_count: 8,
            budget: None,
            cost: EnvCost::Metric(CostMetric::Mse),
            discount: 0.5,
        }
    }
}

impl EnvSection {
    pub fn resolve(&self, height: usize, width: usize) -> Result<EnvConfig, CliError> {
        let env = EnvConfig {
            height,
            width,
            low_freq_count: self.low_freq_count,
            budget: self
                .budget
                .unwrap_or_else(|| default_budget(width, self.low_freq_count)),
            cost: self.cost,
            discount: self.discount,
        };
        env.validate()?;
        Ok(env)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data generation, training and evaluation; copied into
    /// `train.seed` on resolution.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub env: EnvSection,
    pub train: TrainConfig,
    pub policies: Vec<String>,
    /// Trained networks for the DDQN policies, one per variant.
    pub checkpoints: Vec<PathBuf>,
    pub eval_split: Split,
    /// Evaluate only the first `n` images of the split.
    pub eval_limit: Option<usize>,
    /// Evaluation run directory read by the report command.
    pub report_input: Option<PathBuf>,
    /// Threads for evaluation and validation rollouts; `None` uses all cores.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            env: EnvSection::default(),
            train: TrainConfig::default(),
            policies: ["random", "random-lb", "low-to-high", "oracle"]
                .map(String::from)
                .to_vec(),
            checkpoints: Vec::new(),
            eval_split: Split::Test,
            eval_limit: None,
            report_input: None,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn policy_kinds(&self) -> Result<Vec<PolicyKind>, CliError> {
        if self.policies.is_empty() {
            return Err(CliError::Config("no policies requested".into()));
        }
        let mut kinds = Vec::new();
        for name in &self.policies {
            if name == EVALUATOR {
                return Err(CliError::Config(
                    "the learned-evaluator baseline needs an external pretrained network \
                     and is not available in this build"
                        .into(),
                ));
            }
            let kind: PolicyKind = name.parse()?;
            if kinds.contains(&kind) {
                return Err(CliError::Config(format!("policy {kind} listed twice")));
            }
            kinds.push(kind);
        }
        Ok(kinds)
    }

    /// Checks everything that does not depend on the dataset.
    pub fn validate(&self) -> Result<(), CliError> {
        self.data.phantom.validate()?;
        self.data.splits.validate()?;
        self.train.validate()?;
        self.policy_kinds()?;
        if !(0.0..=1.0).contains(&self.env.discount) {
            return Err(CliError::Config(format!(
                "discount {} outside [0, 1]",
                self.env.discount
            )));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        if self.eval_limit == Some(0) {
            return Err(CliError::Config("eval_limit must be positive".into()));
        }
        Ok(())
    }

    /// Hex digest of everything that influences outputs.
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.workers = None;
        keyed.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&keyed).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..6].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// `output_dir/<command>-<hash>-seed<seed>`.
    pub fn run_dir(&self, command: &str) -> PathBuf {
        self.output_dir
            .join(format!("{command}-{}-seed{}", self.hash(), self.seed))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "sead": 2}"#).unwrap_err();
        assert!(err.to_string().contains("sead"));
        let err = serde_json::from_str::<RunConfig>(r#"{"env": {"gamma": 0.5}}"#).unwrap_err();
        assert!(err.to_string().contains("gamma"));
        let ok: RunConfig = serde_json::from_str(r#"{"env": {"low_freq_count": 4}}"#).unwrap();
        assert_eq!(ok.env.low_freq_count, 4);
        assert_eq!(ok.train, TrainConfig::default());
    }

    #[test]
    fn validation_and_hash() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&c.to_json()).unwrap(), c);
        let h = c.hash();
        c.workers = Some(3);
        assert_eq!(c.hash(), h);
        c.env.low_freq_count = 4;
        assert_ne!(c.hash(), h);

        c.policies = vec!["greedy".into()];
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        c.policies = vec![EVALUATOR.into()];
        assert!(matches!(c.validate(), Err(CliError::Config(m)) if m.contains("evaluator")));
        c.policies = vec!["oracle".into()];
        c.env.discount = 1.5;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        c.env.discount = 0.5;
        c.env.low_freq_count = 60;
        c.env.budget = Some(10);
        assert!(matches!(c.env.resolve(64, 64), Err(CliError::Config(_))));
    }
}
