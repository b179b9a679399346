use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{run_episode, AcquisitionEnv, EnvConfig, EpisodeRecord, Reconstructor};
use crate::error::{Error, Result};
use crate::metrics::{mean_ci95, Metric};
use crate::policies::Policy;
use crate::transforms::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub metric: Metric,
    pub mean: f64,
    pub ci95: f64,
}

/// One policy run once over an image set.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub policy: String,
    pub image_ids: Vec<String>,
    pub records: Vec<EpisodeRecord<f64>>,
    /// Per-image AUCs, one vector per entry of [`Metric::ALL`].
    aucs: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn new(
        policy: String,
        image_ids: Vec<String>,
        records: Vec<EpisodeRecord<f64>>,
    ) -> Result<Self> {
        if image_ids.len() != records.len() {
            return Err(Error::shape(image_ids.len(), records.len()));
        }
        let aucs = Metric::ALL
            .iter()
            .map(|&m| {
                records
                    .iter()
                    .map(|r| r.curve(m).auc())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            policy,
            image_ids,
            records,
            aucs,
        })
    }

    pub fn aucs(&self, metric: Metric) -> &[f64] {
        &self.aucs[Metric::ALL
            .iter()
            .position(|&m| m == metric)
            .expect("all metrics")]
    }

    /// Mean and 95% half-width of the per-image AUC, one row per metric.
    pub fn table(&self) -> Result<Vec<AucSummary>> {
        Metric::ALL
            .iter()
            .map(|&metric| {
                let (mean, ci95) = mean_ci95(self.aucs(metric))?;
                Ok(AucSummary { metric, mean, ci95 })
            })
            .collect()
    }

    pub fn action_sequences(&self) -> Vec<&[usize]> {
        self.records.iter().map(|r| r.actions.as_slice()).collect()
    }
}

/// Runs one episode per image in parallel. Image `i` draws from the ChaCha
/// stream `i` of `seed`, so results do not depend on scheduling.
pub fn evaluate_policy(
    name: &str,
    make_policy: &(dyn Fn() -> Result<Box<dyn Policy<f64>>> + Sync),
    images: &[(&str, &Image<f64>)],
    env_config: &EnvConfig,
    reconstructor: Arc<dyn Reconstructor<f64>>,
    seed: u64,
) -> Result<Evaluation> {
    if images.is_empty() {
        return Err(Error::Config(format!(
            "no images to evaluate policy {name} on"
        )));
    }
    env_config.validate()?;
    let records = images
        .par_iter()
        .enumerate()
        .map(|(i, (_, image))| {
            let mut env = AcquisitionEnv::new(env_config.clone(), reconstructor.clone())?;
            let mut policy = make_policy()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            run_episode(&mut env, image, policy.as_mut(), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Evaluation::new(
        name.to_string(),
        images.iter().map(|(id, _)| id.to_string()).collect(),
        records,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvCost, ZeroFilled};
    use crate::metrics::CostMetric;
    use crate::policies::{LowToHighPolicy, RandomPolicy};
    use rand::Rng;

    fn images(n: usize) -> Vec<(String, Image<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        (0..n)
            .map(|i| {
                (
                    format!("i{i}"),
                    Image::from_fn(16, 16, |_| rng.random::<f64>()).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn deterministic_and_schema() {
        let imgs = images(6);
        let refs: Vec<(&str, &Image<f64>)> = imgs.iter().map(|(i, x)| (i.as_str(), x)).collect();
        let cfg = EnvConfig::new(16, 16, 2, EnvCost::Metric(CostMetric::Mse));
        let make = || -> Result<Box<dyn Policy<f64>>> { Ok(Box::new(RandomPolicy)) };
        let a = evaluate_policy("random", &make, &refs, &cfg, Arc::new(ZeroFilled), 1).unwrap();
        let b = evaluate_policy("random", &make, &refs, &cfg, Arc::new(ZeroFilled), 1).unwrap();
        assert_eq!(a.action_sequences(), b.action_sequences());
        let table = a.table().unwrap();
        assert_eq!(table.len(), 4);
        assert_eq!(table, b.table().unwrap());
        let l2h = || -> Result<Box<dyn Policy<f64>>> { Ok(Box::new(LowToHighPolicy)) };
        let c = evaluate_policy("low-to-high", &l2h, &refs, &cfg, Arc::new(ZeroFilled), 1).unwrap();
        assert!(c.action_sequences().windows(2).all(|w| w[0] == w[1]));
        assert!(evaluate_policy("random", &make, &[], &cfg, Arc::new(ZeroFilled), 1).is_err());
    }
}
