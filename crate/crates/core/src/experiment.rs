//! Glue shared by the command line and the end-to-end tests: evaluating
//! policies by name and writing the full set of report files for a run.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::ddqn::{evaluate_policy, Checkpoint, Evaluation, Variant};
use crate::env::{EnvConfig, Reconstructor};
use crate::error::{Error, Result};
use crate::policies::{Policy, PolicyKind};
use crate::report::{build_heatmap, export_auc_table, export_curves, AucReport, PolicyHeatmap};
use crate::transforms::Image;

pub const AUC_TABLE_FILE: &str = "auc_table.csv";
pub const SIGNIFICANCE_FILE: &str = "significance.csv";

pub fn curves_file(policy: &str) -> String {
    format!("curves_{policy}.csv")
}

pub fn heatmap_file(policy: &str) -> String {
    format!("heatmap_{policy}.csv")
}

fn variant_of(kind: PolicyKind) -> Option<Variant> {
    match kind {
        PolicyKind::DdqnDataset => Some(Variant::DatasetSpecific),
        PolicyKind::DdqnSubject => Some(Variant::SubjectSpecific),
        _ => None,
    }
}

/// Picks the checkpoint trained for `kind`'s variant; `None` for the others.
pub fn checkpoint_for(kind: PolicyKind, checkpoints: &[Checkpoint]) -> Result<Option<&Checkpoint>> {
    let Some(variant) = variant_of(kind) else {
        return Ok(None);
    };
    checkpoints
        .iter()
        .find(|c| c.meta.featurizer.variant == variant)
        .map(Some)
        .ok_or_else(|| Error::Config(format!("policy {kind} needs a {variant} checkpoint")))
}

/// Evaluates one named policy. DDQN policies require a matching checkpoint,
/// whose environment must agree with `env_config`.
pub fn evaluate_kind(
    kind: PolicyKind,
    checkpoint: Option<&Checkpoint>,
    images: &[(&str, &Image<f64>)],
    env_config: &EnvConfig,
    reconstructor: Arc<dyn Reconstructor<f64>>,
    seed: u64,
) -> Result<Evaluation> {
    let width = env_config.width;
    let make: Box<dyn Fn() -> Result<Box<dyn Policy<f64>>> + Sync> = match variant_of(kind) {
        None => Box::new(move || Ok(kind.heuristic::<f64>(width).expect("non-learned policy"))),
        Some(variant) => {
            let ck = checkpoint
                .ok_or_else(|| Error::Config(format!("policy {kind} needs a checkpoint")))?;
            if ck.meta.featurizer.variant != variant {
                return Err(Error::Config(format!(
                    "policy {kind} given a {} checkpoint",
                    ck.meta.featurizer.variant
                )));
            }
            if ck.meta.env != *env_config {
                return Err(Error::Config(format!(
                    "checkpoint for {kind} was trained with a different environment: {:?}",
                    ck.meta.env
                )));
            }
            let policy = ck.policy()?;
            Box::new(move || Ok(Box::new(policy.clone())))
        }
    };
    evaluate_policy(kind.name(), &*make, images, env_config, reconstructor, seed)
}

/// Files written by [`write_run_report`].
#[derive(Clone, Debug)]
pub struct RunReport {
    pub auc: AucReport,
    pub heatmaps: Vec<(String, PolicyHeatmap)>,
    pub files: Vec<PathBuf>,
}

/// Writes per-policy curves and heatmaps, the AUC table and the
/// significance table into `dir`.
pub fn write_run_report(
    dir: &Path,
    evaluations: &[Evaluation],
    env_config: &EnvConfig,
) -> Result<RunReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let auc = export_auc_table(evaluations)?;
    let mut files = Vec::new();
    let mut heatmaps = Vec::new();
    for e in evaluations {
        let path = dir.join(curves_file(&e.policy));
        let pairs: Vec<_> = e
            .image_ids
            .iter()
            .map(String::as_str)
            .zip(&e.records)
            .collect();
        export_curves(&path, &pairs, env_config.width, env_config.low_freq_count)?;
        files.push(path);

        let heatmap = build_heatmap(
            &e.action_sequences(),
            env_config.width,
            env_config.budget,
            env_config.low_freq_count,
        )?;
        let path = dir.join(heatmap_file(&e.policy));
        heatmap.write_csv(&path)?;
        files.push(path);
        heatmaps.push((e.policy.clone(), heatmap));
    }
    let path = dir.join(AUC_TABLE_FILE);
    auc.write_table(&path)?;
    files.push(path);
    let path = dir.join(SIGNIFICANCE_FILE);
    auc.write_significance(&path)?;
    files.push(path);
    Ok(RunReport {
        auc,
        heatmaps,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvCost, ZeroFilled};
    use crate::metrics::CostMetric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn report_files_and_missing_checkpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let imgs: Vec<(String, Image<f64>)> = (0..5)
            .map(|i| {
                (
                    format!("p{i}"),
                    Image::from_fn(8, 8, |_| rng.random::<f64>()).unwrap(),
                )
            })
            .collect();
        let refs: Vec<_> = imgs.iter().map(|(i, x)| (i.as_str(), x)).collect();
        let env = EnvConfig::new(8, 8, 2, EnvCost::Metric(CostMetric::Mse));
        let evals: Vec<Evaluation> = [
            PolicyKind::Random,
            PolicyKind::LowToHigh,
            PolicyKind::Oracle,
        ]
        .into_iter()
        .map(|k| evaluate_kind(k, None, &refs, &env, Arc::new(ZeroFilled), 3).unwrap())
        .collect();
        let dir = tempfile::tempdir().unwrap();
        let report = write_run_report(dir.path(), &evals, &env).unwrap();
        assert_eq!(report.files.len(), 8);
        assert!(report.files.iter().all(|f| f.exists()));
        assert_eq!(report.auc.rows.len(), 12);

        let err = evaluate_kind(
            PolicyKind::DdqnDataset,
            None,
            &refs,
            &env,
            Arc::new(ZeroFilled),
            3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(checkpoint_for(PolicyKind::DdqnSubject, &[]).is_err());
        assert!(checkpoint_for(PolicyKind::Oracle, &[]).unwrap().is_none());
    }
}
