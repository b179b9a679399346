//! Trainable residual de-aliaser: a small MLP predicting a block-constant
//! correction to the zero-filled magnitude image.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, AdamState, Mlp};
use crate::env::Reconstructor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transforms::{average_pool, center_columns, Dft2, Image, KSpace, Mask, Reconstruction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DealiaserConfig {
    /// Side `D` of the pooled input and of the residual grid.
    pub pool: usize,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub low_freq_count: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for DealiaserConfig {
    fn default() -> Self {
        Self {
            pool: 8,
            hidden: vec![128],
            steps: 1500,
            batch_size: 16,
            low_freq_count: 2,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dealiaser<T> {
    net: Mlp<T>,
    pool: usize,
}

impl<T: Scalar> Dealiaser<T> {
    /// Untrained de-aliaser whose output layer is zero, so it returns the
    /// zero-filled magnitude unchanged.
    pub fn untrained(width: usize, config: &DealiaserConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.pool;
        let sizes: Vec<usize> = std::iter::once(d * d + width)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(d * d))
            .collect();
        let mut net = Mlp::new(&sizes, &mut rng)?;
        let out = net.layers_mut().last_mut().expect("non-empty");
        out.weights.fill(T::zero());
        out.bias.fill(T::zero());
        Ok(Self { net, pool: d })
    }

    pub fn network(&self) -> &Mlp<T> {
        &self.net
    }

    fn features(&self, magnitude: &Array2<T>, mask: &Mask) -> Vec<T> {
        let mut f = average_pool(magnitude, self.pool);
        f.extend(mask.to_vec::<T>());
        f
    }

    /// Adds the block residual to `magnitude`.
    fn apply(&self, magnitude: &Array2<T>, residual: &[T]) -> Array2<T> {
        let (h, w) = magnitude.dim();
        let d = self.pool;
        Array2::from_shape_fn((h, w), |(i, j)| {
            magnitude[[i, j]] + residual[(i * d / h) * d + j * d / w]
        })
    }
}

impl<T: Scalar> Reconstructor<T> for Dealiaser<T> {
    fn name(&self) -> &str {
        "mlp-dealiaser"
    }

    fn reconstruct(&self, zero_filled: Reconstruction<T>, mask: &Mask) -> Reconstruction<T> {
        let feats = self.features(zero_filled.magnitude(), mask);
        let residual = self
            .net
            .forward(&feats)
            .expect("feature length fixed at construction");
        let out = self.apply(zero_filled.magnitude(), &residual);
        Reconstruction::from_magnitude(out.mapv(|v| v.max(T::zero())))
    }
}

/// Random mask: the fixed center block plus a uniformly chosen number of
/// extra columns, covering the whole range of acceleration factors.
pub(crate) fn random_training_mask(
    width: usize,
    low_freq_count: usize,
    rng: &mut impl Rng,
) -> Mask {
    let mut mask = Mask::low_frequency(width, low_freq_count).expect("validated count");
    let mut free: Vec<usize> = (0..width)
        .filter(|j| !center_columns(width, low_freq_count).contains(j))
        .collect();
    let extra = rng.random_range(0..=free.len());
    free.shuffle(rng);
    for &j in &free[..extra] {
        mask.observe(j).expect("unobserved column");
    }
    mask
}

/// Fits a de-aliaser with squared error against the ground truth, sampling a
/// fresh random mask for every image draw.
pub fn train_dealiaser<T: Scalar>(
    images: &[Image<T>],
    config: &DealiaserConfig,
) -> Result<Dealiaser<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("de-aliaser training set is empty".into()))?;
    let (h, w) = (first.height(), first.width());
    if images.iter().any(|im| (im.height(), im.width()) != (h, w)) {
        return Err(Error::Config("training images differ in size".into()));
    }
    if config.pool == 0 || config.pool > h.min(w) || config.batch_size == 0 {
        return Err(Error::Config(format!(
            "pool side {} and batch size {} must be positive, pool at most {}",
            config.pool,
            config.batch_size,
            h.min(w)
        )));
    }
    if config.low_freq_count > w {
        return Err(Error::Config("low-frequency count exceeds width".into()));
    }
    let dft = Dft2::new(h, w);
    let spectra: Vec<KSpace<T>> = images
        .iter()
        .map(|im| dft.forward(im))
        .collect::<Result<_>>()?;
    let mut model = Dealiaser::untrained(w, config)?;
    let mut adam = AdamState::new(&model.net, config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let d = config.pool;
    let scale = T::of(2.0) / T::of_usize(config.batch_size * h * w);

    for _ in 0..config.steps {
        let mut inputs = Array2::zeros((config.batch_size, d * d + w));
        let mut samples = Vec::with_capacity(config.batch_size);
        for b in 0..config.batch_size {
            let idx = rng.random_range(0..images.len());
            let mask = random_training_mask(w, config.low_freq_count, &mut rng);
            let zf = dft.zero_filled(&spectra[idx], &mask)?;
            let feats = model.features(zf.magnitude(), &mask);
            inputs.row_mut(b).assign(&ndarray::ArrayView1::from(&feats));
            samples.push((idx, zf));
        }
        let residuals = model.net.forward_batch(&inputs)?;
        let mut out_grads = Array2::zeros(residuals.dim());
        for (b, (idx, zf)) in samples.iter().enumerate() {
            let res = residuals.row(b);
            let truth = images[*idx].pixels();
            for ((i, j), &m) in zf.magnitude().indexed_iter() {
                let block = (i * d / h) * d + j * d / w;
                let err = m + res[block] - truth[[i, j]];
                out_grads[[b, block]] = out_grads[[b, block]] + scale * err;
            }
        }
        let grads = model.net.backward_batch(&inputs, &out_grads)?;
        adam_step(&mut model.net, &grads, &mut adam)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mse;

    fn blobs(n: usize, seed: u64) -> Vec<Image<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (cx, cy) = (rng.random_range(5.0..11.0), rng.random_range(5.0..11.0));
                let r = rng.random_range(2.0..5.0);
                Image::from_fn(16, 16, |(i, j)| {
                    let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
                    if d2 < r * r {
                        0.8
                    } else {
                        0.1
                    }
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn untrained_matches_zero_fill() {
        let img = &blobs(1, 1)[0];
        let model = Dealiaser::<f64>::untrained(16, &DealiaserConfig::default()).unwrap();
        let mask = Mask::low_frequency(16, 4).unwrap();
        let zf =
            crate::transforms::zero_filled_recon(&crate::transforms::dft2_centered(img), &mask)
                .unwrap();
        let out = model.reconstruct(zf.clone(), &mask);
        assert_eq!(out.magnitude(), zf.magnitude());
        assert_eq!(model.reconstruct(zf.clone(), &mask), out);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train_dealiaser::<f64>(&[], &DealiaserConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn training_beats_zero_fill_on_validation() {
        let train = blobs(40, 2);
        let val = blobs(20, 3);
        let cfg = DealiaserConfig {
            pool: 4,
            hidden: vec![32],
            steps: 400,
            batch_size: 8,
            low_freq_count: 2,
            ..Default::default()
        };
        let model = train_dealiaser(&train, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut ours, mut zero) = (0.0, 0.0);
        for img in &val {
            let mask = random_training_mask(16, 2, &mut rng);
            let zf =
                crate::transforms::zero_filled_recon(&crate::transforms::dft2_centered(img), &mask)
                    .unwrap();
            zero += mse(zf.magnitude(), img).unwrap();
            ours += mse(model.reconstruct(zf, &mask).magnitude(), img).unwrap();
        }
        assert!(ours <= zero, "{ours} > {zero}");
        let again = train_dealiaser(&train, &cfg).unwrap();
        assert_eq!(again.network(), model.network());
    }
}
