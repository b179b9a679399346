//! Reconstruction quality metrics, curve areas and the paired statistics used
//! to compare acquisition policies.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transforms::Image;

/// SSIM window side.
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// PSNR reported when the error is below `R^2 * 1e-10`.
pub const PSNR_CAP_DB: f64 = 100.0;

/// A reported image-quality metric in its conventional orientation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mse,
    Nmse,
    Psnr,
    Ssim,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mse, Metric::Nmse, Metric::Psnr, Metric::Ssim];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Nmse => "nmse",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Psnr | Metric::Ssim)
    }

    /// Evaluates the metric on a magnitude reconstruction. PSNR and SSIM use
    /// `max(truth)` as the data range.
    pub fn evaluate<T: Scalar>(self, recon: &Array2<T>, truth: &Image<T>) -> Result<T> {
        match self {
            Metric::Mse => mse(recon, truth),
            Metric::Nmse => nmse(recon, truth),
            Metric::Psnr => psnr(recon, truth, data_range(truth)?),
            Metric::Ssim => ssim(recon, truth, data_range(truth)?),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lower-is-better cost `C` driving rewards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMetric {
    Mse,
    Nmse,
    NegPsnr,
    NegSsim,
}

impl CostMetric {
    pub fn metric(self) -> Metric {
        match self {
            CostMetric::Mse => Metric::Mse,
            CostMetric::Nmse => Metric::Nmse,
            CostMetric::NegPsnr => Metric::Psnr,
            CostMetric::NegSsim => Metric::Ssim,
        }
    }

    /// Converts a value of the underlying metric to this cost.
    pub fn from_metric_value<T: Scalar>(self, value: T) -> T {
        if self.metric().higher_is_better() {
            -value
        } else {
            value
        }
    }

    pub fn evaluate<T: Scalar>(self, recon: &Array2<T>, truth: &Image<T>) -> Result<T> {
        Ok(self.from_metric_value(self.metric().evaluate(recon, truth)?))
    }

    pub fn name(self) -> &'static str {
        match self {
            CostMetric::Mse => "mse",
            CostMetric::Nmse => "nmse",
            CostMetric::NegPsnr => "neg-psnr",
            CostMetric::NegSsim => "neg-ssim",
        }
    }
}

impl FromStr for CostMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(CostMetric::Mse),
            "nmse" => Ok(CostMetric::Nmse),
            "neg-psnr" | "psnr" => Ok(CostMetric::NegPsnr),
            "neg-ssim" | "ssim" => Ok(CostMetric::NegSsim),
            other => Err(Error::Config(format!("unknown cost metric {other:?}"))),
        }
    }
}

impl fmt::Display for CostMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Metric values over acquisition steps `t = 0..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricCurve<T> {
    pub metric: Metric,
    pub values: Vec<T>,
}

impl<T: Scalar> MetricCurve<T> {
    pub fn new(metric: Metric, values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite {metric} value in curve"
            )));
        }
        Ok(Self { metric, values })
    }

    pub fn auc(&self) -> Result<T> {
        auc(&self.values)
    }
}

fn check_shapes<T: Scalar>(recon: &Array2<T>, truth: &Image<T>) -> Result<()> {
    if recon.dim() != truth.pixels().dim() {
        return Err(Error::shape(
            format!("{:?}", truth.pixels().dim()),
            format!("{:?}", recon.dim()),
        ));
    }
    Ok(())
}

fn squared_error<T: Scalar>(recon: &Array2<T>, truth: &Image<T>) -> T {
    recon
        .iter()
        .zip(truth.pixels())
        .map(|(&a, &b)| (a - b) * (a - b))
        .fold(T::zero(), |acc, v| acc + v)
}

/// Default data range for PSNR and SSIM: the maximum of the ground truth.
pub fn data_range<T: Scalar>(truth: &Image<T>) -> Result<T> {
    let r = truth.max();
    if r > T::zero() {
        Ok(r)
    } else {
        Err(Error::Degenerate(
            "ground truth has no positive intensity".into(),
        ))
    }
}

pub fn mse<T: Scalar>(recon: &Array2<T>, truth: &Image<T>) -> Result<T> {
    check_shapes(recon, truth)?;
    Ok(squared_error(recon, truth) / T::of_usize(recon.len()))
}

/// `||recon - truth||^2 / ||truth||^2`.
pub fn nmse<T: Scalar>(recon: &Array2<T>, truth: &Image<T>) -> Result<T> {
    check_shapes(recon, truth)?;
    let norm = truth.pixels().iter().fold(T::zero(), |a, &v| a + v * v);
    if norm == T::zero() {
        return Err(Error::Degenerate(
            "NMSE against an all-zero ground truth".into(),
        ));
    }
    Ok(squared_error(recon, truth) / norm)
}

pub fn psnr<T: Scalar>(recon: &Array2<T>, truth: &Image<T>, data_range: T) -> Result<T> {
    if !(data_range > T::zero()) {
        return Err(Error::InvalidInput(format!(
            "data range {data_range} must be positive"
        )));
    }
    let err = mse(recon, truth)?;
    Ok(psnr_from_mse(err, data_range))
}

/// `10 log10(R^2 / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse<T: Scalar>(mse: T, data_range: T) -> T {
    let r2 = data_range * data_range;
    if mse < r2 * T::of(1e-10) {
        return T::of(PSNR_CAP_DB);
    }
    T::of(10.0) * (r2 / mse).log10()
}

/// Mean SSIM over every valid `7 x 7` window (no padding), uniform weights,
/// sample covariances.
pub fn ssim<T: Scalar>(recon: &Array2<T>, truth: &Image<T>, data_range: T) -> Result<T> {
    check_shapes(recon, truth)?;
    let (h, w) = recon.dim();
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(Error::Degenerate(format!(
            "{h}x{w} image is smaller than the {k}x{k} SSIM window"
        )));
    }
    if !(data_range > T::zero()) {
        return Err(Error::InvalidInput(format!(
            "data range {data_range} must be positive"
        )));
    }
    let x = recon;
    let y = truth.pixels();
    let sx = SummedArea::new(h, w, |i, j| x[[i, j]]);
    let sy = SummedArea::new(h, w, |i, j| y[[i, j]]);
    let sxx = SummedArea::new(h, w, |i, j| x[[i, j]] * x[[i, j]]);
    let syy = SummedArea::new(h, w, |i, j| y[[i, j]] * y[[i, j]]);
    let sxy = SummedArea::new(h, w, |i, j| x[[i, j]] * y[[i, j]]);

    let n = T::of_usize(k * k);
    let cov_norm = n / (n - T::one());
    let c1 = (T::of(SSIM_K1) * data_range).powi(2);
    let c2 = (T::of(SSIM_K2) * data_range).powi(2);
    let two = T::of(2.0);

    let mut total = T::zero();
    let (nh, nw) = (h - k + 1, w - k + 1);
    for i in 0..nh {
        for j in 0..nw {
            let mx = sx.window(i, j, k) / n;
            let my = sy.window(i, j, k) / n;
            let vx = cov_norm * (sxx.window(i, j, k) / n - mx * mx);
            let vy = cov_norm * (syy.window(i, j, k) / n - my * my);
            let vxy = cov_norm * (sxy.window(i, j, k) / n - mx * my);
            total = total
                + ((two * mx * my + c1) * (two * vxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / T::of_usize(nh * nw))
}

/// Inclusive prefix sums with a zero border.
struct SummedArea<T> {
    w: usize,
    table: Vec<T>,
}

impl<T: Scalar> SummedArea<T> {
    fn new(h: usize, w: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let stride = w + 1;
        let mut table = vec![T::zero(); (h + 1) * stride];
        for i in 0..h {
            let mut row = T::zero();
            for j in 0..w {
                row = row + f(i, j);
                table[(i + 1) * stride + j + 1] = table[i * stride + j + 1] + row;
            }
        }
        Self { w, table }
    }

    fn window(&self, i: usize, j: usize, k: usize) -> T {
        let s = self.w + 1;
        let t = &self.table;
        t[(i + k) * s + j + k] - t[i * s + j + k] - t[(i + k) * s + j] + t[i * s + j]
    }
}

/// Trapezoidal area over unit-spaced steps.
pub fn auc<T: Scalar>(values: &[T]) -> Result<T> {
    if values.len() < 2 {
        return Err(Error::Degenerate(format!(
            "curve of length {} has no area",
            values.len()
        )));
    }
    let half = T::of(0.5);
    Ok(values
        .windows(2)
        .map(|p| (p[0] + p[1]) * half)
        .fold(T::zero(), |a, b| a + b))
}

/// Outcome of a paired t-test on `a - b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TTest<T> {
    Statistic {
        t: T,
        dof: usize,
    },
    /// All differences are identical, so the statistic is undefined.
    ZeroVariance {
        dof: usize,
    },
}

impl<T: Scalar> TTest<T> {
    pub fn t(&self) -> Option<T> {
        match *self {
            TTest::Statistic { t, .. } => Some(t),
            TTest::ZeroVariance { .. } => None,
        }
    }

    pub fn dof(&self) -> usize {
        match *self {
            TTest::Statistic { dof, .. } | TTest::ZeroVariance { dof } => dof,
        }
    }
}

fn mean_and_sd<T: Scalar>(values: &[T]) -> (T, T) {
    let n = T::of_usize(values.len());
    let mean = values.iter().fold(T::zero(), |a, &b| a + b) / n;
    let ss = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .fold(T::zero(), |a, b| a + b);
    (mean, (ss / (n - T::one())).sqrt())
}

/// Paired t-test over images: `t = mean(d) / (sd(d) / sqrt(n))`, `d = a - b`.
pub fn paired_t_test<T: Scalar>(a: &[T], b: &[T]) -> Result<TTest<T>> {
    if a.len() != b.len() {
        return Err(Error::shape(
            format!("{} paired values", a.len()),
            format!("{} values", b.len()),
        ));
    }
    if a.len() < 2 {
        return Err(Error::Degenerate(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let d: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let dof = d.len() - 1;
    if d.iter().all(|&v| v == d[0]) {
        return Ok(TTest::ZeroVariance { dof });
    }
    let (mean, sd) = mean_and_sd(&d);
    let se = sd / T::of_usize(d.len()).sqrt();
    Ok(TTest::Statistic { t: mean / se, dof })
}

/// Mean and 95% half-width under the normal approximation, `1.96 sd / sqrt(n)`.
pub fn mean_ci95<T: Scalar>(values: &[T]) -> Result<(T, T)> {
    if values.len() < 2 {
        return Err(Error::Degenerate(format!(
            "confidence interval needs at least two values, got {}",
            values.len()
        )));
    }
    let (mean, sd) = mean_and_sd(values);
    Ok((mean, T::of(1.96) * sd / T::of_usize(values.len()).sqrt()))
}
