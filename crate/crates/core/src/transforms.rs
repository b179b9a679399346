//! Unitary centered 2D DFT, Cartesian column masks and zero-filled
//! reconstruction.
//!
//! All spectra use the DC-centered layout: the zero frequency sits at row
//! `H / 2` and column `W / 2`. Both transform directions are scaled by
//! `1 / sqrt(H * W)`, so Parseval holds without extra factors: the squared
//! error of a zero-filled reconstruction equals the energy of the unobserved
//! columns.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use ndarray::Array2;
pub use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MIN_SIDE: usize = 8;

/// Real-valued ground-truth picture, `H x W`, row-major.
#[derive(Clone, PartialEq)]
pub struct Image<T> {
    pixels: Array2<T>,
}

impl<T: Scalar> Image<T> {
    /// Wraps a pixel matrix after checking size and finiteness.
    pub fn new(pixels: Array2<T>) -> Result<Self> {
        let (h, w) = pixels.dim();
        check_dims(h, w)?;
        if let Some(pos) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite pixel at ({}, {})",
                pos / w,
                pos % w
            )));
        }
        Ok(Self {
            pixels: pixels.as_standard_layout().into_owned(),
        })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        let pixels = Array2::from_shape_vec((height, width), data)
            .map_err(|e| Error::shape(height * width, e))?;
        Self::new(pixels)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl FnMut((usize, usize)) -> T,
    ) -> Result<Self> {
        Self::new(Array2::from_shape_fn((height, width), f))
    }

    pub fn constant(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value))
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn pixels(&self) -> &Array2<T> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<T> {
        self.pixels
    }

    pub fn max(&self) -> T {
        self.pixels
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| a.max(b))
    }

    /// Frobenius norm.
    pub fn norm(&self) -> T {
        self.pixels
            .iter()
            .map(|&v| v * v)
            .fold(T::zero(), |a, b| a + b)
            .sqrt()
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            pixels: self.pixels.mapv(|v| U::of(v.as_f64())),
        }
    }
}

impl<T: Scalar> fmt::Debug for Image<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("height", &self.height())
            .field("width", &self.width())
            .finish_non_exhaustive()
    }
}

fn check_dims(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::InvalidInput(format!(
            "image is {h}x{w}; both sides must be at least {MIN_SIDE}"
        )));
    }
    if !w.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("width {w} must be even")));
    }
    Ok(())
}

/// Complex k-space matrix in the DC-centered layout.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpace<T> {
    data: Array2<Complex<T>>,
}

impl<T: Scalar> KSpace<T> {
    pub fn new(data: Array2<Complex<T>>) -> Result<Self> {
        let (h, w) = data.dim();
        check_dims(h, w)?;
        if data.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::InvalidInput("non-finite k-space entry".into()));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<Complex<T>> {
        &self.data
    }

    /// Position of the zero frequency, `(H / 2, W / 2)`.
    pub fn dc_index(&self) -> (usize, usize) {
        (self.height() / 2, self.width() / 2)
    }

    /// Squared Frobenius norm, `sum |y|^2`.
    pub fn energy(&self) -> T {
        self.data
            .iter()
            .map(|c| c.norm_sqr())
            .fold(T::zero(), |a, b| a + b)
    }

    /// Energy of every column, in column order.
    pub fn column_energies(&self) -> Vec<T> {
        self.data
            .columns()
            .into_iter()
            .map(|col| {
                col.iter()
                    .map(|c| c.norm_sqr())
                    .fold(T::zero(), |a, b| a + b)
            })
            .collect()
    }

    /// The conjugate-mirrored spectrum `conj(y[-u, -v])` in centered indexing.
    /// Equal to `self` (up to rounding) when the spectrum comes from a real
    /// image.
    pub fn conjugate_mirror(&self) -> Self {
        let (h, w) = self.data.dim();
        let data = Array2::from_shape_fn((h, w), |(u, v)| {
            self.data[[mirror_index(u, h), mirror_index(v, w)]].conj()
        });
        Self { data }
    }
}

/// Index of the frequency `-k` for centered index `k` along an axis of length `n`.
pub fn mirror_index(k: usize, n: usize) -> usize {
    let s = n / 2;
    (2 * s + n - k) % n
}

/// Binary selection of observed k-space columns.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    columns: Vec<bool>,
    low_freq_count: usize,
}

impl Mask {
    pub fn empty(width: usize) -> Self {
        Self {
            columns: vec![false; width],
            low_freq_count: 0,
        }
    }

    pub fn full(width: usize) -> Self {
        Self {
            columns: vec![true; width],
            low_freq_count: 0,
        }
    }

    /// Mask observing exactly the `low_freq_count` centermost columns.
    pub fn low_frequency(width: usize, low_freq_count: usize) -> Result<Self> {
        if low_freq_count > width {
            return Err(Error::Config(format!(
                "{low_freq_count} low-frequency columns do not fit in width {width}"
            )));
        }
        let mut columns = vec![false; width];
        for j in center_columns(width, low_freq_count) {
            columns[j] = true;
        }
        Ok(Self {
            columns,
            low_freq_count,
        })
    }

    /// Builds a mask from explicit flags; `low_freq_count` records how many
    /// of them were fixed at initialization.
    pub fn from_columns(columns: Vec<bool>, low_freq_count: usize) -> Result<Self> {
        let observed = columns.iter().filter(|&&c| c).count();
        if observed < low_freq_count {
            return Err(Error::InvalidInput(format!(
                "mask observes {observed} columns, fewer than its {low_freq_count} fixed ones"
            )));
        }
        Ok(Self {
            columns,
            low_freq_count,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn low_freq_count(&self) -> usize {
        self.low_freq_count
    }

    pub fn columns(&self) -> &[bool] {
        &self.columns
    }

    pub fn is_observed(&self, column: usize) -> bool {
        self.columns.get(column).copied().unwrap_or(false)
    }

    pub fn observed_count(&self) -> usize {
        self.columns.iter().filter(|&&c| c).count()
    }

    pub fn unobserved(&self) -> impl Iterator<Item = usize> + '_ {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, &c)| !c)
            .map(|(j, _)| j)
    }

    /// Marks `column` as observed. Observing an observed column is an error.
    pub fn observe(&mut self, column: usize) -> Result<()> {
        let w = self.width();
        match self.columns.get_mut(column) {
            None => Err(Error::Index {
                index: column,
                len: w,
            }),
            Some(true) => Err(Error::InvalidAction(column)),
            Some(c) => {
                *c = true;
                Ok(())
            }
        }
    }

    /// Copy of this mask with one more column observed.
    pub fn with(&self, column: usize) -> Result<Self> {
        let mut m = self.clone();
        m.observe(column)?;
        Ok(m)
    }

    /// Mask as a 0/1 vector.
    pub fn to_vec<T: Scalar>(&self) -> Vec<T> {
        self.columns
            .iter()
            .map(|&c| if c { T::one() } else { T::zero() })
            .collect()
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = self
            .columns
            .iter()
            .map(|&c| if c { '1' } else { '0' })
            .collect();
        write!(f, "Mask({bits}, L={})", self.low_freq_count)
    }
}

/// Indices of the `count` centermost columns:
/// `W/2 - ceil(count/2) .. W/2 + floor(count/2)`.
pub fn center_columns(width: usize, count: usize) -> Range<usize> {
    let c = width / 2;
    let lo = c.saturating_sub(count.div_ceil(2));
    lo..(lo + count).min(width)
}

/// Distance of a column from the DC column.
pub fn frequency_distance(column: usize, width: usize) -> usize {
    column.abs_diff(width / 2)
}

/// Image-domain estimate: complex image plus its elementwise modulus.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction<T> {
    complex_image: Array2<Complex<T>>,
    magnitude: Array2<T>,
}

impl<T: Scalar> Reconstruction<T> {
    pub fn from_complex(complex_image: Array2<Complex<T>>) -> Self {
        let magnitude = complex_image.mapv(|c| c.norm());
        Self {
            complex_image,
            magnitude,
        }
    }

    /// A real, non-negative estimate; the complex image carries no phase.
    pub fn from_magnitude(magnitude: Array2<T>) -> Self {
        let magnitude = magnitude.mapv(|v| v.abs());
        let complex_image = magnitude.mapv(|v| Complex::new(v, T::zero()));
        Self {
            complex_image,
            magnitude,
        }
    }

    pub fn complex_image(&self) -> &Array2<Complex<T>> {
        &self.complex_image
    }

    pub fn magnitude(&self) -> &Array2<T> {
        &self.magnitude
    }

    pub fn height(&self) -> usize {
        self.magnitude.nrows()
    }

    pub fn width(&self) -> usize {
        self.magnitude.ncols()
    }
}

/// Reusable FFT plans for one image size.
#[derive(Clone)]
pub struct Dft2<T: Scalar> {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
    scale: T,
}

impl<T: Scalar> fmt::Debug for Dft2<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dft2({}x{})", self.height, self.width)
    }
}

impl<T: Scalar> Dft2<T> {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
            scale: T::one() / T::of_usize(height * width).sqrt(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{h}x{w}"),
            ));
        }
        Ok(())
    }

    /// Unitary, uncentered transform in place.
    fn transform(&self, data: &mut Array2<Complex<T>>, inverse: bool) {
        let (h, w) = (self.height, self.width);
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let buf = data.as_slice_mut().expect("standard layout");
        rows.process(buf);
        let mut t = vec![Complex::new(T::zero(), T::zero()); h * w];
        for i in 0..h {
            for j in 0..w {
                t[j * h + i] = buf[i * w + j];
            }
        }
        cols.process(&mut t);
        for i in 0..h {
            for j in 0..w {
                buf[i * w + j] = t[j * h + i] * self.scale;
            }
        }
    }

    /// Forward transform with the DC term moved to the center.
    pub fn forward(&self, image: &Image<T>) -> Result<KSpace<T>> {
        self.check(image.height(), image.width())?;
        let mut data = image.pixels().mapv(|v| Complex::new(v, T::zero()));
        self.transform(&mut data, false);
        Ok(KSpace {
            data: fftshift(&data),
        })
    }

    pub fn inverse(&self, kspace: &KSpace<T>) -> Result<Reconstruction<T>> {
        self.check(kspace.height(), kspace.width())?;
        Ok(Reconstruction::from_complex(
            self.inverse_raw(kspace.data()),
        ))
    }

    fn inverse_raw(&self, centered: &Array2<Complex<T>>) -> Array2<Complex<T>> {
        let mut data = ifftshift(centered);
        self.transform(&mut data, true);
        data
    }

    /// `F^-1(M . y)`, transforming only the observed columns along the
    /// vertical axis before the row pass.
    pub fn zero_filled(&self, kspace: &KSpace<T>, mask: &Mask) -> Result<Reconstruction<T>> {
        self.check(kspace.height(), kspace.width())?;
        if mask.width() != self.width {
            return Err(Error::shape(
                format!("mask of width {}", self.width),
                format!("mask of width {}", mask.width()),
            ));
        }
        let (h, w) = (self.height, self.width);
        let (sh, sw) = (h / 2, w / 2);
        let zero = Complex::new(T::zero(), T::zero());
        let observed: Vec<usize> = (0..w).filter(|&j| mask.is_observed(j)).collect();
        let mut cols = vec![zero; observed.len() * h];
        let data = kspace.data();
        for (c, &j) in observed.iter().enumerate() {
            for i in 0..h {
                cols[c * h + i] = data[[(i + sh) % h, j]];
            }
        }
        if !cols.is_empty() {
            self.col_inv.process(&mut cols);
        }
        let mut out = vec![zero; h * w];
        for (c, &j) in observed.iter().enumerate() {
            // Centered column j sits at uncentered index j - W/2 (mod W).
            let ju = (j + w - sw) % w;
            for i in 0..h {
                out[i * w + ju] = cols[c * h + i];
            }
        }
        self.row_inv.process(&mut out);
        out.iter_mut().for_each(|v| *v = *v * self.scale);
        let image = Array2::from_shape_vec((h, w), out).expect("h * w elements");
        Ok(Reconstruction::from_complex(image))
    }
}

/// Moves index 0 to `n / 2` along both axes.
fn fftshift<C: Copy>(a: &Array2<C>) -> Array2<C> {
    let (h, w) = a.dim();
    let (sh, sw) = (h / 2, w / 2);
    Array2::from_shape_fn((h, w), |(i, j)| a[[(i + h - sh) % h, (j + w - sw) % w]])
}

/// Inverse of [`fftshift`]; identical to it for even sizes.
fn ifftshift<C: Copy>(a: &Array2<C>) -> Array2<C> {
    let (h, w) = a.dim();
    let (sh, sw) = (h / 2, w / 2);
    Array2::from_shape_fn((h, w), |(i, j)| a[[(i + sh) % h, (j + sw) % w]])
}

fn masked_data<T: Scalar>(kspace: &KSpace<T>, mask: &Mask) -> Result<Array2<Complex<T>>> {
    if mask.width() != kspace.width() {
        return Err(Error::shape(
            format!("mask of width {}", kspace.width()),
            format!("mask of width {}", mask.width()),
        ));
    }
    let zero = Complex::new(T::zero(), T::zero());
    let mut out = kspace.data().clone();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        if !mask.columns()[j] {
            col.fill(zero);
        }
    }
    Ok(out)
}

/// Unitary forward DFT of a real image, DC-centered.
pub fn dft2_centered<T: Scalar>(image: &Image<T>) -> KSpace<T> {
    Dft2::new(image.height(), image.width())
        .forward(image)
        .expect("plan matches image size")
}

/// Unitary inverse of [`dft2_centered`].
pub fn idft2_centered<T: Scalar>(kspace: &KSpace<T>) -> Reconstruction<T> {
    Dft2::new(kspace.height(), kspace.width())
        .inverse(kspace)
        .expect("plan matches k-space size")
}

/// `M . y`: unobserved columns are zeroed.
pub fn apply_mask<T: Scalar>(kspace: &KSpace<T>, mask: &Mask) -> Result<KSpace<T>> {
    Ok(KSpace {
        data: masked_data(kspace, mask)?,
    })
}

/// `F^-1(M . y)`.
pub fn zero_filled_recon<T: Scalar>(kspace: &KSpace<T>, mask: &Mask) -> Result<Reconstruction<T>> {
    Dft2::new(kspace.height(), kspace.width()).zero_filled(kspace, mask)
}

/// Block-average of an `H x W` matrix down to `side x side`, row-major.
/// Pixel `(i, j)` falls in block `(i * side / H, j * side / W)`.
pub fn average_pool<T: Scalar>(a: &Array2<T>, side: usize) -> Vec<T> {
    let (h, w) = a.dim();
    let mut sums = vec![T::zero(); side * side];
    let mut counts = vec![0usize; side * side];
    for ((i, j), &v) in a.indexed_iter() {
        let b = (i * side / h) * side + j * side / w;
        sums[b] = sums[b] + v;
        counts[b] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| {
            if c == 0 {
                T::zero()
            } else {
                s / T::of_usize(c)
            }
        })
        .collect()
}

/// `sum_i |y[i, j]|^2`.
pub fn column_energy<T: Scalar>(kspace: &KSpace<T>, column: usize) -> Result<T> {
    if column >= kspace.width() {
        return Err(Error::Index {
            index: column,
            len: kspace.width(),
        });
    }
    Ok(kspace
        .data()
        .column(column)
        .iter()
        .map(|c| c.norm_sqr())
        .fold(T::zero(), |a, b| a + b))
}
