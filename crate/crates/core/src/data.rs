//! Synthetic phantoms, image files, and dataset manifests.
//!
//! Image files use the KIMG layout: the magic `KIMG`, then little-endian
//! `u32` version (1), height and width, then `f32` pixels in row-major order.
//! Pixel values produced here are always representable in `f32`, so writing
//! and reading back is exact.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transforms::Image;

pub const KIMG_MAGIC: &[u8; 4] = b"KIMG";
pub const KIMG_VERSION: u32 = 1;
pub const KIMG_HEADER_LEN: usize = 16;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    /// Side of the square image.
    pub size: usize,
    /// Inclusive range for the number of ellipses, the body included.
    pub ellipse_count: (usize, usize),
    /// Inclusive range of ellipse intensity magnitudes.
    pub intensity: (f64, f64),
    /// Probability that an inner ellipse subtracts instead of adds.
    pub negative_fraction: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 64,
            ellipse_count: (4, 9),
            intensity: (0.2, 0.6),
            negative_fraction: 0.3,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ellipse_count;
        if self.size < 16 || !self.size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "phantom size {} must be even and at least 16",
                self.size
            )));
        }
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!(
                "ellipse count range ({lo}, {hi}) must satisfy 1 <= min <= max"
            )));
        }
        let (a, b) = self.intensity;
        if !(a > 0.0 && a <= b && b <= 1.0) {
            return Err(Error::Config(format!(
                "intensity range ({a}, {b}) must satisfy 0 < min <= max <= 1"
            )));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return Err(Error::Config(format!(
                "negative fraction {} outside [0, 1]",
                self.negative_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn random(rng: &mut impl Rng, center: f64, axes: (f64, f64), value: f64) -> Self {
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        Self {
            cx: rng.random_range(-center..=center),
            cy: rng.random_range(-center..=center),
            a: rng.random_range(axes.0..=axes.1),
            b: rng.random_range(axes.0..=axes.1),
            cos: theta.cos(),
            sin: theta.sin(),
            value,
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Round through `f32` so the value survives a KIMG round trip.
fn storable(v: f64) -> f64 {
    v as f32 as f64
}

/// Ellipse phantom: a large body ellipse near the center plus smaller inner
/// ellipses that brighten or darken it, clipped to `[0, 1]`.
pub fn generate_phantom<T: Scalar>(config: &PhantomConfig, rng: &mut impl Rng) -> Result<Image<T>> {
    config.validate()?;
    let n = config.size;
    let (ilo, ihi) = config.intensity;
    loop {
        let count = rng.random_range(config.ellipse_count.0..=config.ellipse_count.1);
        let mut ellipses = Vec::with_capacity(count);
        let body = rng.random_range(ilo..=ihi);
        ellipses.push(Ellipse::random(rng, 0.1, (0.6, 0.9), body));
        for _ in 1..count {
            let mut value = rng.random_range(ilo..=ihi);
            if rng.random::<f64>() < config.negative_fraction {
                value = -value;
            }
            ellipses.push(Ellipse::random(rng, 0.5, (0.05, 0.35), value));
        }
        let coord = |k: usize| (k as f64 + 0.5) / n as f64 * 2.0 - 1.0;
        let pixels: Vec<f64> = (0..n * n)
            .map(|k| {
                let (x, y) = (coord(k % n), coord(k / n));
                let v: f64 = ellipses
                    .iter()
                    .filter(|e| e.contains(x, y))
                    .map(|e| e.value)
                    .sum();
                storable(v.clamp(0.0, 1.0))
            })
            .collect();
        if pixels.iter().any(|&p| p > 0.0) {
            return Image::from_vec(n, n, pixels.into_iter().map(T::of).collect());
        }
    }
}

/// Mixes in a pattern whose spectrum outside the DC column lives only in
/// `column` and its Hermitian mirror:
/// `(1 - s) x + s g(r) (1 + cos(2 pi (column - W/2) c / W)) / 2`,
/// with `g` a raised-sine profile across rows.
pub fn plant_column<T: Scalar>(image: &Image<T>, column: usize, strength: f64) -> Result<Image<T>> {
    let (h, w) = (image.height(), image.width());
    if column >= w {
        return Err(Error::Index {
            index: column,
            len: w,
        });
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Config(format!(
            "plant strength {strength} outside [0, 1]"
        )));
    }
    let freq = column as f64 - (w / 2) as f64;
    Image::from_fn(h, w, |(r, c)| {
        let g = (std::f64::consts::PI * (r as f64 + 0.5) / h as f64)
            .sin()
            .powi(2);
        let wave = (1.0 + (2.0 * std::f64::consts::PI * freq * c as f64 / w as f64).cos()) / 2.0;
        let x = image.pixels()[[r, c]].as_f64();
        T::of(storable(
            ((1.0 - strength) * x + strength * g * wave).clamp(0.0, 1.0),
        ))
    })
}

pub fn encode_image<T: Scalar>(image: &Image<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(KIMG_HEADER_LEN + 4 * image.height() * image.width());
    out.extend_from_slice(KIMG_MAGIC);
    for v in [KIMG_VERSION, image.height() as u32, image.width() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &p in image.pixels() {
        out.extend_from_slice(&(p.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_image<T: Scalar>(bytes: &[u8]) -> Result<Image<T>> {
    let format = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    let word = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| format(bytes.len(), "truncated header".into()))
    };
    match bytes.get(..4) {
        Some(m) if m == KIMG_MAGIC => {}
        Some(_) => return Err(format(0, "bad magic, expected KIMG".into())),
        None => return Err(format(bytes.len(), "truncated header".into())),
    }
    let version = word(4)?;
    if version != KIMG_VERSION {
        return Err(format(4, format!("unsupported version {version}")));
    }
    let (h, w) = (word(8)? as usize, word(12)? as usize);
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(KIMG_HEADER_LEN))
        .ok_or_else(|| format(8, format!("dimensions {h}x{w} overflow")))?;
    if bytes.len() < expected {
        return Err(format(
            bytes.len(),
            format!("truncated payload, expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(format(expected, "trailing bytes after payload".into()));
    }
    let mut pixels = Vec::with_capacity(h * w);
    for (k, chunk) in bytes[KIMG_HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(format(
                KIMG_HEADER_LEN + 4 * k,
                format!("non-finite pixel {v}"),
            ));
        }
        pixels.push(T::of(v as f64));
    }
    Image::from_vec(h, w, pixels).map_err(|e| format(8, e.to_string()))
}

pub fn write_image<T: Scalar>(path: &Path, image: &Image<T>) -> Result<()> {
    fs::write(path, encode_image(image)).map_err(|e| Error::io(path, e))
}

pub fn read_image<T: Scalar>(path: &Path) -> Result<Image<T>> {
    decode_image(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a PNG as grayscale with intensities scaled to `[0, 1]`.
pub fn read_png<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other}", path.display())),
    })?;
    let gray = img.to_luma32f();
    let (w, h) = gray.dimensions();
    let pixels = gray
        .into_raw()
        .into_iter()
        .map(|v| T::of(v.clamp(0.0, 1.0) as f64))
        .collect();
    Image::from_vec(h as usize, w as usize, pixels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

/// Train, validation and test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(0.0..=1.0).contains(f))
            || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions {all:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

/// Shuffles `ids` with `seed`, gives `floor(n * f)` ids to validation and
/// test, and the remainder to training. Output follows input order.
pub fn make_splits(
    ids: &[String],
    fractions: SplitFractions,
    seed: u64,
) -> Result<Vec<(String, Split)>> {
    fractions.validate()?;
    let mut seen = HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::Config(format!("duplicate image id {dup:?}")));
    }
    let n = ids.len();
    let count = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let (n_val, n_test) = (count(fractions.val), count(fractions.test));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_val {
            splits[i] = Split::Val;
        } else if rank < n_val + n_test {
            splits[i] = Split::Test;
        }
    }
    Ok(ids.iter().cloned().zip(splits).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub split: Split,
}

/// A validated manifest with every image loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
    images: Vec<Image<f64>>,
}

impl Dataset {
    pub fn from_parts(
        root: PathBuf,
        entries: Vec<ManifestEntry>,
        images: Vec<Image<f64>>,
    ) -> Result<Self> {
        if entries.len() != images.len() {
            return Err(Error::shape(entries.len(), images.len()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.id.as_str())) {
            return Err(Error::Config(format!("duplicate image id {:?}", dup.id)));
        }
        if let Some(first) = images.first() {
            let dims = (first.height(), first.width());
            if let Some((e, _)) = entries
                .iter()
                .zip(&images)
                .find(|(_, im)| (im.height(), im.width()) != dims)
            {
                return Err(Error::InvalidInput(format!(
                    "image {:?} differs in size from {}x{}",
                    e.id, dims.0, dims.1
                )));
            }
        }
        Ok(Self {
            root,
            entries,
            images,
        })
    }

    /// Reads `manifest.json` (or the given file) and every image it lists.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", manifest.display())))?;
        let images = entries
            .iter()
            .map(|e| {
                let p = root.join(&e.path);
                match p.extension().and_then(|x| x.to_str()) {
                    Some("png") => read_png(&p),
                    _ => read_image(&p),
                }
            })
            .collect::<Result<_>>()?;
        Self::from_parts(root, entries, images)
    }

    /// Writes every image as KIMG under `dir/images/` plus the manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let images_dir = dir.join("images");
        fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
        for (e, im) in self.entries.iter().zip(&self.images) {
            write_image(&dir.join(&e.path), im)?;
        }
        let manifest = dir.join(MANIFEST_FILE);
        let file = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self.entries)
            .map_err(|e| Error::io(&manifest, e.into()))?;
        w.write_all(b"\n")
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&manifest, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn images(&self) -> &[Image<f64>] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Image size shared by every entry.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(|im| (im.height(), im.width()))
    }

    /// `(id, image)` pairs of one split, in manifest order.
    pub fn split(&self, split: Split) -> Vec<(&str, &Image<f64>)> {
        self.entries
            .iter()
            .zip(&self.images)
            .filter(|(e, _)| e.split == split)
            .map(|(e, im)| (e.id.as_str(), im))
            .collect()
    }
}

/// Phantom dataset with ids `phantom-00000`, ... and random splits.
pub fn generate_dataset(
    count: usize,
    config: &PhantomConfig,
    fractions: SplitFractions,
    seed: u64,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = count.to_string().len().max(5);
    let ids: Vec<String> = (0..count).map(|i| format!("phantom-{i:0width$}")).collect();
    let images = (0..count)
        .map(|_| generate_phantom(config, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let entries = make_splits(&ids, fractions, seed)?
        .into_iter()
        .map(|(id, split)| ManifestEntry {
            path: PathBuf::from("images").join(format!("{id}.kimg")),
            id,
            split,
        })
        .collect();
    Dataset::from_parts(PathBuf::new(), entries, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{center_columns, dft2_centered};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}")).collect()
    }

    #[test]
    fn phantom_determinism_and_range() {
        let cfg = PhantomConfig::default();
        let a: Image<f64> = generate_phantom(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b: Image<f64> = generate_phantom(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(a.max() > 0.0);
    }

    #[test]
    fn degenerate_intensity_gives_binary_image() {
        let cfg = PhantomConfig {
            ellipse_count: (1, 1),
            intensity: (0.5, 0.5),
            ..Default::default()
        };
        let img: Image<f64> = generate_phantom(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0.0 || p == 0.5));
        assert!(img.pixels().iter().any(|&p| p == 0.0));
        assert!(img.pixels().iter().any(|&p| p == 0.5));
    }

    #[test]
    fn phantom_spectra_are_low_frequency_dominated() {
        let cfg = PhantomConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let quarter = center_columns(64, 16);
        let mean_fraction = (0..100)
            .map(|_| {
                let k = dft2_centered(&generate_phantom::<f64>(&cfg, &mut rng).unwrap());
                let cols = k.column_energies();
                cols[quarter.clone()].iter().sum::<f64>() / cols.iter().sum::<f64>()
            })
            .sum::<f64>()
            / 100.0;
        assert!(mean_fraction >= 0.6, "{mean_fraction}");
    }

    #[test]
    fn config_validation() {
        for bad in [
            PhantomConfig {
                size: 15,
                ..Default::default()
            },
            PhantomConfig {
                size: 8,
                ..Default::default()
            },
            PhantomConfig {
                ellipse_count: (0, 3),
                ..Default::default()
            },
            PhantomConfig {
                ellipse_count: (4, 3),
                ..Default::default()
            },
            PhantomConfig {
                intensity: (0.0, 0.5),
                ..Default::default()
            },
            PhantomConfig {
                negative_fraction: 1.5,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn planted_column_energy_is_confined() {
        let base = Image::<f64>::constant(16, 16, 0.0).unwrap();
        let planted = plant_column(&base, 0, 1.0).unwrap();
        let energies = dft2_centered(&planted).column_energies();
        let total: f64 = energies.iter().sum();
        for (j, e) in energies.iter().enumerate() {
            if j != 0 && j != 8 {
                assert!(*e < 1e-12 * total, "column {j} has energy {e}");
            }
        }
        assert!(energies[0] > 0.1);
        let planted = plant_column(&base, 5, 1.0).unwrap();
        let energies = dft2_centered(&planted).column_energies();
        let total: f64 = energies.iter().sum();
        let mirror = crate::transforms::mirror_index(5, 16);
        for (j, e) in energies.iter().enumerate() {
            if ![5, mirror, 8].contains(&j) {
                assert!(*e < 1e-12 * total, "column {j} has energy {e}");
            }
        }
        assert!(plant_column(&base, 16, 0.5).is_err());
        assert!(plant_column(&base, 1, 1.5).is_err());
    }

    #[test]
    fn kimg_round_trip_and_size() {
        let img: Image<f64> =
            generate_phantom(&PhantomConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let bytes = encode_image(&img);
        assert_eq!(bytes.len(), 16 + 64 * 64 * 4);
        let back: Image<f64> = decode_image(&bytes).unwrap();
        assert_eq!(
            back.pixels()
                .iter()
                .map(|p| p.to_bits())
                .collect::<Vec<_>>(),
            img.pixels().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn kimg_format_errors_carry_offsets() {
        let img = Image::<f64>::constant(8, 8, 0.25).unwrap();
        let bytes = encode_image(&img);
        let offset = |b: &[u8]| match decode_image::<f64>(b) {
            Err(Error::Format { offset, .. }) => offset,
            other => panic!("expected format error, got {other:?}"),
        };
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(offset(&bad), 0);
        assert_eq!(offset(&bytes[..10]), 10);
        assert_eq!(offset(&bytes[..bytes.len() - 3]), (bytes.len() - 3) as u64);
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(offset(&bad), 4);
        let mut bad = bytes.clone();
        bad.push(0);
        assert_eq!(offset(&bad), bytes.len() as u64);
        let mut bad = bytes.clone();
        bad[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset(&bad), 20);
        assert_eq!(offset(&[]), 0);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = make_splits(&ids(100), SplitFractions::default(), 3).unwrap();
        let count = |k| s.iter().filter(|(_, x)| *x == k).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (80, 10, 10)
        );
        assert_eq!(
            s,
            make_splits(&ids(100), SplitFractions::default(), 3).unwrap()
        );
        assert_ne!(
            s,
            make_splits(&ids(100), SplitFractions::default(), 4).unwrap()
        );
        let all_train = make_splits(
            &ids(7),
            SplitFractions {
                train: 1.0,
                val: 0.0,
                test: 0.0,
            },
            0,
        )
        .unwrap();
        assert!(all_train.iter().all(|(_, k)| *k == Split::Train));
        let odd = make_splits(
            &ids(7),
            SplitFractions {
                train: 0.5,
                val: 0.25,
                test: 0.25,
            },
            0,
        )
        .unwrap();
        assert_eq!(odd.iter().filter(|(_, k)| *k == Split::Train).count(), 5);
    }

    #[test]
    fn split_errors() {
        let bad = SplitFractions {
            train: 0.5,
            val: 0.1,
            test: 0.1,
        };
        assert!(matches!(
            make_splits(&ids(4), bad, 0),
            Err(Error::Config(_))
        ));
        let neg = SplitFractions {
            train: 1.2,
            val: -0.2,
            test: 0.0,
        };
        assert!(matches!(
            make_splits(&ids(4), neg, 0),
            Err(Error::Config(_))
        ));
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(matches!(
            make_splits(&dup, SplitFractions::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dataset_save_load_round_trip() {
        let cfg = PhantomConfig {
            size: 16,
            ..Default::default()
        };
        let ds = generate_dataset(10, &cfg, SplitFractions::default(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.entries(), ds.entries());
        assert_eq!(back.images(), ds.images());
        assert_eq!(back.split(Split::Train).len(), 8);
        assert_eq!(back.dims(), Some((16, 16)));
        assert!(matches!(
            generate_dataset(0, &cfg, SplitFractions::default(), 5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dataset_load_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![ManifestEntry {
            id: "x".into(),
            path: "missing.kimg".into(),
            split: Split::Test,
        }];
        fs::write(
            dir.path().join(MANIFEST_FILE),
            serde_json::to_string(&entries).unwrap(),
        )
        .unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::Io { .. })));
        assert!(matches!(
            Dataset::load(&dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn png_ingestion_scales_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let buf =
            image::GrayImage::from_fn(8, 8, |x, _| image::Luma([if x < 4 { 0 } else { 255 }]));
        buf.save(&path).unwrap();
        let img: Image<f64> = read_png(&path).unwrap();
        assert_eq!(img.pixels()[[0, 0]], 0.0);
        assert_eq!(img.pixels()[[0, 7]], 1.0);
    }
}
