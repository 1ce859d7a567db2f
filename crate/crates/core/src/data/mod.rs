//! Labeled 28x28 digit images: the synthetic template dataset, MNIST IDX
//! ingestion and the `PSAD` dataset cache.

mod idx;
mod templates;

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::binio::{BinReader, BinWriter};
use crate::error::{PsaError, Result};
use crate::linalg::Vector;

pub use idx::{load_idx, write_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use templates::{builtin_templates, TemplateSet, TEMPLATE_VERSION};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

const CACHE_MAGIC: &[u8; 4] = b"PSAD";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub pixels: Vector,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Valid => 2,
            Split::Test => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// A nonempty collection of equally sized images with labels below
/// [`NUM_CLASSES`]. Sample order is significant (gradient fields keep it).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledImage>,
    split: Split,
    num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledImage>, split: Split) -> Result<Self> {
        Dataset::with_classes(samples, split, NUM_CLASSES)
    }

    /// Like [`Dataset::new`] for label sets other than the ten digits.
    pub fn with_classes(
        samples: Vec<LabeledImage>,
        split: Split,
        num_classes: usize,
    ) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(PsaError::domain("dataset must not be empty"));
        };
        let d = first.pixels.len();
        for (i, s) in samples.iter().enumerate() {
            if s.pixels.len() != d {
                return Err(PsaError::dim(format!(
                    "sample {i} has {} pixels, expected {d}",
                    s.pixels.len()
                )));
            }
            if s.label >= num_classes {
                return Err(PsaError::Consistency(format!(
                    "sample {i} has label {} >= {num_classes}",
                    s.label
                )));
            }
        }
        Ok(Dataset {
            samples,
            split,
            num_classes,
        })
    }

    pub fn samples(&self) -> &[LabeledImage] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].pixels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Samples whose label is in `labels`, in original order.
    pub fn restrict_to(&self, labels: &[usize]) -> Result<Dataset> {
        let samples: Vec<_> = self
            .samples
            .iter()
            .filter(|s| labels.contains(&s.label))
            .cloned()
            .collect();
        if samples.is_empty() {
            return Err(PsaError::domain(format!(
                "no samples with labels {labels:?}"
            )));
        }
        Ok(Dataset {
            samples,
            split: self.split,
            num_classes: self.num_classes,
        })
    }

    /// Writes the `PSAD` cache (pixels stored as f32).
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path, CACHE_MAGIC, CACHE_VERSION)?;
        w.len32(self.len())?;
        w.len32(self.dim())?;
        for s in &self.samples {
            w.u8(s.label as u8)?;
            for &v in s.pixels.iter() {
                w.f32(v as f32)?;
            }
        }
        w.finish()
    }

    pub fn read_cache(path: &Path, split: Split) -> Result<Dataset> {
        let (mut r, _version) = BinReader::open(path, CACHE_MAGIC, CACHE_VERSION)?;
        let count = r.len32()?;
        let d = r.len32()?;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let label = usize::from(r.u8()?);
            let pixels = r.f32s(d)?.into_iter().map(f64::from).collect();
            samples.push(LabeledImage {
                pixels: Vector::from_vec(pixels)?,
                label,
            });
        }
        r.expect_eof()?;
        Dataset::new(samples, split)
    }
}

/// Noise model applied to a binary template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionConfig {
    /// Independent per-pixel bit-flip probability.
    pub flip_prob: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
}

impl Default for CorruptionConfig {
    /// Flip probability 0.2 and Gaussian noise of variance 0.1.
    fn default() -> Self {
        CorruptionConfig {
            flip_prob: 0.2,
            noise_sigma: 0.1f64.sqrt(),
        }
    }
}

/// Flip bits, add Gaussian noise, then clamp negatives to zero.
///
/// Output pixels are rounded to f32 precision so that the on-disk cache holds
/// exactly the generated values.
pub fn corrupt<R: Rng + ?Sized>(
    template: &LabeledImage,
    config: &CorruptionConfig,
    rng: &mut R,
) -> Result<LabeledImage> {
    if !(0.0..=1.0).contains(&config.flip_prob)
        || config.noise_sigma.is_nan()
        || config.noise_sigma < 0.0
    {
        return Err(PsaError::domain(format!(
            "invalid corruption config {config:?}"
        )));
    }
    if template.pixels.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(PsaError::domain("template pixels must be 0 or 1"));
    }
    let pixels = template
        .pixels
        .iter()
        .map(|&bit| {
            let flipped = if rng.random::<f64>() < config.flip_prob {
                1.0 - bit
            } else {
                bit
            };
            let z: f64 = rng.sample(StandardNormal);
            let v = (flipped + config.noise_sigma * z).max(0.0);
            f64::from(v as f32)
        })
        .collect();
    Ok(LabeledImage {
        pixels: Vector::from_vec_unchecked(pixels),
        label: template.label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const DESK: SplitSizes = SplitSizes {
        train: 10_000,
        valid: 2_000,
        test: 2_000,
    };
    pub const FULL: SplitSizes = SplitSizes {
        train: 50_000,
        valid: 10_000,
        test: 10_000,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Sample `index` of `split` draws from its own ChaCha stream, so the result
/// does not depend on generation order.
fn sample_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream_tag() << 48) | index as u64);
    rng
}

fn gen_split(
    templates: &TemplateSet,
    config: &CorruptionConfig,
    seed: u64,
    split: Split,
    n: usize,
) -> Result<Dataset> {
    let samples = (0..n)
        .map(|i| {
            let mut rng = sample_rng(seed, split, i);
            let label = rng.random_range(0..NUM_CLASSES);
            corrupt(templates.get(label), config, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, split)
}

/// Generates train/valid/test splits from the built-in templates.
pub fn gen_dataset(
    sizes: SplitSizes,
    seed: u64,
    config: &CorruptionConfig,
) -> Result<GeneratedData> {
    for (name, n) in [
        ("train", sizes.train),
        ("valid", sizes.valid),
        ("test", sizes.test),
    ] {
        if n < 10 {
            return Err(PsaError::domain(format!("{name} size {n} is below 10")));
        }
    }
    let templates = builtin_templates();
    Ok(GeneratedData {
        train: gen_split(&templates, config, seed, Split::Train, sizes.train)?,
        valid: gen_split(&templates, config, seed, Split::Valid, sizes.valid)?,
        test: gen_split(&templates, config, seed, Split::Test, sizes.test)?,
    })
}
