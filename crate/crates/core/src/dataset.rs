//! Token-sequence datasets: synthetic generation and archive persistence.
//!
//! A dataset archive stores `tokens` with shape `[images, 1 + N, d]` (row 0
//! of every image is CLS), `redundancy` with shape `[images]`, and an
//! optional `labels` tensor of class ids.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::archive::{Tensor, TensorArchive};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::tokens::TokenSequence;

pub const DEFAULT_NOISE: f32 = 0.05;
pub const MAX_PROTOTYPES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Redundancy {
    Fixed(f64),
    /// Drawn per image, uniformly in `[lo, hi]`.
    Uniform(f64, f64),
}

impl Redundancy {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        match *self {
            Redundancy::Fixed(v) if ok(v) => Ok(()),
            Redundancy::Uniform(lo, hi) if ok(lo) && ok(hi) && lo <= hi => Ok(()),
            other => Err(Error::InvalidArgument(format!(
                "redundancy must lie in [0, 1], got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub images: usize,
    pub tokens: usize,
    pub dim: usize,
    pub redundancy: Redundancy,
    pub prototypes: usize,
    pub noise: f32,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(images: usize, tokens: usize, dim: usize, redundancy: Redundancy, seed: u64) -> Self {
        Self {
            images,
            tokens,
            dim,
            redundancy,
            prototypes: MAX_PROTOTYPES,
            noise: DEFAULT_NOISE,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<TokenSequence>,
    pub redundancy: Vec<f32>,
    pub labels: Option<Vec<u32>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn tokens(&self) -> usize {
        self.images.first().map_or(0, |s| s.len())
    }

    pub fn dim(&self) -> usize {
        self.images.first().map_or(0, |s| s.dim())
    }

    pub fn to_archive(&self) -> TensorArchive {
        let (n, d) = (self.tokens(), self.dim());
        let mut data = Vec::with_capacity(self.len() * (n + 1) * d);
        for img in &self.images {
            data.extend_from_slice(&img.cls);
            data.extend_from_slice(img.patches.data());
        }
        let mut a = TensorArchive::new();
        a.metadata.insert("format".into(), "adamerge-dataset/1".into());
        a.insert(
            "tokens",
            Tensor {
                shape: vec![self.len(), n + 1, d],
                data,
            },
        );
        a.insert("redundancy", Tensor::vector(self.redundancy.clone()));
        if let Some(labels) = &self.labels {
            a.insert("labels", Tensor::vector(labels.iter().map(|l| *l as f32).collect()));
        }
        a
    }

    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let t = a.get("tokens")?;
        let [images, rows, d] = t.shape[..] else {
            return Err(Error::shape("tokens", format!("{:?}", t.shape), "[images, 1 + N, d]"));
        };
        if rows == 0 {
            return Err(Error::InvalidArgument("dataset images have no CLS row".into()));
        }
        let stride = rows * d;
        let seqs = (0..images)
            .map(|i| {
                let m = Matrix::new(rows, d, t.data[i * stride..(i + 1) * stride].to_vec())?;
                TokenSequence::from_full(&m)
            })
            .collect::<Result<Vec<_>>>()?;
        let redundancy = match a.tensors.get("redundancy") {
            Some(_) => a.expect("redundancy", &[images])?.data.clone(),
            None => vec![f32::NAN; images],
        };
        let labels = match a.tensors.get("labels") {
            Some(_) => Some(
                a.expect("labels", &[images])?
                    .data
                    .iter()
                    .map(|v| *v as u32)
                    .collect(),
            ),
            None => None,
        };
        Ok(Self {
            images: seqs,
            redundancy,
            labels,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_archive().save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(dir)?)
    }
}

fn gaussian_row(d: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect()
}

/// Each image holds `⌈ρ·N⌉` noisy copies of up to four random prototypes
/// (placed at random positions) and `N − ⌈ρ·N⌉` independent standard
/// gaussian tokens. CLS is an independent gaussian vector.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.redundancy.validate()?;
    if cfg.tokens == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument("tokens and dim must be positive".into()));
    }
    if !(1..=MAX_PROTOTYPES).contains(&cfg.prototypes) {
        return Err(Error::InvalidArgument(format!(
            "prototypes must be in 1..={MAX_PROTOTYPES}, got {}",
            cfg.prototypes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, d) = (cfg.tokens, cfg.dim);
    let mut images = Vec::with_capacity(cfg.images);
    let mut redundancy = Vec::with_capacity(cfg.images);
    for _ in 0..cfg.images {
        let rho = match cfg.redundancy {
            Redundancy::Fixed(v) => v,
            Redundancy::Uniform(lo, hi) => rng.random_range(lo..=hi),
        };
        let redundant = ((rho * n as f64).ceil() as usize).min(n);
        let protos: Vec<Vec<f32>> = (0..cfg.prototypes).map(|_| gaussian_row(d, &mut rng)).collect();
        let mut positions: Vec<usize> = (0..n).collect();
        positions.shuffle(&mut rng);
        let mut rows = vec![Vec::new(); n];
        for (k, &pos) in positions.iter().enumerate() {
            rows[pos] = if k < redundant {
                let p = &protos[rng.random_range(0..protos.len())];
                p.iter()
                    .map(|v| v + cfg.noise * rng.sample::<f32, _>(StandardNormal))
                    .collect()
            } else {
                gaussian_row(d, &mut rng)
            };
        }
        let cls = gaussian_row(d, &mut rng);
        images.push(TokenSequence::new(cls, Matrix::from_rows(&rows, d)?)?);
        redundancy.push(rho as f32);
    }
    Ok(Dataset {
        images,
        redundancy,
        labels: None,
    })
}
