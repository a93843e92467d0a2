//! ViT weights: shapes, synthetic initialization and archive persistence.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archive::{Tensor, TensorArchive};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Default standard deviation of the synthetic gaussian init, the usual
/// ViT truncated-normal scale.
pub const DEFAULT_INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub dim: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub layers: usize,
    pub num_classes: usize,
}

impl ModelDims {
    /// ViT-B/16.
    pub const VIT_B16: ModelDims = ModelDims {
        dim: 768,
        heads: 12,
        mlp_dim: 3072,
        layers: 12,
        num_classes: 1000,
    };

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.mlp_dim == 0 || self.layers == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument(format!("model dims must be positive: {self:?}")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidArgument(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_gamma: Vec<f32>,
    pub ln1_beta: Vec<f32>,
    /// `[dim, 3 * dim]`, columns ordered q | k | v.
    pub qkv_weight: Matrix,
    pub qkv_bias: Vec<f32>,
    pub proj_weight: Matrix,
    pub proj_bias: Vec<f32>,
    pub ln2_gamma: Vec<f32>,
    pub ln2_beta: Vec<f32>,
    pub fc1_weight: Matrix,
    pub fc1_bias: Vec<f32>,
    pub fc2_weight: Matrix,
    pub fc2_bias: Vec<f32>,
}

impl BlockWeights {
    /// All projections and biases zero; the block reduces to the identity.
    pub fn zeros(dims: &ModelDims) -> Self {
        let (d, f) = (dims.dim, dims.mlp_dim);
        Self {
            ln1_gamma: vec![1.0; d],
            ln1_beta: vec![0.0; d],
            qkv_weight: Matrix::zeros(d, 3 * d),
            qkv_bias: vec![0.0; 3 * d],
            proj_weight: Matrix::zeros(d, d),
            proj_bias: vec![0.0; d],
            ln2_gamma: vec![1.0; d],
            ln2_beta: vec![0.0; d],
            fc1_weight: Matrix::zeros(d, f),
            fc1_bias: vec![0.0; f],
            fc2_weight: Matrix::zeros(f, d),
            fc2_bias: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub id: String,
    pub dims: ModelDims,
    pub blocks: Vec<BlockWeights>,
    pub norm_gamma: Vec<f32>,
    pub norm_beta: Vec<f32>,
    /// `[dim, num_classes]`
    pub head_weight: Matrix,
    pub head_bias: Vec<f32>,
}

fn gaussian(rows: usize, cols: usize, std: f32, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0f32, std).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Seed-deterministic weights: every matrix `~ N(0, init_std²)`, biases
/// zero, layer-norm gains one and shifts zero.
pub fn synth_weights(seed: u64, dims: ModelDims, init_std: f32) -> Result<ModelWeights> {
    dims.validate()?;
    if !(init_std >= 0.0 && init_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("init std must be non-negative, got {init_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f) = (dims.dim, dims.mlp_dim);
    let blocks = (0..dims.layers)
        .map(|_| BlockWeights {
            qkv_weight: gaussian(d, 3 * d, init_std, &mut rng),
            proj_weight: gaussian(d, d, init_std, &mut rng),
            fc1_weight: gaussian(d, f, init_std, &mut rng),
            fc2_weight: gaussian(f, d, init_std, &mut rng),
            ..BlockWeights::zeros(&dims)
        })
        .collect();
    Ok(ModelWeights {
        id: format!(
            "synth-s{seed}-d{d}-h{}-f{f}-l{}-c{}",
            dims.heads, dims.layers, dims.num_classes
        ),
        dims,
        blocks,
        norm_gamma: vec![1.0; d],
        norm_beta: vec![0.0; d],
        head_weight: gaussian(d, dims.num_classes, init_std, &mut rng),
        head_bias: vec![0.0; dims.num_classes],
    })
}

impl ModelWeights {
    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new();
        a.metadata.insert("format".into(), "adamerge-vit/1".into());
        a.metadata.insert("model_id".into(), self.id.clone());
        a.metadata.insert("heads".into(), self.dims.heads.to_string());
        for (l, b) in self.blocks.iter().enumerate() {
            let p = |s: &str| format!("blocks.{l}.{s}");
            a.insert(p("ln1.gamma"), Tensor::vector(b.ln1_gamma.clone()));
            a.insert(p("ln1.beta"), Tensor::vector(b.ln1_beta.clone()));
            a.insert(p("attn.qkv.weight"), Tensor::from_matrix(&b.qkv_weight));
            a.insert(p("attn.qkv.bias"), Tensor::vector(b.qkv_bias.clone()));
            a.insert(p("attn.proj.weight"), Tensor::from_matrix(&b.proj_weight));
            a.insert(p("attn.proj.bias"), Tensor::vector(b.proj_bias.clone()));
            a.insert(p("ln2.gamma"), Tensor::vector(b.ln2_gamma.clone()));
            a.insert(p("ln2.beta"), Tensor::vector(b.ln2_beta.clone()));
            a.insert(p("mlp.fc1.weight"), Tensor::from_matrix(&b.fc1_weight));
            a.insert(p("mlp.fc1.bias"), Tensor::vector(b.fc1_bias.clone()));
            a.insert(p("mlp.fc2.weight"), Tensor::from_matrix(&b.fc2_weight));
            a.insert(p("mlp.fc2.bias"), Tensor::vector(b.fc2_bias.clone()));
        }
        a.insert("norm.gamma", Tensor::vector(self.norm_gamma.clone()));
        a.insert("norm.beta", Tensor::vector(self.norm_beta.clone()));
        a.insert("head.weight", Tensor::from_matrix(&self.head_weight));
        a.insert("head.bias", Tensor::vector(self.head_bias.clone()));
        a
    }

    /// Rebuilds weights from an archive, validating every tensor shape
    /// against the dims implied by `head.weight`, `mlp.fc1.weight` and the
    /// `heads` metadata entry.
    pub fn from_archive(a: &TensorArchive) -> Result<Self> {
        let heads: usize = a
            .metadata
            .get("heads")
            .ok_or_else(|| Error::MissingTensor("__metadata__.heads".into()))?
            .parse()
            .map_err(|_| Error::InvalidArgument("metadata `heads` is not an integer".into()))?;
        let head = a.get("head.weight")?;
        let [dim, num_classes] = head.shape[..] else {
            return Err(Error::shape("head.weight", format!("{:?}", head.shape), "rank 2"));
        };
        let fc1 = a.get("blocks.0.mlp.fc1.weight")?;
        let mlp_dim = *fc1.shape.get(1).ok_or_else(|| Error::shape("fc1", "rank 1", "rank 2"))?;
        let layers = (0..)
            .take_while(|l| a.tensors.contains_key(&format!("blocks.{l}.ln1.gamma")))
            .count();
        let dims = ModelDims {
            dim,
            heads,
            mlp_dim,
            layers,
            num_classes,
        };
        dims.validate()?;
        let (d, f) = (dim, mlp_dim);
        let vec_of = |name: &str, n: usize| -> Result<Vec<f32>> { Ok(a.expect(name, &[n])?.data.clone()) };
        let mat_of = |name: &str, r: usize, c: usize| -> Result<Matrix> { a.expect(name, &[r, c])?.to_matrix() };
        let mut blocks = Vec::with_capacity(layers);
        for l in 0..layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            blocks.push(BlockWeights {
                ln1_gamma: vec_of(&p("ln1.gamma"), d)?,
                ln1_beta: vec_of(&p("ln1.beta"), d)?,
                qkv_weight: mat_of(&p("attn.qkv.weight"), d, 3 * d)?,
                qkv_bias: vec_of(&p("attn.qkv.bias"), 3 * d)?,
                proj_weight: mat_of(&p("attn.proj.weight"), d, d)?,
                proj_bias: vec_of(&p("attn.proj.bias"), d)?,
                ln2_gamma: vec_of(&p("ln2.gamma"), d)?,
                ln2_beta: vec_of(&p("ln2.beta"), d)?,
                fc1_weight: mat_of(&p("mlp.fc1.weight"), d, f)?,
                fc1_bias: vec_of(&p("mlp.fc1.bias"), f)?,
                fc2_weight: mat_of(&p("mlp.fc2.weight"), f, d)?,
                fc2_bias: vec_of(&p("mlp.fc2.bias"), d)?,
            });
        }
        Ok(ModelWeights {
            id: a.metadata.get("model_id").cloned().unwrap_or_else(|| "unnamed".into()),
            dims,
            blocks,
            norm_gamma: vec_of("norm.gamma", d)?,
            norm_beta: vec_of("norm.beta", d)?,
            head_weight: head.to_matrix()?,
            head_bias: vec_of("head.bias", num_classes)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_archive().save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(dir)?)
    }
}
