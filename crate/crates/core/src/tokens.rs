use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::salience::SalienceVector;

/// A token sequence as it flows between blocks: the CLS vector kept apart
/// from the patch tokens, plus per-patch salience, size and origin.
///
/// `sizes[i]` counts the original patches folded into token `i`;
/// `origins[i]` is the original patch index whose identity token `i`
/// carries (the destination of every merge it absorbed).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub cls: Vec<f32>,
    pub patches: Matrix,
    pub salience: SalienceVector,
    pub sizes: Vec<u32>,
    pub origins: Vec<usize>,
}

impl TokenSequence {
    /// Fresh sequence straight out of the patch embedding: unit sizes,
    /// identity origins, uniform salience.
    pub fn new(cls: Vec<f32>, patches: Matrix) -> Result<Self> {
        if cls.len() != patches.cols() {
            return Err(Error::shape(
                "TokenSequence::new",
                format!("cls dim {}", cls.len()),
                format!("patch dim {}", patches.cols()),
            ));
        }
        let n = patches.rows();
        Ok(Self {
            cls,
            patches,
            salience: SalienceVector::uniform(n),
            sizes: vec![1; n],
            origins: (0..n).collect(),
        })
    }

    /// Splits a `[1 + N, d]` matrix whose first row is CLS.
    pub fn from_full(full: &Matrix) -> Result<Self> {
        if full.rows() == 0 {
            return Err(Error::InvalidArgument(
                "token matrix must contain at least the CLS row".into(),
            ));
        }
        Self::new(full.row(0).to_vec(), full.slice_rows(1, full.rows()))
    }

    /// Number of patch tokens (CLS excluded).
    pub fn len(&self) -> usize {
        self.patches.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.patches.cols()
    }

    pub fn total_size(&self) -> u64 {
        self.sizes.iter().map(|s| *s as u64).sum()
    }

    /// CLS row followed by the patch rows.
    pub fn to_full(&self) -> Matrix {
        let cls = Matrix::new(1, self.cls.len(), self.cls.clone()).expect("cls row");
        cls.vstack(&self.patches).expect("matching dims")
    }

    /// Replaces features from a `[1 + N, d]` block output, keeping the
    /// bookkeeping vectors.
    pub fn with_full(mut self, full: Matrix) -> Result<Self> {
        if full.rows() != self.len() + 1 || full.cols() != self.dim() {
            return Err(Error::shape(
                "TokenSequence::with_full",
                format!("{}x{}", self.len() + 1, self.dim()),
                format!("{}x{}", full.rows(), full.cols()),
            ));
        }
        self.cls = full.row(0).to_vec();
        self.patches = full.slice_rows(1, full.rows());
        Ok(self)
    }
}
