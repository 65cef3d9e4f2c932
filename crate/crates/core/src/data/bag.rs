use std::collections::HashSet;

use crate::error::{CsclError, Result};
use crate::math::Matrix;

use super::StainId;

/// Patch position on the non-overlapping tile grid: `(row, col)`.
pub type Coord = (u32, u32);

/// One stain's patch embeddings for one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBag {
    pub slide_id: String,
    pub stain: StainId,
    pub coords: Vec<Coord>,
    pub embeddings: Matrix<f32>,
}

impl PatchBag {
    /// Builds a bag and checks its invariants.
    pub fn new(
        slide_id: impl Into<String>,
        stain: StainId,
        coords: Vec<Coord>,
        embeddings: Matrix<f32>,
    ) -> Result<Self> {
        let bag = Self {
            slide_id: slide_id.into(),
            stain,
            coords,
            embeddings,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn n_patches(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.embeddings.shape();
        if n == 0 || d == 0 {
            return Err(CsclError::Malformed(format!(
                "bag {}: empty embedding matrix {n}x{d}",
                self.slide_id
            )));
        }
        if self.coords.len() != n {
            return Err(CsclError::Malformed(format!(
                "bag {}: {} coords for {n} rows",
                self.slide_id,
                self.coords.len()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for &(row, col) in &self.coords {
            if !seen.insert((row, col)) {
                return Err(CsclError::DuplicateCoord { row, col });
            }
        }
        if !self.embeddings.is_finite() {
            return Err(CsclError::NonFinite(format!("bag {}", self.slide_id)));
        }
        Ok(())
    }
}
