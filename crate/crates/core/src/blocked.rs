//! Flat vectors partitioned into contiguous blocks.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{ensure_finite, Error, Result};

/// Block boundaries `offsets[0] = 0 < offsets[1] < … < offsets[B] = d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    offsets: Arc<[usize]>,
}

impl BlockLayout {
    pub fn new(offsets: Vec<usize>) -> Result<Self> {
        if offsets.len() < 2 {
            return Err(Error::Layout(format!(
                "need at least one block, got offsets {offsets:?}"
            )));
        }
        if offsets[0] != 0 {
            return Err(Error::Layout(format!("offsets must start at 0, got {offsets:?}")));
        }
        if let Some(w) = offsets.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Layout(format!(
                "blocks must be non-empty and increasing, found {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self {
            offsets: offsets.into(),
        })
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &s in sizes {
            acc += s;
            offsets.push(acc);
        }
        Self::new(offsets)
    }

    /// One block spanning all `d` coordinates.
    pub fn single(d: usize) -> Result<Self> {
        Self::new(vec![0, d])
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.offsets[self.offsets.len() - 1]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        self.offsets[block]..self.offsets[block + 1]
    }

    pub fn block_len(&self, block: usize) -> usize {
        self.offsets[block + 1] - self.offsets[block]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockedVector {
    data: Vec<f64>,
    layout: BlockLayout,
}

/// The update direction produced by a direction transform.
pub type Direction = BlockedVector;

impl BlockedVector {
    pub fn new(data: Vec<f64>, layout: BlockLayout) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(Error::Layout(format!(
                "data length {} does not match layout dimension {}",
                data.len(),
                layout.dim()
            )));
        }
        ensure_finite("blocked vector", &data)?;
        Ok(Self { data, layout })
    }

    pub fn zeros(layout: BlockLayout) -> Self {
        Self {
            data: vec![0.0; layout.dim()],
            layout,
        }
    }

    pub fn zeros_like(other: &BlockedVector) -> Self {
        Self::zeros(other.layout.clone())
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let sizes: Vec<usize> = blocks.iter().map(Vec::len).collect();
        Self::new(blocks.concat(), BlockLayout::from_sizes(&sizes)?)
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn num_blocks(&self) -> usize {
        self.layout.num_blocks()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the flat data. The layout cannot change through it.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.layout.range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.range(i);
        &mut self.data[r]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.layout.ranges().map(move |r| &self.data[r])
    }

    pub fn to_blocks(&self) -> Vec<Vec<f64>> {
        self.blocks().map(<[f64]>::to_vec).collect()
    }

    pub fn block_norms(&self) -> Vec<f64> {
        self.blocks().map(crate::numerics::norm).collect()
    }

    pub fn ensure_same_layout(&self, other: &BlockedVector, op: &'static str) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::Layout(format!(
                "{op}: offsets {:?} vs {:?}",
                self.layout.offsets(),
                other.layout.offsets()
            )));
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        ensure_finite(what, &self.data)
    }

    pub fn scaled(&self, c: f64) -> BlockedVector {
        Self {
            data: self.data.iter().map(|x| c * x).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Maximum absolute coordinate difference, `‖self − other‖_∞`.
    pub fn max_abs_diff(&self, other: &BlockedVector) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}
