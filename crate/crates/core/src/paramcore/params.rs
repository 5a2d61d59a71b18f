use std::ops::Range;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};

/// Shape of one named parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    /// Row-major `rows x cols` matrix.
    Matrix(usize, usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn rows(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            Shape::Vector(_) => 1,
            Shape::Matrix(_, c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub shape: Shape,
    pub offset: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.shape.size()
    }
}

/// Ordered, immutable mapping from block names to index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<Block>,
    len: usize,
}

impl Layout {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, Shape)>) -> Result<Self> {
        let mut blocks: Vec<Block> = Vec::new();
        let mut offset = 0;
        for (name, shape) in entries {
            let name = name.into();
            if blocks.iter().any(|b| b.name == name) {
                return Err(Error::DuplicateBlock(name));
            }
            blocks.push(Block {
                name,
                shape,
                offset,
            });
            offset += shape.size();
        }
        Ok(Layout {
            blocks,
            len: offset,
        })
    }

    /// Concatenates two layouts; the second one's offsets are shifted.
    pub fn concat(&self, other: &Layout) -> Result<Self> {
        Layout::new(
            self.blocks
                .iter()
                .chain(other.blocks.iter())
                .map(|b| (b.name.clone(), b.shape)),
        )
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::UnknownBlock(name.to_string()))
    }

    /// Name of the block that owns flat index `index`.
    pub fn block_at(&self, index: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| b.range().contains(&index))
    }
}

/// Read-only view of a block, reshaped per its layout entry.
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a> {
    pub shape: Shape,
    pub data: &'a [f64],
}

impl BlockView<'_> {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.shape.cols() + col]
    }
}

#[derive(Debug)]
pub struct BlockViewMut<'a> {
    pub shape: Shape,
    pub data: &'a mut [f64],
}

impl BlockViewMut<'_> {
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let cols = self.shape.cols();
        self.data[row * cols + col] = value;
    }
}

/// Flat parameter store with a named block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        ParamVector {
            data: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_data(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::Dimension {
                what: "parameter data",
                expected: layout.len(),
                got: data.len(),
            });
        }
        Ok(ParamVector { data, layout })
    }

    /// Matrix entries uniform in `[-s, s]` with `s = 1/sqrt(fan_in)`; vectors zero.
    pub fn init_uniform<R: Rng + ?Sized>(layout: Arc<Layout>, rng: &mut R) -> Self {
        let mut p = ParamVector::zeros(layout);
        let blocks = p.layout.blocks().to_vec();
        for b in blocks {
            if let Shape::Matrix(_, cols) = b.shape {
                let s = 1.0 / (cols as f64).sqrt();
                for v in &mut p.data[b.range()] {
                    *v = rng.random_range(-s..=s);
                }
            }
        }
        p
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// A zero vector sharing this layout (for gradients).
    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(self.layout.clone())
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        ParamVector::from_data(self.layout.clone(), data)
    }

    pub fn block_range(&self, name: &str) -> Result<Range<usize>> {
        Ok(self.layout.block(name)?.range())
    }

    pub fn block(&self, name: &str) -> Result<BlockView<'_>> {
        let b = self.layout.block(name)?;
        Ok(BlockView {
            shape: b.shape,
            data: &self.data[b.range()],
        })
    }

    pub fn block_mut(&mut self, name: &str) -> Result<BlockViewMut<'_>> {
        let b = self.layout.block(name)?;
        let (shape, range) = (b.shape, b.range());
        Ok(BlockViewMut {
            shape,
            data: &mut self.data[range],
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Arc<Layout> {
        Arc::new(Layout::new([("W0", Shape::Matrix(2, 3)), ("b0", Shape::Vector(2))]).unwrap())
    }

    #[test]
    fn block_offsets() {
        let p = ParamVector::zeros(small());
        assert_eq!(p.len(), 8);
        assert_eq!(p.block_range("b0").unwrap(), 6..8);
        assert_eq!(p.block_range("W0").unwrap(), 0..6);
    }

    #[test]
    fn single_entry_matrix() {
        let layout = Arc::new(Layout::new([("W0", Shape::Matrix(1, 1))]).unwrap());
        let p = ParamVector::from_data(layout, vec![0.7]).unwrap();
        let v = p.block("W0").unwrap();
        assert_eq!(v.shape, Shape::Matrix(1, 1));
        assert_eq!(v.get(0, 0), 0.7);
        assert!(matches!(p.block("W9"), Err(Error::UnknownBlock(n)) if n == "W9"));
    }

    #[test]
    fn writes_go_through() {
        let mut p = ParamVector::zeros(small());
        p.block_mut("W0").unwrap().set(1, 2, 3.0);
        p.block_mut("b0").unwrap().data[1] = -1.0;
        assert_eq!(p.data()[5], 3.0);
        assert_eq!(p.data()[7], -1.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = Layout::new([("a", Shape::Vector(1)), ("a", Shape::Vector(2))]).unwrap_err();
        assert!(matches!(err, Error::DuplicateBlock(_)));
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(ParamVector::from_data(small(), vec![0.0; 7]).is_err());
    }

    #[test]
    fn init_bounds() {
        let mut rng = crate::paramcore::seeded_rng(3);
        let p = ParamVector::init_uniform(small(), &mut rng);
        let s = 1.0 / 3f64.sqrt();
        assert!(p.block("W0").unwrap().data.iter().all(|v| v.abs() <= s));
        assert!(p.block("b0").unwrap().data.iter().all(|&v| v == 0.0));
    }
}
