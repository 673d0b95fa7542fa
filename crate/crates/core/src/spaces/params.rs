use super::model::Model;
use crate::error::{Error, Result};

/// Flat ordering of every trainable value: the `nodes x dim` embedding in
/// row-major order, then the model's raw scalars (`theta` weights or the
/// dot offset `c`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub nodes: usize,
    pub dim: usize,
    pub scalars: usize,
}

impl ParamLayout {
    pub fn for_model(model: &Model, nodes: usize) -> Self {
        Self {
            nodes,
            dim: model.dim(),
            scalars: model.scalar_count(),
        }
    }

    pub fn embedding_len(&self) -> usize {
        self.nodes * self.dim
    }

    pub fn len(&self) -> usize {
        self.embedding_len() + self.scalars
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_name(&self, index: usize) -> &'static str {
        if index < self.embedding_len() {
            "embedding"
        } else {
            "scalar"
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl Params {
    pub fn new(layout: ParamLayout, embedding: Vec<f64>, scalars: Vec<f64>) -> Result<Self> {
        if embedding.len() != layout.embedding_len() || scalars.len() != layout.scalars {
            return Err(Error::LengthMismatch {
                left: embedding.len() + scalars.len(),
                right: layout.len(),
            });
        }
        let mut values = embedding;
        values.extend(scalars);
        Ok(Self { layout, values })
    }

    pub fn from_flat(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: layout.len(),
            });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn embedding(&self) -> &[f64] {
        &self.values[..self.layout.embedding_len()]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.layout.dim;
        &self.values[i * d..(i + 1) * d]
    }

    pub fn scalars(&self) -> &[f64] {
        &self.values[self.layout.embedding_len()..]
    }
}
