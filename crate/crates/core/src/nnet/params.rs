use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named parameter block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter storage with a named layout.
///
/// Values are stored in single precision. The same type doubles as the
/// gradient buffer; [`ParamVector::zeros_like`] keeps the layouts in sync.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f32>,
    layout: Vec<LayoutEntry>,
}

impl ParamVector {
    pub fn zeros(layout: Vec<LayoutEntry>) -> Self {
        let n = layout.iter().map(LayoutEntry::len).sum();
        Self {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn from_values(values: Vec<f32>, layout: Vec<LayoutEntry>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayoutEntry::len).sum();
        if values.len() != expected {
            return Err(Error::Layout(format!(
                "{} values for a layout of {} parameters",
                values.len(),
                expected
            )));
        }
        Ok(Self { values, layout })
    }

    /// Rounds a double-precision accumulator into storage precision.
    pub fn from_f64(values: &[f64], layout: Vec<LayoutEntry>) -> Result<Self> {
        Self::from_values(values.iter().map(|&v| v as f32).collect(), layout)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    /// Byte offset and length of every block, in layout order.
    pub fn block_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layout
            .iter()
            .map(|e| {
                let start = off;
                off += e.len();
                (start, e.len())
            })
            .collect()
    }

    pub fn check_same_layout(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(Error::Layout(format!(
                "{} vs {} parameters with different block layouts",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(())
    }

    /// Little-endian f32 encoding in layout order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8], layout: Vec<LayoutEntry>) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Layout(format!(
                "weight blob length {} is not a multiple of 4",
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_values(values, layout)
    }

    pub fn max_abs(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}
