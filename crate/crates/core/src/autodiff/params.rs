use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A named, contiguous slice of a parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Shape as a (rows, cols) matrix: vectors become a single row.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            [r, rest @ ..] => (*r, rest.iter().product()),
        }
    }
}

/// Ordered segment table. Segments are disjoint and tile `0..len` exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut cursor = 0;
        for seg in &segments {
            if seg.offset != cursor {
                return Err(Error::LayoutMismatch(format!(
                    "segment `{}` starts at {} but previous segments end at {}",
                    seg.name, seg.offset, cursor
                )));
            }
            cursor += seg.len();
        }
        Ok(Self {
            segments,
            len: cursor,
        })
    }

    /// Builds a layout from (name, shape) pairs laid out back to back.
    pub fn from_shapes<'a, I>(shapes: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, Vec<usize>)>,
    {
        let mut offset = 0;
        let segments = shapes
            .into_iter()
            .map(|(name, shape)| {
                let seg = Segment {
                    name: name.to_string(),
                    offset,
                    shape,
                };
                offset += seg.len();
                seg
            })
            .collect();
        Self {
            segments,
            len: offset,
        }
    }

    /// A single unnamed segment of length `n`.
    pub fn flat(n: usize) -> Self {
        Self::from_shapes([("theta", vec![n])])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Flat parameter vector with a shared segment layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} values for a layout of length {}",
                values.len(),
                layout.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("parameter {i}")));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn filled(layout: Arc<Layout>, value: f64) -> Self {
        let values = vec![value; layout.len()];
        Self { layout, values }
    }

    /// Shorthand for a single-segment vector.
    pub fn from_slice(values: &[f64]) -> Self {
        Self {
            layout: Arc::new(Layout::flat(values.len())),
            values: values.to_vec(),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .segment(name)
            .map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.segment(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.layout
                    .segments()
                    .iter()
                    .map(|s| &s.name)
                    .collect::<Vec<_>>(),
                other
                    .layout
                    .segments()
                    .iter()
                    .map(|s| &s.name)
                    .collect::<Vec<_>>()
            )))
        }
    }

    fn finite(self, context: &str) -> Result<Self> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::non_finite(context.to_string()))
        }
    }

    /// `self + scale·dir`.
    pub fn add_scaled(&self, scale: f64, dir: &ParamVector) -> Result<ParamVector> {
        self.check_layout(dir)?;
        let values = self
            .values
            .iter()
            .zip(&dir.values)
            .map(|(a, d)| a + scale * d)
            .collect();
        Self {
            layout: self.layout.clone(),
            values,
        }
        .finite("parameter update")
    }

    /// `self + rates ⊙ dir`, elementwise step sizes.
    pub fn add_hadamard(&self, rates: &ParamVector, dir: &ParamVector) -> Result<ParamVector> {
        self.check_layout(rates)?;
        self.check_layout(dir)?;
        let values = self
            .values
            .iter()
            .zip(rates.values.iter().zip(&dir.values))
            .map(|(a, (r, d))| a + r * d)
            .collect();
        Self {
            layout: self.layout.clone(),
            values,
        }
        .finite("parameter update")
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.add_scaled(1.0, other)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.add_scaled(-1.0, other)
    }

    pub fn scale(&self, c: f64) -> Result<ParamVector> {
        Self {
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
        .finite("parameter scaling")
    }

    pub fn hadamard(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(other)?;
        Self {
            layout: self.layout.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        }
        .finite("elementwise product")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ParamVector> {
        Self {
            layout: self.layout.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
        .finite("elementwise map")
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Derivative of a scalar objective with respect to a [`ParamVector`]; shares
/// the source layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient(ParamVector);

impl Gradient {
    pub fn new(params: ParamVector) -> Result<Self> {
        params.finite("gradient").map(Gradient)
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        Gradient(ParamVector::zeros(layout))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Gradient(ParamVector::from_slice(values))
    }

    pub fn into_params(self) -> ParamVector {
        self.0
    }

    pub fn accumulate(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.0 = self.0.add_scaled(scale, other)?;
        Ok(())
    }
}

impl Deref for Gradient {
    type Target = ParamVector;
    fn deref(&self) -> &ParamVector {
        &self.0
    }
}

impl From<Gradient> for ParamVector {
    fn from(g: Gradient) -> Self {
        g.0
    }
}
