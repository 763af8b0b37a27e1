use std::sync::Arc;

use crate::error::{Error, Result};

/// Shape of one dense layer: `rows` outputs, `cols` inputs, optional bias of length `rows`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub has_bias: bool,
}

impl LayerShape {
    pub fn new(rows: usize, cols: usize, has_bias: bool) -> Self {
        LayerShape { rows, cols, has_bias }
    }

    pub fn weight_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.weight_len() + if self.has_bias { self.rows } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter (or gradient, or model delta) vector with per-layer shape metadata.
///
/// Layout per layer is the row-major weight matrix followed by the bias. Shapes are
/// shared behind an `Arc`, so cloning a vector copies only the values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Arc<[LayerShape]>,
}

impl ParamVector {
    pub fn new(shapes: impl Into<Arc<[LayerShape]>>, values: Vec<f64>) -> Result<Self> {
        let shapes = shapes.into();
        let expected: usize = shapes.iter().map(LayerShape::len).sum();
        if expected != values.len() {
            return Err(Error::shape(format!(
                "layer shapes describe {expected} parameters but {} values were given",
                values.len()
            )));
        }
        Ok(ParamVector { values, shapes })
    }

    pub fn zeros(shapes: impl Into<Arc<[LayerShape]>>) -> Self {
        let shapes = shapes.into();
        let len = shapes.iter().map(LayerShape::len).sum();
        ParamVector {
            values: vec![0.0; len],
            shapes,
        }
    }

    /// A zero vector with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            shapes: Arc::clone(&self.shapes),
        }
    }

    /// Same shapes as `self`, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(Arc::clone(&self.shapes), values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.shapes, &other.shapes) || self.shapes == other.shapes
    }

    pub fn check_shape(&self, other: &ParamVector) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "parameter vectors disagree: {:?} vs {:?}",
                self.shapes, other.shapes
            )))
        }
    }

    /// Offset of layer `index` in the flat vector.
    pub fn layer_offset(&self, index: usize) -> usize {
        self.shapes[..index].iter().map(LayerShape::len).sum()
    }

    /// Weight and bias slices of layer `index`. The bias slice is empty when the
    /// layer has none.
    pub fn layer(&self, index: usize) -> (&[f64], &[f64]) {
        let shape = self.shapes[index];
        let start = self.layer_offset(index);
        let (w, rest) = self.values[start..start + shape.len()].split_at(shape.weight_len());
        (w, rest)
    }

    pub fn layer_mut(&mut self, index: usize) -> (&mut [f64], &mut [f64]) {
        let shape = self.shapes[index];
        let start = self.layer_offset(index);
        self.values[start..start + shape.len()].split_at_mut(shape.weight_len())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(ParamVector {
            values,
            shapes: Arc::clone(&self.shapes),
        })
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(ParamVector {
            values,
            shapes: Arc::clone(&self.shapes),
        })
    }

    pub fn scaled(&self, k: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|v| v * k).collect(),
            shapes: Arc::clone(&self.shapes),
        }
    }

    pub fn scale_in_place(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        self.check_shape(x)?;
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_shape(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation of the coordinates.
    pub fn std(&self) -> f64 {
        population_std(&self.values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Cosine similarity; zero when either side has zero norm.
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes() -> Vec<LayerShape> {
        vec![LayerShape::new(3, 2, true), LayerShape::new(2, 3, false)]
    }

    #[test]
    fn length_must_match_shapes() {
        assert!(ParamVector::new(shapes(), vec![0.0; 15]).is_ok());
        assert!(matches!(
            ParamVector::new(shapes(), vec![0.0; 14]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn layer_slices_follow_layout() {
        let p = ParamVector::new(shapes(), (0..15).map(f64::from).collect()).unwrap();
        let (w0, b0) = p.layer(0);
        assert_eq!(w0, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(b0, &[6.0, 7.0, 8.0]);
        let (w1, b1) = p.layer(1);
        assert_eq!(w1.len(), 6);
        assert!(b1.is_empty());
    }

    #[test]
    fn arithmetic_rejects_foreign_shapes() {
        let a = ParamVector::zeros(shapes());
        let b = ParamVector::zeros(vec![LayerShape::new(15, 1, false)]);
        assert!(a.add(&b).is_err());
        assert!(a.clone().axpy(1.0, &b).is_err());
    }

    #[test]
    fn std_is_population() {
        let p = ParamVector::new(vec![LayerShape::new(2, 1, false)], vec![0.0, 2.0]).unwrap();
        assert_eq!(p.std(), 1.0);
        assert_eq!(p.mean(), 1.0);
    }
}
