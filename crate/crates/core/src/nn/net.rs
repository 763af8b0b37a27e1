use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::params::{LayerShape, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }
}

/// One dense layer in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub activation: Activation,
}

/// Dense feed-forward classifier. Parameters live in one flat [`ParamVector`];
/// the final layer emits logits that feed softmax cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    params: ParamVector,
    activations: Arc<[Activation]>,
}

impl DenseNet {
    /// Layer widths `[input, hidden.., labels]`; relu on hidden layers, identity on
    /// the output. Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = DenseNet::zeros(widths)?;
        let shapes: Vec<LayerShape> = net.params.shapes().to_vec();
        for (i, shape) in shapes.iter().enumerate() {
            let bound = 1.0 / (shape.cols as f64).sqrt();
            let (w, b) = net.params.layer_mut(i);
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!(
                "network needs at least an input and an output width, all positive; got {widths:?}"
            )));
        }
        let shapes: Vec<LayerShape> = widths.windows(2).map(|w| LayerShape::new(w[1], w[0], true)).collect();
        let mut activations = vec![Activation::Relu; shapes.len()];
        *activations.last_mut().unwrap() = Activation::Identity;
        Ok(DenseNet {
            params: ParamVector::zeros(shapes),
            activations: activations.into(),
        })
    }

    pub fn from_params(params: ParamVector, activations: &[Activation]) -> Result<Self> {
        let shapes = params.shapes();
        if shapes.len() != activations.len() || shapes.is_empty() {
            return Err(Error::shape(format!(
                "{} layers but {} activations",
                shapes.len(),
                activations.len()
            )));
        }
        for pair in shapes.windows(2) {
            if pair[0].rows != pair[1].cols {
                return Err(Error::shape(format!(
                    "layer widths do not chain: {} outputs feed {} inputs",
                    pair[0].rows, pair[1].cols
                )));
            }
        }
        Ok(DenseNet {
            params,
            activations: activations.into(),
        })
    }

    /// Same architecture, different parameters.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        self.params.check_shape(&params)?;
        Ok(DenseNet {
            params,
            activations: Arc::clone(&self.activations),
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let shapes: Vec<LayerShape> = layers
            .iter()
            .map(|l| LayerShape::new(l.weights.nrows(), l.weights.ncols(), l.bias.is_some()))
            .collect();
        let mut values = Vec::with_capacity(shapes.iter().map(LayerShape::len).sum());
        let mut activations = Vec::with_capacity(layers.len());
        for layer in &layers {
            if let Some(b) = &layer.bias {
                if b.len() != layer.weights.nrows() {
                    return Err(Error::shape("bias length differs from layer width"));
                }
            }
            values.extend(layer.weights.iter().copied());
            if let Some(b) = &layer.bias {
                values.extend(b.iter().copied());
            }
            activations.push(layer.activation);
        }
        DenseNet::from_params(ParamVector::new(shapes, values)?, &activations)
    }

    pub fn to_layers(&self) -> Vec<Layer> {
        (0..self.depth())
            .map(|i| {
                let (w, b) = self.weights(i);
                Layer {
                    weights: w.to_owned(),
                    bias: b.map(|b| b.to_owned()),
                    activation: self.activations[i],
                }
            })
            .collect()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn depth(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.params.shapes()[0].cols
    }

    /// Number of output nodes, one per label.
    pub fn output_dim(&self) -> usize {
        self.params.shapes().last().unwrap().rows
    }

    fn weights(&self, i: usize) -> (ArrayView2<'_, f64>, Option<ArrayView1<'_, f64>>) {
        let shape = self.params.shapes()[i];
        let (w, b) = self.params.layer(i);
        let w = ArrayView2::from_shape((shape.rows, shape.cols), w).expect("layer layout");
        let b = shape.has_bias.then(|| ArrayView1::from(b));
        (w, b)
    }

    fn check_batch(&self, batch: &ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} features, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer plus the post-activation outputs.
    fn forward_trace(&self, batch: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut outputs = Vec::with_capacity(self.depth() + 1);
        outputs.push(batch.to_owned());
        for i in 0..self.depth() {
            let (w, b) = self.weights(i);
            let mut z = outputs[i].dot(&w.t());
            if let Some(b) = b {
                z += &b;
            }
            self.activations[i].apply(&mut z);
            outputs.push(z);
        }
        outputs
    }

    /// Logits, one row per sample.
    pub fn forward(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        Ok(self.forward_trace(batch).pop().unwrap())
    }

    fn check_labels(&self, batch: &ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
        self.check_batch(batch)?;
        if batch.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if labels.len() != batch.nrows() {
            return Err(Error::shape(format!(
                "{} labels for {} samples",
                labels.len(),
                batch.nrows()
            )));
        }
        let l = self.output_dim();
        if let Some(bad) = labels.iter().find(|&&y| y >= l) {
            return Err(Error::invalid(format!("label {bad} outside [0, {l})")));
        }
        Ok(())
    }

    /// Cross-entropy loss of every sample.
    pub fn sample_losses(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Vec<f64>> {
        self.check_labels(&batch, labels)?;
        let logits = self.forward_trace(batch).pop().unwrap();
        Ok(logits
            .outer_iter()
            .zip(labels)
            .map(|(row, &y)| log_sum_exp(row) - row[y])
            .collect())
    }

    /// Mean cross-entropy loss.
    pub fn loss(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        let losses = self.sample_losses(batch, labels)?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Mean cross-entropy loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, ParamVector)> {
        self.check_labels(&batch, labels)?;
        let n = batch.nrows() as f64;
        let mut outputs = self.forward_trace(batch);
        let logits = outputs.pop().unwrap();

        let mut loss = 0.0;
        let mut delta = Array2::<f64>::zeros(logits.raw_dim());
        for ((row, mut d), &y) in logits.outer_iter().zip(delta.outer_iter_mut()).zip(labels) {
            let lse = log_sum_exp(row);
            loss += lse - row[y];
            for (dv, &z) in d.iter_mut().zip(row.iter()) {
                *dv = (z - lse).exp() / n;
            }
            d[y] -= 1.0 / n;
        }
        loss /= n;

        let mut grad = self.params.zeros_like();
        for i in (0..self.depth()).rev() {
            let input = &outputs[i];
            {
                let (gw, gb) = grad.layer_mut(i);
                let gw_mat = delta.t().dot(input);
                gw.copy_from_slice(gw_mat.as_slice().expect("standard layout"));
                if !gb.is_empty() {
                    for (g, s) in gb.iter_mut().zip(delta.sum_axis(Axis(0)).iter()) {
                        *g = *s;
                    }
                }
            }
            if i > 0 {
                let (w, _) = self.weights(i);
                let mut upstream = delta.dot(&w);
                if self.activations[i - 1] == Activation::Relu {
                    ndarray::Zip::from(&mut upstream).and(input).for_each(|u, &a| {
                        if a <= 0.0 {
                            *u = 0.0;
                        }
                    });
                }
                delta = upstream;
            }
        }
        Ok((loss, grad))
    }

    pub fn predict(&self, batch: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(logits
            .outer_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                    )
                    .0
            })
            .collect())
    }

    /// Fraction of samples whose arg-max logit equals the label.
    pub fn accuracy(&self, batch: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        if batch.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let predicted = self.predict(batch)?;
        let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn log_sum_exp(row: ArrayView1<'_, f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixed_232() -> DenseNet {
        DenseNet::from_layers(vec![
            Layer {
                weights: array![[0.5, -0.3], [0.2, 0.8], [-0.6, 0.1]],
                bias: Some(array![0.1, -0.2, 0.05]),
                activation: Activation::Relu,
            },
            Layer {
                weights: array![[0.7, -0.4, 0.3], [-0.2, 0.9, 0.6]],
                bias: Some(array![0.0, 0.1]),
                activation: Activation::Identity,
            },
        ])
        .unwrap()
    }

    /// Scalar-by-scalar forward pass, written without ndarray.
    fn scalar_forward(layers: &[Layer], x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in layers {
            let mut next = Vec::new();
            for r in 0..layer.weights.nrows() {
                let mut s = layer.bias.as_ref().map_or(0.0, |b| b[r]);
                for (c, av) in a.iter().enumerate() {
                    s += layer.weights[[r, c]] * av;
                }
                if layer.activation == Activation::Relu && s < 0.0 {
                    s = 0.0;
                }
                next.push(s);
            }
            a = next;
        }
        a
    }

    #[test]
    fn zero_net_gives_zero_logits() {
        let net = DenseNet::zeros(&[4, 3, 2]).unwrap();
        let logits = net.forward(array![[1.0, -2.0, 3.0, 0.5]].view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = DenseNet::from_layers(vec![Layer {
            weights: array![[1.0, 0.0], [0.0, 1.0]],
            bias: Some(array![0.0, 0.0]),
            activation: Activation::Identity,
        }])
        .unwrap();
        let logits = net.forward(array![[1.0, 0.0]].view()).unwrap();
        assert_eq!(logits, array![[1.0, 0.0]]);
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let net = fixed_232();
        let layers = net.to_layers();
        let batch = array![[1.0, 2.0], [-0.5, 0.25], [0.0, 0.0], [3.0, -1.0]];
        let logits = net.forward(batch.view()).unwrap();
        for (row, x) in logits.outer_iter().zip(batch.outer_iter()) {
            let expected = scalar_forward(&layers, x.as_slice().unwrap());
            for (a, b) in row.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-15, "{a} vs {b}");
            }
        }
        // Frozen value of the first row, computed by hand:
        // hidden = relu([0.5-0.6+0.1, 0.2+1.6-0.2, -0.6+0.2+0.05]) = [0.0, 1.6, 0.0]
        // logits = [-0.4*1.6, 0.9*1.6 + 0.1] = [-0.64, 1.54]
        assert!((logits[[0, 0]] + 0.64).abs() < 1e-12);
        assert!((logits[[0, 1]] - 1.54).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let net = DenseNet::zeros(&[3, 4, 2]).unwrap();
        let batch = array![[1.0, 2.0, 3.0], [0.0, -1.0, 0.5]];
        let (loss, _) = net.loss_and_grad(batch.view(), &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[3, 5, 3], &mut rng).unwrap();
        let batch = array![[0.3, -1.0, 2.0], [1.5, 0.2, -0.7]];
        let doubled = ndarray::concatenate(Axis(0), &[batch.view(), batch.view()]).unwrap();
        let (l1, g1) = net.loss_and_grad(batch.view(), &[0, 2]).unwrap();
        let (l2, g2) = net.loss_and_grad(doubled.view(), &[0, 2, 0, 2]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = DenseNet::zeros(&[2, 2]).unwrap();
        let batch = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            net.loss_and_grad(batch.view(), &[]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let net = DenseNet::zeros(&[2, 2]).unwrap();
        assert!(matches!(
            net.forward(array![[1.0, 2.0, 3.0]].view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn layers_must_chain() {
        let params = ParamVector::zeros(vec![LayerShape::new(3, 2, true), LayerShape::new(2, 4, true)]);
        assert!(DenseNet::from_params(params, &[Activation::Relu, Activation::Identity]).is_err());
    }

    #[test]
    fn central_differences_agree_on_232() {
        let net = fixed_232();
        let batch = array![[1.0, 1.5], [-0.5, 0.25], [0.4, -0.3]];
        let labels = [1, 0, 1];
        let (_, grad) = net.loss_and_grad(batch.view(), &labels).unwrap();
        let h = 1e-5;
        let max_abs = grad.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..grad.len() {
            let mut plus = net.clone();
            plus.params_mut().values_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut().values_mut()[i] -= h;
            let fd =
                (plus.loss(batch.view(), &labels).unwrap() - minus.loss(batch.view(), &labels).unwrap()) / (2.0 * h);
            assert!(
                (fd - grad.values()[i]).abs() <= 1e-6 * max_abs,
                "component {i}: fd {fd} analytic {}",
                grad.values()[i]
            );
        }
    }
}
