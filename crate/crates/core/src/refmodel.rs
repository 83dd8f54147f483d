//! Multilayer perceptron classifier used as the downstream model.

use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::ndgrad::{matmul, Graph, NodeId};
use crate::rng::{RngContext, Stream};

/// Affine/ReLU stack. Parameters are stored as `[W0, b0, W1, b1, ...]`
/// with `W_l` of shape `[dims[l], dims[l + 1]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    dims: Vec<usize>,
    params: Vec<Array>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config(alloc::format!("layer dims {dims:?} need >= 2 positive entries")));
    }
    Ok(())
}

impl MlpClassifier {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn init_params(dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut params = Vec::with_capacity(2 * (dims.len() - 1));
        for (layer, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let s = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let mut w = vec![0.0; fan_in * fan_out];
            RngContext::new(seed, Stream::Init).at(0, 0, layer as u64).fill_uniform(&mut w);
            w.iter_mut().for_each(|v| *v = s * (2.0 * *v - 1.0));
            params.push(Array::new(vec![fan_in, fan_out], w)?);
            params.push(Array::zeros(&[fan_out]));
        }
        Ok(Self { dims: dims.to_vec(), params })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let params = dims.windows(2).flat_map(|p| [Array::zeros(&[p[0], p[1]]), Array::zeros(&[p[1]])]).collect();
        Ok(Self { dims: dims.to_vec(), params })
    }

    /// Rebuilds a model from a flat parameter vector in storage order.
    pub fn from_flat(dims: &[usize], flat: &[f64]) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        if flat.len() != model.num_params() {
            return Err(Error::Config(alloc::format!(
                "model with dims {dims:?} has {} parameters, got {}",
                model.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for p in &mut model.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(model)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[Array] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Array::len).sum()
    }

    /// Adds the parameters to `g` as leaves.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|p| g.leaf(p.clone())).collect()
    }

    /// Logits node for `images`; any shape whose leading axis is the batch
    /// and whose remaining axes hold `input_dim` values.
    pub fn forward(&self, g: &mut Graph, params: &[NodeId], images: NodeId) -> Result<NodeId> {
        let shape = g.value(images).shape().to_vec();
        let batch = shape[0];
        let features: usize = shape[1..].iter().product();
        if shape.len() < 2 || features != self.input_dim() {
            return Err(Error::ShapeMismatch {
                primitive: "mlp_forward",
                lhs: shape,
                rhs: vec![batch, self.input_dim()],
            });
        }
        let mut h = if shape.len() == 2 { images } else { g.reshape(images, &[batch, features])? };
        let layers = self.dims.len() - 1;
        for layer in 0..layers {
            h = g.matmul(h, params[2 * layer])?;
            h = g.add_row(h, params[2 * layer + 1])?;
            if layer + 1 < layers {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Plain forward pass, `[n, input_dim]` rows in, `[n, classes]` out.
    pub fn logits(&self, images: &[f64]) -> Result<Array> {
        let d = self.input_dim();
        if images.is_empty() || !images.len().is_multiple_of(d) {
            return Err(Error::ShapeMismatch { primitive: "mlp_logits", lhs: vec![images.len()], rhs: vec![d] });
        }
        let n = images.len() / d;
        let mut h = images.to_vec();
        let layers = self.dims.len() - 1;
        for layer in 0..layers {
            let (k, m) = (self.dims[layer], self.dims[layer + 1]);
            let mut out = vec![0.0; n * m];
            matmul(&h, self.params[2 * layer].data(), &mut out, n, k, m);
            let bias = self.params[2 * layer + 1].data();
            for row in out.chunks_exact_mut(m) {
                for (v, b) in row.iter_mut().zip(bias) {
                    *v += b;
                    if layer + 1 < layers && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = out;
        }
        Array::new(vec![n, self.classes()], h)
    }
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_check;
    use crate::simloss::cross_entropy;

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = MlpClassifier::init_params(&[12, 5, 3], 1).unwrap();
        let b = MlpClassifier::init_params(&[12, 5, 3], 1).unwrap();
        let c = MlpClassifier::init_params(&[12, 5, 3], 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.flat_params(), c.flat_params());
        assert_eq!(a.num_params(), 12 * 5 + 5 + 5 * 3 + 3);
        assert!(a.params()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_weight_statistics() {
        let m = MlpClassifier::init_params(&[3072, 256, 4], 0).unwrap();
        let w = m.params()[0].data();
        let n = w.len() as f64;
        let s = libm::sqrt(6.0 / (3072.0 + 256.0));
        assert!(w.iter().all(|v| v.abs() <= s));
        let mean = w.iter().sum::<f64>() / n;
        let sigma = s / libm::sqrt(3.0);
        assert!(mean.abs() <= 3.0 * sigma / libm::sqrt(n), "{mean}");
    }

    #[test]
    fn zero_model_gives_ln_k() {
        let m = MlpClassifier::zeros(&[8, 4, 4]).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g);
        let x = g.constant(Array::full(&[3, 8], 0.3));
        let logits = m.forward(&mut g, &p, x).unwrap();
        assert!(g.value(logits).data().iter().all(|&v| v == 0.0));
        let ce = cross_entropy(&mut g, logits, &[0, 1, 2]).unwrap();
        assert!((g.scalar(ce) - libm::log(4.0)).abs() < 1e-12);
    }

    #[test]
    fn batch_order_permutes_rows() {
        let m = MlpClassifier::init_params(&[6, 5, 3], 4).unwrap();
        let rows: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut swapped = rows.clone();
        swapped[..6].copy_from_slice(&rows[12..]);
        swapped[12..].copy_from_slice(&rows[..6]);
        let a = m.logits(&rows).unwrap();
        let b = m.logits(&swapped).unwrap();
        assert_eq!(a.data()[..3], b.data()[6..]);
        assert_eq!(a.data()[3..6], b.data()[3..6]);
        // graph and plain paths agree
        let mut g = Graph::new();
        let p = m.bind(&mut g);
        let x = g.constant(Array::new(vec![3, 6], rows).unwrap());
        let l = m.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(l), &a);
    }

    #[test]
    fn dim_mismatch() {
        let m = MlpClassifier::zeros(&[8, 4]).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g);
        let x = g.constant(Array::zeros(&[2, 7]));
        assert!(m.forward(&mut g, &p, x).is_err());
        assert!(MlpClassifier::from_flat(&[8, 4], &[0.0; 3]).is_err());
        assert!(MlpClassifier::init_params(&[8], 0).is_err());
    }

    #[test]
    fn input_and_parameter_gradients() {
        let m = MlpClassifier::init_params(&[12, 6, 3], 9).unwrap();
        let x: Vec<f64> = (0..24).map(|i| 0.5 + 0.4 * (i as f64 * 1.3).sin()).collect();
        let mut point = vec![Array::new(vec![2, 12], x).unwrap()];
        point.extend(m.params().iter().cloned());
        let dims = m.dims().to_vec();
        let report = finite_difference_check(
            |g, l| {
                let logits = MlpClassifier::zeros(&dims).unwrap().forward(g, &l[1..], l[0])?;
                cross_entropy(g, logits, &[0, 2])
            },
            &point,
            1e-3,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-3, "{report:?}");
        assert!(report.per_leaf[0] <= 1e-3);
    }

    #[test]
    fn argmax_tie_goes_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }
}
