use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Fully connected layer computing `x W + b`, with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_in, fan_out),
            bias: alloc::vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.weights)?;
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        Ok(out)
    }
}

/// ReLU multilayer perceptron whose last layer is a linear classifier.
///
/// `widths = [input, hidden.., classes]`. The penultimate representation `z`
/// is the input of the classifier layer: the last hidden activation, or the
/// raw input when there are no hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Input followed by every hidden activation; the last entry is `z`.
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
}

impl Forward {
    pub fn features(&self) -> &Matrix {
        self.activations.last().expect("input is always stored")
    }
}

/// Parameter gradients, laid out like the model's layers.
pub type Gradients = Vec<Dense>;

impl MlpModel {
    /// He-normal weights (`std = sqrt(2 / fan_in)`) and zero biases.
    pub fn new(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let std = math::sqrt(2.0 / w[0] as f64);
                Dense {
                    weights: rng.gaussian(w[0], w[1], 0.0, std),
                    bias: alloc::vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(Self {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Shape {
                    op: "from_layers",
                    left: pair[0].weights.shape(),
                    right: pair[1].weights.shape(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Shape {
                    op: "from_layers",
                    left: l.weights.shape(),
                    right: (1, l.bias.len()),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.layers.len() + 1);
        w.push(self.layers[0].fan_in());
        w.extend(self.layers.iter().map(Dense::fan_out));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier().fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier().fan_out()
    }

    pub fn classifier(&self) -> &Dense {
        self.layers.last().expect("non-empty by construction")
    }

    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        let (hidden, cls) = self.layers.split_at(self.layers.len() - 1);
        for layer in hidden {
            let next = layer.apply(&a)?.map(|v| v.max(0.0));
            activations.push(a);
            a = next;
        }
        let logits = cls[0].apply(&a)?;
        activations.push(a);
        Ok(Forward { activations, logits })
    }

    /// Penultimate features only.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        let mut a = x.clone();
        for layer in &self.layers[..self.layers.len() - 1] {
            a = layer.apply(&a)?.map(|v| v.max(0.0));
        }
        Ok(a)
    }

    /// `dL/dz` contributed through the classifier by `dlogits`.
    pub fn feature_grad(&self, dlogits: &Matrix) -> Result<Matrix> {
        dlogits.matmul_nt(&self.classifier().weights)
    }

    /// Backpropagates `dlogits` (through the classifier) plus `dz_extra`
    /// (injected directly at `z`). Missing terms count as zero.
    pub fn backward(&self, fwd: &Forward, dlogits: Option<&Matrix>, dz_extra: Option<&Matrix>) -> Result<Gradients> {
        let n = self.layers.len();
        let mut grads: Gradients = self
            .layers
            .iter()
            .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
            .collect();
        let z = fwd.features();
        let mut dz = match dlogits {
            Some(dl) => {
                grads[n - 1] = Dense {
                    weights: z.matmul_tn(dl)?,
                    bias: column_sums(dl),
                };
                self.feature_grad(dl)?
            }
            None => Matrix::zeros(z.rows(), z.cols()),
        };
        if let Some(extra) = dz_extra {
            dz.axpy(1.0, extra)?;
        }
        for l in (0..n - 1).rev() {
            let out = &fwd.activations[l + 1];
            let mut dpre = dz;
            for (d, &o) in dpre.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
            let input = &fwd.activations[l];
            grads[l] = Dense {
                weights: input.matmul_tn(&dpre)?,
                bias: column_sums(&dpre),
            };
            dz = if l > 0 {
                dpre.matmul_nt(&self.layers[l].weights)?
            } else {
                Matrix::zeros(0, 0)
            };
        }
        Ok(grads)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::InvalidArgument(
            "widths need an input and an output size, all positive",
        ));
    }
    Ok(())
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = alloc::vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (o, &x) in out.iter_mut().zip(m.row(i)) {
            *o += x;
        }
    }
    out
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / b`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    if labels.iter().any(|&y| y >= logits.cols()) {
        return Err(Error::InvalidArgument("label out of range"));
    }
    let b = logits.rows() as f64;
    let log_p = logits.row_log_softmax();
    let mut loss = 0.0;
    let mut grad = log_p.map(math::exp);
    for (i, &y) in labels.iter().enumerate() {
        loss -= log_p[(i, y)];
        grad[(i, y)] -= 1.0;
    }
    grad.as_mut_slice().iter_mut().for_each(|g| *g /= b);
    Ok((loss / b, grad))
}

/// Row-wise argmax (first maximiser).
pub fn predict(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predict(logits).iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}
