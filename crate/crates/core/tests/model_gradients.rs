use makd_core::gradcheck::relative_error;
use makd_core::train::{cross_entropy, MlpModel};
use makd_core::{makd, MakdVariant, Matrix, Rng};

fn objective(model: &MlpModel, x: &Matrix, y: &[usize], zt: &Matrix, v: MakdVariant, lambda: f64) -> f64 {
    let fwd = model.forward(x).unwrap();
    let (ce, _) = cross_entropy(&fwd.logits, y).unwrap();
    ce + lambda * makd::value(v, fwd.features(), zt).unwrap()
}

#[test]
fn every_weight_gradient_matches_finite_differences() {
    let mut rng = Rng::new(11);
    let x = rng.gaussian(5, 4, 0.0, 1.0);
    let y = [0, 2, 1, 2, 0];
    let zt = rng.gaussian(5, 7, 0.0, 1.0);
    let lambda = 0.7;
    for name in ["CS L2 SL1", "IP L2 L2", "L2 avg KL", "CS noN L2", "IP max SL1"] {
        let v: MakdVariant = name.parse().unwrap();
        let model = MlpModel::new(&[4, 6, 5, 3], &mut rng.derive(name)).unwrap();
        let fwd = model.forward(&x).unwrap();
        let (_, dlogits) = cross_entropy(&fwd.logits, &y).unwrap();
        let dz = makd::grad(v, fwd.features(), &zt).unwrap().scale(lambda);
        let grads = model.backward(&fwd, Some(&dlogits), Some(&dz)).unwrap();

        let h = 1e-6;
        for (l, grad) in grads.iter().enumerate() {
            let (rows, cols) = grad.weights.shape();
            let mut numeric_w = Matrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = model.clone();
                    plus.layers_mut()[l].weights[(r, c)] += h;
                    let mut minus = model.clone();
                    minus.layers_mut()[l].weights[(r, c)] -= h;
                    numeric_w[(r, c)] = (objective(&plus, &x, &y, &zt, v, lambda)
                        - objective(&minus, &x, &y, &zt, v, lambda))
                        / (2.0 * h);
                }
            }
            let err = relative_error(&grad.weights, &numeric_w);
            assert!(err < 1e-3, "{name} layer {l} weights: {err}");

            let mut numeric_b = Matrix::zeros(1, cols);
            for c in 0..cols {
                let mut plus = model.clone();
                plus.layers_mut()[l].bias[c] += h;
                let mut minus = model.clone();
                minus.layers_mut()[l].bias[c] -= h;
                numeric_b[(0, c)] =
                    (objective(&plus, &x, &y, &zt, v, lambda) - objective(&minus, &x, &y, &zt, v, lambda)) / (2.0 * h);
            }
            let analytic_b = Matrix::from_vec(1, cols, grad.bias.clone()).unwrap();
            let err = relative_error(&analytic_b, &numeric_b);
            assert!(err < 1e-3, "{name} layer {l} bias: {err}");
        }
    }
}
