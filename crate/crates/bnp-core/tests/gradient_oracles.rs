//! Finite-difference oracles against the analytic backward pass, plus
//! trajectory determinism.

use bnp_core::hessian::checks::{check_gradients, Tolerances};
use bnp_core::linalg::{Matrix, Rng};
use bnp_core::nn::{
    init, softmax_cross_entropy, Activation, Layer, Network, SgdOptimizer, Value,
};

#[test]
fn all_layer_kinds_match_central_differences() {
    let rec = check_gradients(2024, &Tolerances::default()).unwrap();
    assert!(rec.pass, "gradient check failed: {:?}", rec.values);
    // The contract is 1e-5 worst case; the measured values should sit well
    // below it in double precision.
    for (name, value) in &rec.values {
        assert!(value <= &1e-5, "{name} = {value}");
    }
}

#[test]
fn zero_output_weights_give_uniform_softmax_bias_gradient() {
    // With the output layer zeroed the logits vanish, the softmax is
    // uniform, and the bias gradient averages (1/C - onehot) over the batch.
    let mut rng = Rng::new(7);
    let classes = 5;
    let mut net = Network::new(vec![
        Layer::Dense(init::glorot_dense(3, 4, Activation::Relu, &mut rng)),
        Layer::Dense(
            bnp_core::nn::DenseLayer::new(
                Matrix::zeros(classes, 4),
                vec![0.0; classes],
                Activation::None,
            )
            .unwrap(),
        ),
    ]);
    let batch = Matrix::from_fn(10, 3, |_, _| rng.normal());
    let labels: Vec<usize> = (0..10).map(|i| i % classes).collect();
    let logits = net.forward(Value::Mat(batch)).unwrap();
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = net.backward(&dlogits).unwrap();
    let db = match &grads.layers[1] {
        bnp_core::nn::LayerGrad::Dense { bias, .. } => bias.clone(),
        _ => unreachable!(),
    };
    // Each class appears twice in 10 samples: expected gradient per class is
    // (10 * 0.2 - 2) / 10 = 0.
    for &g in &db {
        assert!(g.abs() < 1e-14, "bias gradient {g}");
    }
    // Skewed labels: class 0 never appears.
    let labels: Vec<usize> = (0..10).map(|i| 1 + (i % (classes - 1))).collect();
    let mut net2 = net.clone();
    let batch2 = Matrix::from_fn(10, 3, |_, _| rng.normal());
    let logits2 = net2.forward(Value::Mat(batch2)).unwrap();
    let (_, dlogits2) = softmax_cross_entropy(&logits2, &labels).unwrap();
    let grads2 = net2.backward(&dlogits2).unwrap();
    let db2 = match &grads2.layers[1] {
        bnp_core::nn::LayerGrad::Dense { bias, .. } => bias.clone(),
        _ => unreachable!(),
    };
    assert!((db2[0] - 0.2).abs() < 1e-14, "absent class gradient {}", db2[0]);
}

#[test]
fn training_trajectory_is_bit_identical_for_fixed_seed() {
    let run = |seed: u64| -> Vec<f64> {
        let mut rng = Rng::new(seed);
        let mut net = Network::new(vec![
            Layer::Dense(init::glorot_dense(6, 10, Activation::Relu, &mut rng)),
            Layer::Dense(init::glorot_dense(10, 3, Activation::None, &mut rng)),
        ]);
        let mut opt = SgdOptimizer::new(0.05, 0.9);
        for step in 0..25 {
            let mut data_rng = Rng::new(Rng::derive_seed(seed, &format!("step-{step}")));
            let batch = Matrix::from_fn(8, 6, |_, _| data_rng.normal());
            let labels: Vec<usize> = (0..8).map(|_| data_rng.below(3)).collect();
            let logits = net.forward(Value::Mat(batch)).unwrap();
            let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
            let grads = net.backward(&dlogits).unwrap();
            opt.step(&mut net, &grads).unwrap();
        }
        net.parameter_vector()
    };
    let a = run(31);
    let b = run(31);
    assert_eq!(
        a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
    let c = run(32);
    assert_ne!(a, c);
}

#[test]
fn conv_batchnorm_gradients_match_central_differences() {
    // Channel-wise batch norm on feature maps, gradients through the
    // statistics.
    use bnp_core::hessian::fd::{fd_gradients, max_relative_gradient_error};
    use bnp_core::nn::tensor::Tensor4;
    let mut rng = Rng::new(91);
    let mut bn = bnp_core::nn::BatchNormLayer::new(2, 0.9, 1e-3);
    bn.gamma = vec![1.1, 0.8];
    bn.beta = vec![0.05, -0.1];
    let mut net = Network::new(vec![
        Layer::Conv2d(init::glorot_conv(3, 1, 2, Activation::Relu, &mut rng)),
        Layer::BatchNorm2d(bn, None),
        Layer::Flatten(None),
        Layer::Dense(init::glorot_dense(4 * 4 * 2, 3, Activation::None, &mut rng)),
    ]);
    let batch = Value::Img(Tensor4::from_fn(5, 4, 4, 1, |_, _, _, _| rng.normal()));
    let labels: Vec<usize> = (0..5).map(|_| rng.below(3)).collect();
    let logits = net.forward(batch.clone()).unwrap();
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
    let analytic = net.backward(&dlogits).unwrap();
    let fd = fd_gradients(&net, &batch, &labels, 1e-5).unwrap();
    let err = max_relative_gradient_error(&analytic, &fd);
    assert!(err <= 1e-6, "max rel err {err}");
}
