use asldn_core::graph::Graph;
use asldn_core::seed;
use asldn_core::{Dwan, DwanSpec, InitScheme, LossKind, NetworkParameters, Tensor};
use rand::Rng;

fn input(h: usize, w: usize, salt: u64) -> Tensor<f64> {
    let mut rng = seed::rng(salt);
    Tensor::from_fn(&[1, 1, h, w], |_| rng.random_range(-1.0..1.0))
}

/// `sum(out * readout)`: a smooth scalar that touches every output pixel.
fn objective(net: &Dwan, p: &NetworkParameters<f64>, x: &Tensor<f64>, readout: &Tensor<f64>) -> f64 {
    let y = net.forward(p, x).unwrap();
    y.data().iter().zip(readout.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn twenty_random_parameters_match_central_differences() {
    // Plain He init keeps every residual branch live, so all parameters carry gradient.
    let net = Dwan::new(DwanSpec {
        init: InitScheme::He,
        ..DwanSpec::default()
    })
    .unwrap();
    let params = net.init::<f64>(5);
    let x = input(32, 32, 1);
    let readout = input(32, 32, 2);

    let mut g = Graph::new();
    let xi = g.leaf_ref(&x, false);
    let nodes = net.record(&mut g, &params, xi, true).unwrap();
    g.backward_with_seed(nodes.output, readout.clone()).unwrap();
    let grads: Vec<Tensor<f64>> = nodes.params.iter().map(|&id| g.grad(id).unwrap().unwrap().clone()).collect();

    let mut rng = seed::rng(99);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = rng.random_range(0..params.len());
        let i = rng.random_range(0..grads[t].len());
        let mut p = params.clone();
        let orig = p.tensors().nth(t).unwrap().data()[i];
        p.tensors_mut().nth(t).unwrap().data_mut()[i] = orig + h;
        let up = objective(&net, &p, &x, &readout);
        p.tensors_mut().nth(t).unwrap().data_mut()[i] = orig - h;
        let down = objective(&net, &p, &x, &readout);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[t].data()[i];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max(rel);
        assert!(rel < 1e-4, "tensor {t} index {i}: analytic {analytic} numeric {numeric}");
    }
    assert!(worst < 1e-4);
}

#[test]
fn forward_matches_recorded_graph_bit_exactly() {
    let net = Dwan::new(DwanSpec {
        base_channels: 8,
        expansion_channels: 16,
        init: InitScheme::He,
        ..DwanSpec::default()
    })
    .unwrap();
    let p = net.init::<f32>(3);
    let x = input(24, 19, 4).cast::<f32>();
    let mut g = Graph::new();
    let xi = g.leaf_ref(&x, false);
    let nodes = net.record(&mut g, &p, xi, false).unwrap();
    assert!(g.value(nodes.output).unwrap().bit_eq(&net.forward(&p, &x).unwrap()));
}

#[test]
fn zero_input_with_zero_biases_gives_zero_output() {
    let net = Dwan::new(DwanSpec {
        init: InitScheme::He,
        ..DwanSpec::default()
    })
    .unwrap();
    let p = net.init::<f32>(8);
    let y = net.forward(&p, &Tensor::zeros(&[1, 1, 21, 21])).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn batch_of_two_keeps_clinical_slice_shape() {
    let net = Dwan::new(DwanSpec::default()).unwrap();
    let p = net.init::<f32>(8);
    let y = net.forward(&p, &Tensor::ones(&[2, 1, 109, 91])).unwrap();
    assert_eq!(y.shape(), &[2, 1, 109, 91]);
}

#[test]
fn training_loss_gradient_is_finite_for_both_losses() {
    use asldn_core::trainer::Model;
    let net = Dwan::new(DwanSpec {
        base_channels: 4,
        expansion_channels: 8,
        ..DwanSpec::default()
    })
    .unwrap();
    let p = net.init::<f64>(1);
    let x = input(16, 16, 5).into_reshaped(&[16, 16]).unwrap();
    let y = input(16, 16, 6).into_reshaped(&[16, 16]).unwrap();
    for kind in [LossKind::L1, LossKind::L2] {
        let (l, grads) = net.loss_and_grads(&p, &x, &y, kind).unwrap();
        assert!(l.is_finite() && l > 0.0);
        assert_eq!(grads.len(), 2 * net.layers().len());
        assert!(grads.iter().all(|g| g.as_ref().unwrap().data().iter().all(|v| v.is_finite())));
    }
}
