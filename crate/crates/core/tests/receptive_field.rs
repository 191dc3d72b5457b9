use std::collections::BTreeSet;

use asldn_core::graph::Graph;
use asldn_core::network::{ConvLayer, Stage};
use asldn_core::{seed, Dwan, DwanSpec, InitScheme, NodeId, Tensor};
use rand::Rng;

/// Side length of the input region that can reach the centre of `node`,
/// measured from the support of the back-propagated gradient.
fn empirical_rf(net: &Dwan, size: usize, pick: impl Fn(&asldn_core::network::DwanNodes) -> NodeId) -> usize {
    let p = net.init::<f32>(21);
    let mut rng = seed::rng(4);
    let x = Tensor::from_fn(&[1, 1, size, size], |_| rng.random_range(-1.0f32..1.0));
    let mut g = Graph::new();
    let xi = g.leaf_ref(&x, true);
    let nodes = net.record(&mut g, &p, xi, false).unwrap();
    let target = pick(&nodes);
    let shape = g.value(target).unwrap().shape().to_vec();
    let c = size / 2;
    let mut seed_grad = Tensor::zeros(&shape);
    for ch in 0..shape[1] {
        seed_grad.set(&[0, ch, c, c], 1.0);
    }
    g.backward_with_seed(target, seed_grad).unwrap();
    let grad = g.grad(xi).unwrap().unwrap();
    let (mut lo, mut hi) = (usize::MAX, 0);
    for y in 0..size {
        for x in 0..size {
            if grad.data()[y * size + x] != 0.0 {
                lo = lo.min(y.min(x));
                hi = hi.max(y.max(x));
            }
        }
    }
    assert!(lo > 0 && hi < size - 1, "support touches the border; enlarge the probe");
    hi - lo + 1
}

/// Independent oracle: grows the set of reachable offsets layer by layer.
fn propagated_rf(layers: &[ConvLayer]) -> (usize, usize, usize) {
    type Set = BTreeSet<(i64, i64)>;
    let grow = |s: &Set, l: &ConvLayer| -> Set {
        let r = (l.kernel / 2) as i64;
        let d = l.dilation as i64;
        let mut out = Set::new();
        for &(y, x) in s {
            for ky in -r..=r {
                for kx in -r..=r {
                    out.insert((y + ky * d, x + kx * d));
                }
            }
        }
        out
    };
    let extent = |s: &Set| (s.iter().map(|p| p.0).max().unwrap() - s.iter().map(|p| p.0).min().unwrap() + 1) as usize;
    let origin: Set = [(0, 0)].into_iter().collect();
    let head = grow(&origin, &layers[0]);
    let path = |pred: fn(&Stage) -> bool| -> Set {
        // Residual adds union the identity branch with the convolved one.
        let mut s = head.clone();
        let convs: Vec<&ConvLayer> = layers.iter().filter(|l| pred(&l.stage)).collect();
        for pair in convs.chunks(2) {
            let branch = grow(&grow(&s, pair[0]), pair[1]);
            s = s.union(&branch).copied().collect();
        }
        s
    };
    let local = path(|s| matches!(s, Stage::Local { .. }));
    let global = path(|s| matches!(s, Stage::Global { .. }));
    let n = layers.len();
    let fused = grow(&local.union(&global).copied().collect(), &layers[n - 2]);
    let skip = grow(&origin, &layers[n - 1]);
    let full: Set = fused.union(&skip).copied().collect();
    (extent(&full), extent(&local), extent(&global))
}

#[test]
fn impulse_receptive_field_matches_oracles() {
    // Zero-initialised block outputs would hide the branches from the probe.
    let net = Dwan::new(DwanSpec {
        init: InitScheme::He,
        ..DwanSpec::default()
    })
    .unwrap();
    let (full, local, global) = propagated_rf(net.layers());
    assert_eq!((full, local, global), (73, 19, 71));
    assert_eq!(net.receptive_field(), full);
    assert_eq!(empirical_rf(&net, 161, |n| n.output), full);
    assert_eq!(empirical_rf(&net, 161, |n| n.local), local);
    assert_eq!(empirical_rf(&net, 161, |n| n.global), global);
}

#[test]
fn shifting_a_pattern_shifts_the_output() {
    let net = Dwan::new(DwanSpec {
        base_channels: 4,
        expansion_channels: 8,
        init: InitScheme::He,
        ..DwanSpec::default()
    })
    .unwrap();
    let p = net.init::<f32>(2);
    let n = 101;
    let place = |oy: usize, ox: usize| {
        let mut t = Tensor::<f32>::zeros(&[1, 1, n, n]);
        let mut rng = seed::rng(8);
        for y in 0..3 {
            for x in 0..3 {
                t.set(&[0, 0, oy + y, ox + x], rng.random_range(0.5f32..1.5));
            }
        }
        t
    };
    let (dy, dx) = (3usize, 2usize);
    let a = net.forward(&p, &place(48, 48)).unwrap();
    let b = net.forward(&p, &place(48 + dy, 48 - dx)).unwrap();
    for y in 0..n - dy {
        for x in dx..n {
            let va = a.at(&[0, 0, y, x]);
            let vb = b.at(&[0, 0, y + dy, x - dx]);
            assert_eq!(va.to_bits(), vb.to_bits(), "({y},{x})");
        }
    }
}
