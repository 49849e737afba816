use proptest::prelude::*;
use qgan_nn::{
    grad_check, grad_check_smooth, Activation, Algebra, ConvConfig, GradCheckOptions, GradCheckReport, NodeId, ParamId,
    ParamStore, PoolKind, Result, SnMode, SpectralNorm, Tape,
};
use qgan_quat::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Parameters named after their role, plus a random projection making the
/// output a scalar `sum(y * r)`.
struct Case {
    store: ParamStore<f64>,
    ids: Vec<ParamId>,
    proj_seed: u64,
}

impl Case {
    fn new(seed: u64, shapes: &[(&str, &[usize])]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = shapes
            .iter()
            .map(|(name, s)| store.add(*name, s[0], rand_tensor(s, &mut rng, 1.0)))
            .collect();
        Case {
            store,
            ids,
            proj_seed: seed ^ 0x5eed,
        }
    }

    fn check(mut self, build: impl Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>) -> Result<GradCheckReport> {
        let ids = self.ids.clone();
        let seed = self.proj_seed;
        grad_check(
            &mut self.store,
            &ids,
            |tape, store| {
                let nodes: Vec<NodeId> = ids.iter().map(|&p| tape.param(store, p)).collect();
                let y = build(tape, &nodes)?;
                let shape = tape.value(y).shape().to_vec();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let r = tape.constant(rand_tensor(&shape, &mut rng, 1.0));
                let prod = tape.mul(y, r)?;
                tape.sum(prod)
            },
            GradCheckOptions::default(),
        )
    }
}

fn assert_passes(r: GradCheckReport) {
    assert!(r.passed(), "max error {} in {:?}", r.max_error(), r.entries);
}

fn smooth(shapes: &[(&str, &[usize])], build: impl Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId> + Copy) {
    let r = grad_check_smooth(1e-4, 50, |seed| Case::new(seed, shapes).check(build)).unwrap();
    assert_passes(r);
}

#[test]
fn dense_quaternion_and_real() {
    for alg in [Algebra::Quaternion, Algebra::Real] {
        let k = alg.components();
        smooth(&[("x", &[k, 3, 5]), ("w", &[k, 4, 5]), ("b", &[k, 4])], move |t, n| {
            t.dense(alg, n[0], n[1], Some(n[2]))
        });
    }
}

#[test]
fn qdense_with_split_relu() {
    smooth(&[("x", &[4, 2, 3]), ("w", &[4, 2, 3])], |t, n| {
        let y = t.dense(Algebra::Quaternion, n[0], n[1], None)?;
        t.activation(Activation::Relu, y)
    });
}

#[test]
fn convolutions() {
    for (k, s, p) in [(3, 1, 1), (4, 2, 1), (1, 1, 0)] {
        let cfg = ConvConfig::new(k, s, p).unwrap();
        smooth(
            &[("x", &[4, 2, 2, 6, 6]), ("w", &[4, 3, 2, k, k]), ("b", &[4, 3])],
            move |t, n| t.conv2d(Algebra::Quaternion, cfg, n[0], n[1], Some(n[2])),
        );
        smooth(
            &[("x", &[4, 2, 2, 3, 3]), ("w", &[4, 2, 3, k, k]), ("b", &[4, 3])],
            move |t, n| t.conv_transpose2d(Algebra::Quaternion, cfg, n[0], n[1], Some(n[2])),
        );
    }
    let cfg = ConvConfig::same3();
    smooth(&[("x", &[1, 2, 3, 4, 4]), ("w", &[1, 2, 3, 3, 3])], move |t, n| {
        t.conv2d(Algebra::Real, cfg, n[0], n[1], None)
    });
}

#[test]
fn split_activations() {
    for a in [
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
    ] {
        smooth(&[("x", &[4, 3, 2])], move |t, n| t.activation(a, n[0]));
    }
}

#[test]
fn elementwise_and_reductions() {
    smooth(&[("a", &[4, 3]), ("b", &[4, 3])], |t, n| {
        let s = t.add(n[0], n[1])?;
        let m = t.mul(s, n[0])?;
        let q = t.square(m)?;
        let a = t.abs(q)?;
        let f = t.affine(a, -1.5, 0.25)?;
        let mean = t.mean(f)?;
        let sum = t.sum(n[1])?;
        t.add(mean, sum)
    });
    smooth(&[("x", &[4, 2, 3])], |t, n| t.abs(n[0]));
}

#[test]
fn pooling_and_resampling() {
    smooth(&[("x", &[4, 2, 2, 4, 4])], |t, n| t.upsample(n[0], 2));
    smooth(&[("x", &[4, 2, 2, 4, 4])], |t, n| t.pool(n[0], PoolKind::Average, 2));
    smooth(&[("x", &[1, 2, 2, 4, 4])], |t, n| t.pool(n[0], PoolKind::Sum, 2));
    smooth(&[("x", &[4, 2, 2, 3, 3])], |t, n| t.global_sum_pool(n[0]));
    smooth(&[("x", &[4, 2, 2, 4, 4])], |t, n| t.guided_max_pool(n[0], 2));
}

#[test]
fn batch_norm_with_batch_statistics() {
    for k in [4, 1] {
        smooth(
            &[("x", &[k, 4, 2, 2, 2]), ("gamma", &[2]), ("beta", &[k, 2])],
            |t, n| t.batch_norm(n[0], n[1], n[2], 1e-5),
        );
    }
    smooth(&[("x", &[4, 3, 2]), ("gamma", &[2]), ("beta", &[4, 2])], |t, n| {
        t.batch_norm_fixed(
            n[0],
            n[1],
            n[2],
            1e-5,
            vec![0.1, -0.2, 0.3, 0.0, 0.5, 0.2, -0.1, 0.4],
            vec![1.5, 0.7],
        )
    });
}

#[test]
fn spectral_scaling() {
    for mode in [SnMode::Full, SnMode::Split] {
        for shape in [&[4usize, 3, 2, 3, 3][..], &[1, 4, 5][..], &[4, 2, 3][..]] {
            let mut sn = SpectralNorm::<f64>::new(mode, shape, 9).unwrap();
            let w = Case::new(3, &[("w", shape)]).store.get(ParamId(0)).clone();
            sn.set_power_iters(3);
            sn.update(&w).unwrap();
            let (u, v) = sn.vectors();
            let r = Case::new(3, &[("w", shape)])
                .check(move |t, n| t.spectral_scale(n[0], mode, u.clone(), v.clone()))
                .unwrap();
            assert_passes(r);
        }
    }
}

#[test]
fn layout_ops() {
    smooth(&[("x", &[1, 2, 8, 2])], |t, n| t.to_quaternion(n[0]));
    smooth(&[("x", &[4, 2, 2, 2])], |t, n| t.to_real(n[0]));
    smooth(&[("x", &[4, 3, 2])], |t, n| t.sum_components(n[0]));
    smooth(&[("x", &[4, 3, 2])], |t, n| t.reshape(n[0], &[4, 6]));
}

#[test]
fn cross_entropy() {
    let r = Case::new(1, &[("e", &[4, 3, 2]), ("t", &[4, 3, 2])])
        .check(|t, n| {
            let e = t.activation(Activation::Sigmoid, n[0])?;
            let tg = t.activation(Activation::Sigmoid, n[1])?;
            t.cross_entropy(e, tg, 1e-7)
        })
        .unwrap();
    assert_passes(r);
}

#[test]
fn affine_map_has_roundoff_error_only() {
    let r = Case::new(2, &[("x", &[4, 5])])
        .check(|t, n| t.affine(n[0], 3.0, 1.0))
        .unwrap();
    assert!(r.max_error() < 1e-8);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", 1, Tensor::full(&[1, 2], 1.0));
    let b = store.add("b", 1, Tensor::full(&[1, 2], 1.0));
    let mut tape = Tape::new();
    let an = tape.param(&store, a);
    let _ = tape.param(&store, b);
    let l = tape.sum(an).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.param_or_zeros(&store, b).data(), &[0.0, 0.0]);
}

fn conv_net(tape: &mut Tape<f64>, store: &ParamStore<f64>) -> NodeId {
    let x = tape.param(store, ParamId(0));
    let w = tape.param(store, ParamId(1));
    let y = tape
        .conv2d(Algebra::Quaternion, ConvConfig::same3(), x, w, None)
        .unwrap();
    let y = tape.activation(Activation::LeakyRelu(0.2), y).unwrap();
    let y = tape.pool(y, PoolKind::Average, 2).unwrap();
    let y = tape.square(y).unwrap();
    tape.mean(y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn backward_is_linear_in_upstream(seed in 0u64..1000, scale in 0.1f64..5.0) {
        let c = Case::new(seed, &[("x", &[4, 1, 2, 4, 4]), ("w", &[4, 2, 2, 3, 3])]);
        let mut tape = Tape::new();
        let l = conv_net(&mut tape, &c.store);
        let g1 = tape.backward_with(l, 1.0).unwrap();
        let g2 = tape.backward_with(l, scale).unwrap();
        for id in [ParamId(0), ParamId(1)] {
            for (a, b) in g1.param(id).unwrap().data().iter().zip(g2.param(id).unwrap().data()) {
                prop_assert!((scale * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn backward_is_deterministic(seed in 0u64..1000) {
        let c = Case::new(seed, &[("x", &[4, 1, 2, 4, 4]), ("w", &[4, 2, 2, 3, 3])]);
        let run = || {
            let mut tape = Tape::new();
            let l = conv_net(&mut tape, &c.store);
            tape.backward(l).unwrap().param(ParamId(1)).unwrap().clone()
        };
        let (a, b) = (run(), run());
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
