use proptest::prelude::*;
use qgan_models::{
    build_first_qres_block, build_gan, build_qres_block, build_real_twin, BlockMode, Domain, Family, LinearKind,
    ModelBuilder, ModelSpec, NormKind, Role, SigmaMonitor, SnKind,
};
use qgan_nn::layers::{qconv2d_forward, split_pool};
use qgan_nn::norm::construct_real_matrix;
use qgan_nn::{Algebra, BnMode, ConvConfig, PoolKind, QWeight};
use qgan_quat::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn within(got: usize, want: usize, rel: f64) -> bool {
    (got as f64 - want as f64).abs() <= rel * want as f64
}

fn counts(name: &str) -> (usize, usize, usize, usize) {
    let spec = ModelSpec::preset(name).unwrap();
    let (g, d) = build_gan::<f32>(&spec, 0).unwrap();
    let (tg, td) = build_real_twin::<f32>(&spec, 0).unwrap();
    (
        g.count_parameters(),
        d.count_parameters(),
        tg.count_parameters(),
        td.count_parameters(),
    )
}

/// Quaternion/real ratio over everything except the real-valued first
/// dense layer of the generator, which both models share.
fn hypercomplex_ratio(name: &str) -> f64 {
    let spec = ModelSpec::preset(name).unwrap();
    let (g, d) = build_gan::<f32>(&spec, 0).unwrap();
    let (tg, td) = build_real_twin::<f32>(&spec, 0).unwrap();
    let shared = |m: &qgan_models::Model<f32>| {
        m.store
            .iter()
            .filter(|(_, p)| p.name.starts_with("g.fc") && spec.family == Family::Sngan)
            .map(|(_, p)| p.value.numel())
            .sum::<usize>()
    };
    let q = g.count_parameters() + d.count_parameters() - shared(&g);
    let r = tg.count_parameters() + td.count_parameters() - shared(&tg);
    q as f64 / r as f64
}

#[test]
fn full_scale_parameter_counts() {
    let (g, d, tg, td) = counts("qsngan-128");
    assert_eq!(g, 9_631_204);
    assert!(within(d, 7_264_901, 0.02), "D = {d}");
    assert!(within(tg, 32_150_787, 0.02), "real G = {tg}");
    let ratio = (g + d) as f64 / (tg + td) as f64;
    assert!(ratio > 0.24 && ratio <= 0.30, "ratio {ratio}");
}

#[test]
fn reduced_parameter_counts() {
    let (g, d, _, _) = counts("qsngan-stl");
    assert!(within(g + d, 5_545_188, 0.02), "STL total {}", g + d);
    let (g, d, _, _) = counts("qsngan-cifar");
    assert!(g + d < 2_000_000, "CIFAR total {}", g + d);
}

#[test]
fn hypercomplex_layers_use_a_quarter_of_the_parameters() {
    for name in ModelSpec::preset_names() {
        let r = hypercomplex_ratio(name);
        assert!(r > 0.24 && r < 0.31, "{name}: {r}");
    }
}

#[test]
fn dense_layer_counts() {
    let mut b = ModelBuilder::<f64>::new(Algebra::Quaternion, NormKind::None, None, 0);
    b.linear("q", LinearKind::Dense, Algebra::Quaternion, 64, 64, true)
        .unwrap();
    assert_eq!(b.store.num_scalars(), 1088);
    let mut b = ModelBuilder::<f64>::new(Algebra::Real, NormKind::None, None, 0);
    b.linear("r", LinearKind::Dense, Algebra::Real, 64, 64, true).unwrap();
    assert_eq!(b.store.num_scalars(), 4160);
}

fn weight_count(alg: Algebra, kind: LinearKind, cin: usize, cout: usize) -> (usize, usize) {
    let mut b = ModelBuilder::<f32>::new(alg, NormKind::None, None, 1);
    b.linear("l", kind, alg, cin, cout, true).unwrap();
    let (w, bias) = (
        b.store.get(qgan_nn::ParamId(0)).numel(),
        b.store.get(qgan_nn::ParamId(1)).numel(),
    );
    (w, bias)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quarter_law(ci in 2usize..=64, co in 2usize..=64, k in 0usize..3) {
        let (cin, cout) = (4 * ci, 4 * co);
        let kind = match k {
            0 => LinearKind::Dense,
            1 => LinearKind::Conv(ConvConfig::same3()),
            _ => LinearKind::ConvTranspose(ConvConfig::new(4, 2, 1).unwrap()),
        };
        let (qw, qb) = weight_count(Algebra::Quaternion, kind, cin, cout);
        let (rw, rb) = weight_count(Algebra::Real, kind, cin, cout);
        prop_assert_eq!(4 * qw, rw);
        prop_assert_eq!(qb, rb);
    }
}

fn toy(name: &str) -> ModelSpec {
    ModelSpec::preset(name).unwrap()
}

fn noise(batch: usize, dim: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, batch, dim], |_| rng.gen_range(-2.0..2.0))
}

fn images(batch: usize, size: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[1, batch, 4, size, size], |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn shape_contracts() {
    for name in ["qsngan-toy", "qdcgan-toy", "qdcgan-32", "qsngan-cifar"] {
        let spec = toy(name);
        for domain in [Domain::Quaternion, Domain::Real] {
            let spec = spec.with_domain(domain);
            let (mut g, mut d) = build_gan::<f64>(&spec, 3).unwrap();
            assert_eq!((g.role, d.role), (Role::Generator, Role::Discriminator));
            let x = g.forward_tensor(&noise(2, spec.noise_dim, 1), BnMode::Train).unwrap();
            let s = spec.image_size;
            assert_eq!(x.shape(), &[1, 2, 4, s, s], "{name} {domain:?}");
            assert_eq!(g.output_shape(2).unwrap(), x.shape());
            assert!(x.data().iter().all(|v| v.abs() < 1.0));
            let y = d.forward_tensor(&x, BnMode::Train).unwrap();
            assert_eq!(d.output_shape(2).unwrap(), y.shape());
            match spec.family {
                Family::Sngan => assert_eq!(y.shape(), &[1, 2, 1]),
                Family::Dcgan => {
                    assert_eq!(y.numel(), 2 * domain.algebra().components());
                    assert!(d.outputs_probabilities());
                    assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
                }
            }
        }
    }
}

#[test]
fn eval_mode_uses_running_statistics() {
    let spec = toy("qsngan-toy");
    let (mut g, _) = build_gan::<f64>(&spec, 3).unwrap();
    assert!(g.forward_tensor(&noise(2, 128, 1), BnMode::Eval).is_err());
    g.forward_tensor(&noise(4, 128, 1), BnMode::Train).unwrap();
    let a = g.forward_tensor(&noise(4, 128, 2), BnMode::Eval).unwrap();
    let b = g.forward_tensor(&noise(4, 128, 2), BnMode::Eval).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wrong_input_is_rejected() {
    let (mut g, mut d) = build_gan::<f64>(&toy("qsngan-toy"), 0).unwrap();
    assert!(g.forward_tensor(&noise(2, 64, 0), BnMode::Train).is_err());
    assert!(d.forward_tensor(&images(2, 8, 0), BnMode::Train).is_err());
    let mut spec = toy("qsngan-toy");
    spec.family = Family::Dcgan;
    assert!(qgan_models::build_qsngan::<f64>(&spec, 0).is_err());
}

fn block_model(layer: qgan_models::Layer, b: ModelBuilder<f64>, cin_q: usize, size: usize) -> qgan_models::Model<f64> {
    let spec = toy("qsngan-toy");
    b.finish_with_components(Role::Discriminator, &spec, vec![layer], 4, vec![cin_q, size, size])
}

fn quaternion_input(cq: usize, size: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[4, 2, cq, size, size], |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn block_shapes() {
    let mut b = ModelBuilder::<f64>::new(Algebra::Quaternion, NormKind::Qbn, None, 0);
    let l = build_qres_block(&mut b, "g", 16, 8, BlockMode::GenUpsample).unwrap();
    let mut m = block_model(l, b, 4, 4);
    assert_eq!(
        m.forward_tensor(&quaternion_input(4, 4, 0), BnMode::Train)
            .unwrap()
            .shape(),
        &[4, 2, 2, 8, 8]
    );

    let mut b = ModelBuilder::<f64>::new(Algebra::Quaternion, NormKind::None, None, 0);
    let l = build_qres_block(&mut b, "r", 8, 8, BlockMode::DiscRefine).unwrap();
    let mut m = block_model(l, b, 2, 6);
    assert_eq!(
        m.forward_tensor(&quaternion_input(2, 6, 0), BnMode::Train)
            .unwrap()
            .shape(),
        &[4, 2, 2, 6, 6]
    );

    let mut b = ModelBuilder::<f64>::new(Algebra::Quaternion, NormKind::None, None, 0);
    let l = build_first_qres_block(&mut b, "f", 4, 12).unwrap();
    let mut m = block_model(l, b, 1, 8);
    assert_eq!(
        m.forward_tensor(&quaternion_input(1, 8, 0), BnMode::Train)
            .unwrap()
            .shape(),
        &[4, 2, 3, 4, 4]
    );

    let mut b = ModelBuilder::<f64>::new(Algebra::Quaternion, NormKind::None, None, 0);
    assert!(build_qres_block(&mut b, "bad", 6, 8, BlockMode::DiscRefine).is_err());
}

fn qweight(m: &qgan_models::Model<f64>, name: &str) -> QWeight<f64> {
    let w = m.store.get(m.store.find(&format!("{name}.w")).unwrap()).clone();
    let b = m.store.get(m.store.find(&format!("{name}.b")).unwrap()).clone();
    QWeight::new(w, Some(b)).unwrap()
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn shortcut_only_block_is_a_pooled_pointwise_conv() {
    let mut b = ModelBuilder::<f64>::new(Algebra::Quaternion, NormKind::None, None, 5);
    let l = build_qres_block(&mut b, "blk", 8, 16, BlockMode::DiscDownsample).unwrap();
    let mut m = block_model(l, b, 2, 8);
    for p in ["blk.conv2.w", "blk.conv2.b"] {
        let id = m.store.find(p).unwrap();
        m.store.get_mut(id).data_mut().fill(0.0);
    }
    let x = quaternion_input(2, 8, 9);
    let got = m.forward_tensor(&x, BnMode::Train).unwrap();
    let direct = qconv2d_forward(&x, &qweight(&m, "blk.shortcut"), ConvConfig::pointwise()).unwrap();
    let want = split_pool(&direct, PoolKind::Average, 2).unwrap();
    assert!(max_diff(&got, &want) < 1e-12);
}

#[test]
fn first_block_with_identity_shortcut_sums_both_paths() {
    let mut b = ModelBuilder::<f64>::new(Algebra::Quaternion, NormKind::None, None, 6);
    let l = build_first_qres_block(&mut b, "f", 8, 8).unwrap();
    let mut m = block_model(l, b, 2, 8);
    let id = QWeight::<f64>::identity_conv1x1(2);
    *m.store.get_mut(m.store.find("f.shortcut.w").unwrap()) = id.weight.clone();
    let x = quaternion_input(2, 8, 4);
    let got = m.forward_tensor(&x, BnMode::Train).unwrap();

    let c3 = ConvConfig::same3();
    let h = qconv2d_forward(&x, &qweight(&m, "f.conv1"), c3).unwrap();
    let h = qgan_nn::layers::split_activation(&h, qgan_nn::Activation::Relu);
    let h = qconv2d_forward(&h, &qweight(&m, "f.conv2"), c3).unwrap();
    let mut want = split_pool(&h, PoolKind::Average, 2).unwrap();
    want.add_assign(&split_pool(&x, PoolKind::Average, 2).unwrap()).unwrap();
    assert!(max_diff(&got, &want) < 1e-12);
}

#[test]
fn twin_has_four_times_the_dense_weights() {
    let (qw, _) = weight_count(Algebra::Quaternion, LinearKind::Dense, 32, 48);
    let (rw, _) = weight_count(Algebra::Real, LinearKind::Dense, 32, 48);
    assert_eq!(4 * qw, rw);
}

#[test]
fn spectral_normalization_covers_every_critic_weight() {
    let spec = toy("qsngan-toy");
    let (g, d) = build_gan::<f64>(&spec, 2).unwrap();
    assert!(g.spectral.is_empty());
    assert_eq!(d.spectral.len(), d.linear_weights().len());
    let mut monitor = SigmaMonitor::new(&d, 1, 200, 1).unwrap();
    let r = monitor.observe(&d).unwrap();
    for (i, &s) in r.full.iter().enumerate() {
        assert!((s - 1.0).abs() < 1e-2, "weight {i}: sigma {s}");
    }
    // The monitor agrees with an SVD of the constructed matrix.
    let w = d.effective_weight(d.linear_weights()[2]).unwrap();
    let (m, rows, cols) = construct_real_matrix(&w).unwrap();
    let svd = nalgebra::DMatrix::from_row_slice(rows, cols, &m)
        .singular_values()
        .max();
    assert!((svd - r.full[2]).abs() < 1e-3 * svd);

    let (_, d) = build_gan::<f64>(&spec.with_sn(SnKind::None), 2).unwrap();
    assert!(d.spectral.is_empty());
    let mut monitor = SigmaMonitor::new(&d, 1, 100, 1).unwrap();
    assert!(monitor.observe(&d).unwrap().max_full() > 1.05);
}

#[test]
fn building_is_deterministic() {
    let spec = toy("qsngan-toy");
    let (a, _) = build_gan::<f32>(&spec, 11).unwrap();
    let (b, _) = build_gan::<f32>(&spec, 11).unwrap();
    let (c, _) = build_gan::<f32>(&spec, 12).unwrap();
    assert!(a.store.ids().all(|i| a.store.get(i) == b.store.get(i)));
    assert!(a.store.ids().any(|i| a.store.get(i) != c.store.get(i)));
}
