//! Named finite-difference checks over layers, normalization, losses and
//! whole models, used by the `grad-check` command.

use qgan_models::losses::{cross_entropy_node, directional_penalty_node, hinge_d_node, neg_mean_node};
use qgan_models::{build_gan, Domain, Family, ModelSpec, NormKind, SnKind};
use qgan_nn::{
    grad_check, grad_check_smooth, Activation, Algebra, BnMode, ConvConfig, GradCheckOptions, GradCheckReport, NnError,
    NodeId, ParamId, ParamStore, PoolKind, SnMode, SpectralNorm, Tape,
};
use qgan_quat::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{HarnessError, Result};

pub const MODULES: [&str; 4] = ["layers", "norm", "losses", "models"];

type NnResult<T> = qgan_nn::Result<T>;
type Build = dyn Fn(&mut Tape<f64>, &[NodeId]) -> NnResult<NodeId>;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: String,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passed() && self.report.entries.iter().all(|e| e.checked > 0) && !self.report.entries.is_empty()
    }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Checks `sum(build(params) * r)` for a fixed random `r`.
fn check_op(seed: u64, shapes: &[(&str, &[usize])], build: &Build) -> NnResult<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .map(|(n, s)| store.add(*n, s[0], rand_tensor(s, &mut rng)))
        .collect();
    let proj = seed ^ 0x5eed;
    grad_check(
        &mut store,
        &ids,
        |tape, st| {
            let nodes: Vec<NodeId> = ids.iter().map(|&p| tape.param(st, p)).collect();
            let y = build(tape, &nodes)?;
            let r = tape.constant(rand_tensor(tape.value(y).shape(), &mut ChaCha8Rng::seed_from_u64(proj)));
            let prod = tape.mul(y, r)?;
            tape.sum(prod)
        },
        GradCheckOptions::default(),
    )
}

fn smooth(shapes: &[(&str, &[usize])], build: &Build) -> Result<GradCheckReport> {
    Ok(grad_check_smooth(1e-4, 50, |seed| check_op(seed, shapes, build))?)
}

fn to_nn(e: qgan_models::ModelError) -> NnError {
    match e {
        qgan_models::ModelError::Nn(e) => e,
        other => NnError::Config(other.to_string()),
    }
}

fn small_sngan(domain: Domain, sn: SnKind) -> ModelSpec {
    ModelSpec {
        name: "sngan-8".into(),
        family: Family::Sngan,
        domain,
        noise_dim: 8,
        base_spatial: 4,
        g_filters: vec![8, 4],
        d_filters: vec![4, 8],
        d_downsample: vec![true, false],
        image_size: 8,
        image_channels: 4,
        norm: NormKind::Qbn,
        sn,
    }
}

type Head = dyn Fn(&mut Tape<f64>, NodeId) -> qgan_models::Result<NodeId>;

/// Every parameter of a model through `head`, with inputs resampled until
/// no kink is nearby.
fn check_model(model: &qgan_models::Model<f64>, input: &[usize], head: &Head) -> Result<GradCheckReport> {
    let opts = GradCheckOptions {
        max_entries: 12,
        ..GradCheckOptions::default()
    };
    Ok(grad_check_smooth(1e-4, 40, |seed| {
        let mut m = model.clone();
        let mut store = m.store.clone();
        let ids: Vec<ParamId> = store.ids().collect();
        let x = rand_tensor(input, &mut ChaCha8Rng::seed_from_u64(seed));
        grad_check(
            &mut store,
            &ids,
            |tape, st| {
                let xn = tape.constant(x.clone());
                let y = m.forward_with(st, tape, xn, BnMode::Train).map_err(to_nn)?;
                head(tape, y).map_err(to_nn)
            },
            opts,
        )
    })?)
}

fn layers() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for alg in [Algebra::Quaternion, Algebra::Real] {
        let k = alg.components();
        out.push((
            format!("dense {alg:?}"),
            smooth(&[("x", &[k, 3, 5]), ("w", &[k, 4, 5]), ("b", &[k, 4])], &move |t, n| {
                t.dense(alg, n[0], n[1], Some(n[2]))
            })?,
        ));
    }
    for (k, s, p) in [(3, 1, 1), (4, 2, 1)] {
        let cfg = ConvConfig::new(k, s, p)?;
        out.push((
            format!("conv2d k{k} s{s}"),
            smooth(
                &[("x", &[4, 2, 2, 6, 6]), ("w", &[4, 3, 2, k, k]), ("b", &[4, 3])],
                &move |t, n| t.conv2d(Algebra::Quaternion, cfg, n[0], n[1], Some(n[2])),
            )?,
        ));
        out.push((
            format!("conv_transpose2d k{k} s{s}"),
            smooth(
                &[("x", &[4, 2, 2, 3, 3]), ("w", &[4, 2, 3, k, k]), ("b", &[4, 3])],
                &move |t, n| t.conv_transpose2d(Algebra::Quaternion, cfg, n[0], n[1], Some(n[2])),
            )?,
        ));
    }
    for a in [
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
    ] {
        out.push((
            format!("activation {a:?}"),
            smooth(&[("x", &[4, 3, 2])], &move |t, n| t.activation(a, n[0]))?,
        ));
    }
    out.push((
        "upsample".into(),
        smooth(&[("x", &[4, 2, 2, 4, 4])], &|t, n| t.upsample(n[0], 2))?,
    ));
    out.push((
        "average pool".into(),
        smooth(&[("x", &[4, 2, 2, 4, 4])], &|t, n| t.pool(n[0], PoolKind::Average, 2))?,
    ));
    out.push((
        "global sum pool".into(),
        smooth(&[("x", &[4, 2, 2, 3, 3])], &|t, n| t.global_sum_pool(n[0]))?,
    ));
    out.push((
        "guided max pool".into(),
        smooth(&[("x", &[4, 2, 2, 4, 4])], &|t, n| t.guided_max_pool(n[0], 2))?,
    ));
    Ok(out)
}

fn norm() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for k in [4, 1] {
        out.push((
            format!("batch norm K={k}"),
            smooth(
                &[("x", &[k, 4, 2, 2, 2]), ("gamma", &[2]), ("beta", &[k, 2])],
                &|t, n| t.batch_norm(n[0], n[1], n[2], 1e-5),
            )?,
        ));
    }
    for mode in [SnMode::Full, SnMode::Split] {
        let shape = [4usize, 3, 2, 3, 3];
        let mut sn = SpectralNorm::<f64>::new(mode, &shape, 9)?;
        let w = rand_tensor(&shape, &mut ChaCha8Rng::seed_from_u64(3));
        sn.set_power_iters(5);
        sn.update(&w)?;
        let (u, v) = sn.vectors();
        out.push((
            format!("spectral scale {mode:?}"),
            smooth(&[("w", &shape)], &move |t, n| {
                t.spectral_scale(n[0], mode, u.clone(), v.clone())
            })?,
        ));
    }
    Ok(out)
}

fn losses() -> Result<Vec<(String, GradCheckReport)>> {
    let lift = |r: qgan_models::Result<NodeId>| r.map_err(to_nn);
    let mut out = Vec::new();
    out.push((
        "hinge".into(),
        smooth(&[("real", &[1, 6, 1]), ("fake", &[1, 6, 1])], &move |t, n| {
            lift(hinge_d_node(t, n[0], n[1]))
        })?,
    ));
    out.push((
        "generator mean".into(),
        smooth(&[("fake", &[1, 6, 1])], &move |t, n| lift(neg_mean_node(t, n[0])))?,
    ));
    for target in [1.0, 0.0] {
        out.push((
            format!("cross entropy target {target}"),
            smooth(&[("logits", &[4, 5, 1])], &move |t, n| {
                let p = t.activation(Activation::Sigmoid, n[0])?;
                lift(cross_entropy_node(t, p, target))
            })?,
        ));
    }
    out.push((
        "directional penalty".into(),
        smooth(&[("plus", &[1, 6, 1]), ("minus", &[1, 6, 1])], &move |t, n| {
            lift(directional_penalty_node(t, n[0], n[1], 0.5, 10.0))
        })?,
    ));
    Ok(out)
}

fn models() -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for domain in [Domain::Quaternion, Domain::Real] {
        let (g, d) = build_gan::<f64>(&small_sngan(domain, SnKind::Full), 4)?;
        out.push((
            format!("residual generator {domain:?}"),
            check_model(&g, &[1, 3, 8], &|t, y| {
                let s = t.square(y)?;
                Ok(t.mean(s)?)
            })?,
        ));
        out.push((
            format!("residual critic {domain:?}"),
            check_model(&d, &[1, 2, 4, 8, 8], &neg_mean_node)?,
        ));
    }
    let (g, d) = build_gan::<f64>(&ModelSpec::preset("qdcgan-toy")?, 5)?;
    out.push((
        "convolutional generator".into(),
        check_model(&g, &[1, 3, 16], &|t, y| {
            let s = t.square(y)?;
            Ok(t.sum(s)?)
        })?,
    ));
    out.push((
        "convolutional critic".into(),
        check_model(&d, &[1, 3, 4, 8, 8], &|t, y| cross_entropy_node(t, y, 1.0))?,
    ));
    Ok(out)
}

/// Runs the checks of one module, or of all of them.
pub fn run(module: Option<&str>) -> Result<Vec<CheckResult>> {
    let selected: Vec<&'static str> = match module {
        None => MODULES.to_vec(),
        Some(m) => vec![*MODULES
            .iter()
            .find(|&&n| n == m)
            .ok_or_else(|| HarnessError::Config(format!("unknown module `{m}` (one of {})", MODULES.join(", "))))?],
    };
    let mut out = Vec::new();
    for m in selected {
        let checks = match m {
            "layers" => layers()?,
            "norm" => norm()?,
            "losses" => losses()?,
            _ => models()?,
        };
        out.extend(checks.into_iter().map(|(name, report)| CheckResult {
            module: m,
            name,
            report,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn losses_pass() {
        let r = run(Some("losses")).unwrap();
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(CheckResult::passed), "{r:?}");
        assert!(run(Some("nope")).is_err());
    }
}
