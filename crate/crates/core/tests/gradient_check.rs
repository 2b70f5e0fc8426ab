//! Central finite differences against the hand-written backward pass, for
//! every entry of every parameter tensor.

use gradevae::bigraph::{decompose, BipartiteGraph, Edge};
use gradevae::model::{
    expected_level_gradients, init_params, loss_and_gradients, objective, LossMode, ModelDims,
    ModelParams, Noise, NormalizedAdjacency,
};
use gradevae::numerics::Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so entries whose true
/// gradient is (structurally) zero are judged on absolute error.
const FLOOR: f64 = 1e-6;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

struct Instance {
    ctx: NormalizedAdjacency,
    edges: Vec<Edge>,
    params: ModelParams,
    noise: Noise,
}

fn instance(seed: u64, depth: usize, dropout: f64) -> Instance {
    let (m, n) = (4, 3);
    let mut rng = Rng::new(seed);
    let mut edges = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if rng.uniform() < 0.6 {
                edges.push(Edge {
                    student: i,
                    course: j,
                    level: rng.below(10) as u8 + 1,
                });
            }
        }
    }
    let g = BipartiteGraph::new(
        (0..m).map(|i| format!("s{i}")).collect(),
        (0..n).map(|j| format!("c{j}")).collect(),
        edges.clone(),
    )
    .unwrap();
    let dims = ModelDims {
        nodes: m + n,
        features: 3,
        hidden: 4,
        latent: 3,
        depth,
    };
    let mut params = init_params(dims, seed).unwrap();
    // Larger weights than Glorot so every term carries real signal, but a
    // small log-std head: exp(2·logσ) otherwise swamps the loss and the
    // finite differences lose all precision.
    for (name, t) in params.named_mut() {
        t.scale(if name == "w_log_std" { 0.3 } else { 1.5 });
    }
    let noise = Noise::sample(&params, dropout, &mut Rng::new(seed + 100), &mut Rng::new(seed + 200));
    Instance {
        ctx: NormalizedAdjacency::new(decompose(&g)),
        edges,
        params,
        noise,
    }
}

/// Largest relative error over all entries, with the offending tensor.
fn compare(
    params: &ModelParams,
    analytic: &ModelParams,
    f: impl Fn(&ModelParams) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    for (t, name) in names.iter().enumerate() {
        let len = params.named()[t].1.as_slice().len();
        for idx in 0..len {
            let mut plus = params.clone();
            plus.named_mut()[t].1.as_mut_slice()[idx] += STEP;
            let mut minus = params.clone();
            minus.named_mut()[t].1.as_mut_slice()[idx] -= STEP;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * STEP);
            let exact = analytic.named()[t].1.as_slice()[idx];
            let err = relative_error(exact, numeric);
            if err > worst.0 {
                worst = (err, format!("{name}[{idx}]: analytic {exact:e} numeric {numeric:e}"));
            }
        }
    }
    worst
}

fn check_loss(seed: u64, depth: usize, mode: LossMode, kl_weight: f64) {
    let inst = instance(seed, depth, 0.3);
    let (_, grads) = loss_and_gradients(&inst.ctx, &inst.params, &inst.noise, &inst.edges, mode, kl_weight)
        .unwrap();
    let f = |p: &ModelParams| {
        objective(&inst.ctx, p, &inst.noise, &inst.edges, mode, kl_weight)
            .unwrap()
            .total
    };
    let (err, at) = compare(&inst.params, &grads, f);
    assert!(err < TOLERANCE, "seed {seed} depth {depth} {mode:?}: {err:e} at {at}");
}

#[test]
fn masked_cross_entropy_gradients() {
    for seed in 0..5 {
        check_loss(seed, 1, LossMode::MaskedSoftmaxCe, 1.0);
    }
}

#[test]
fn weighted_kl_gradients() {
    for seed in 5..8 {
        check_loss(seed, 1, LossMode::MaskedSoftmaxCe, 0.37);
    }
}

#[test]
fn stacked_encoder_gradients() {
    for seed in 10..13 {
        check_loss(seed, 2, LossMode::MaskedSoftmaxCe, 1.0);
    }
}

#[test]
fn literal_bce_gradients() {
    for seed in 20..23 {
        check_loss(seed, 1, LossMode::LiteralBce, 1.0);
    }
}

#[test]
fn expected_level_gradients_match() {
    for seed in 30..33 {
        let inst = instance(seed, 1, 0.0);
        for pair in [(0, 0), (3, 2), (1, 1)] {
            let (_, grads) = expected_level_gradients(&inst.ctx, &inst.params, pair).unwrap();
            let f = |p: &ModelParams| {
                gradevae::model::predict(&inst.ctx, p, &[pair])
                    .unwrap()
                    .expected_level(0)
            };
            let (err, at) = compare(&inst.params, &grads, f);
            assert!(err < TOLERANCE, "seed {seed} {pair:?}: {err:e} at {at}");
        }
    }
}


