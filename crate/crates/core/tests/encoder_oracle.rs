//! The vectorized encoder against a per-node loop written straight from
//! the definition, plus the structural properties that follow from it.

use gradevae::bigraph::{decompose, BipartiteGraph, Edge};
use gradevae::model::{encode, init_params, predict, ModelDims, ModelParams, NormalizedAdjacency};
use gradevae::numerics::{DenseMatrix, Rng};

fn random_graph(rng: &mut Rng, m: usize, n: usize, density: f64) -> BipartiteGraph {
    let mut edges = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if rng.uniform() < density {
                edges.push(Edge {
                    student: i,
                    course: j,
                    level: rng.below(10) as u8 + 1,
                });
            }
        }
    }
    BipartiteGraph::new(
        (0..m).map(|i| format!("s{i}")).collect(),
        (0..n).map(|j| format!("c{j}")).collect(),
        edges,
    )
    .unwrap()
}

/// `h[v] = ReLU(Σ_r (1/deg v) Σ_{u ~_r v} x[u] · W_r)`, one node at a time.
fn naive_layer(g: &BipartiteGraph, input: &DenseMatrix, weights: &[DenseMatrix]) -> DenseMatrix {
    let m = g.m();
    let nodes = g.node_count();
    let width = weights[0].cols();
    let mut out = DenseMatrix::zeros(nodes, width);
    for v in 0..nodes {
        // (neighbour, level) lists straight from the edge list.
        let nbrs: Vec<(usize, u8)> = g
            .edges()
            .iter()
            .filter_map(|e| {
                if e.student == v {
                    Some((m + e.course, e.level))
                } else if m + e.course == v {
                    Some((e.student, e.level))
                } else {
                    None
                }
            })
            .collect();
        if nbrs.is_empty() {
            continue;
        }
        let deg = nbrs.len() as f64;
        let mut acc = vec![0.0; width];
        for (u, level) in nbrs {
            let w = &weights[usize::from(level) - 1];
            for c in 0..width {
                let mut s = 0.0;
                for k in 0..input.cols() {
                    s += input[(u, k)] * w[(k, c)];
                }
                acc[c] += s / deg;
            }
        }
        for c in 0..width {
            out.row_mut(v)[c] = acc[c].max(0.0);
        }
    }
    out
}

fn naive_encode(g: &BipartiteGraph, p: &ModelParams) -> (DenseMatrix, DenseMatrix, DenseMatrix) {
    let mut h = p.x.clone();
    for layer in &p.gcn {
        h = naive_layer(g, &h, layer);
    }
    let mean = DenseMatrix::from_fn(h.rows(), p.w_mean.cols(), |v, c| {
        (0..h.cols()).map(|k| h[(v, k)] * p.w_mean[(k, c)]).sum()
    });
    let log_std = DenseMatrix::from_fn(h.rows(), p.w_log_std.cols(), |v, c| {
        (0..h.cols()).map(|k| h[(v, k)] * p.w_log_std[(k, c)]).sum()
    });
    (h, mean, log_std)
}

#[test]
fn matches_per_node_evaluator() {
    let mut rng = Rng::new(2024);
    for trial in 0..10 {
        let m = 3 + rng.below(6);
        let n = 2 + rng.below(5);
        let g = random_graph(&mut rng, m, n, 0.5);
        let dims = ModelDims {
            nodes: g.node_count(),
            features: 2 + rng.below(5),
            hidden: 2 + rng.below(5),
            latent: 1 + rng.below(4),
            depth: 1 + trial % 2,
        };
        let p = init_params(dims, trial as u64).unwrap();
        let ctx = NormalizedAdjacency::new(decompose(&g));
        let enc = encode(&ctx, &p, None, false).unwrap();
        let (h, mean, log_std) = naive_encode(&g, &p);
        for (name, a, b) in [
            ("hidden", &enc.hidden, &h),
            ("z_mean", &enc.z_mean, &mean),
            ("z_log_std", &enc.z_log_std, &log_std),
        ] {
            let diff = a.max_abs_diff(b);
            assert!(diff < 1e-12, "trial {trial} {name}: {diff:e}");
        }
    }
}

#[test]
fn isolated_nodes_encode_to_zero() {
    let g = BipartiteGraph::new(
        vec!["a".into(), "b".into(), "lonely".into()],
        vec!["x".into(), "y".into()],
        vec![
            Edge { student: 0, course: 0, level: 3 },
            Edge { student: 1, course: 0, level: 9 },
        ],
    )
    .unwrap();
    let p = init_params(ModelDims::new(g.node_count()), 1).unwrap();
    let enc = encode(&NormalizedAdjacency::new(decompose(&g)), &p, None, false).unwrap();
    for v in [2, 4] {
        assert!(enc.hidden.row(v).iter().all(|&x| x == 0.0));
        assert!(enc.z_mean.row(v).iter().all(|&x| x == 0.0));
    }
}

/// Changing the features of a node more than `depth` hops from both
/// endpoints leaves the prediction bitwise unchanged.
#[test]
fn distant_features_have_no_effect() {
    let mut rng = Rng::new(5);
    for depth in [1, 2] {
        let g = random_graph(&mut rng, 12, 8, 0.18);
        let dims = ModelDims {
            depth,
            ..ModelDims::new(g.node_count())
        };
        let p = init_params(dims, 3).unwrap();
        let adj = decompose(&g);
        let ctx = NormalizedAdjacency::new(adj.clone());
        for (i, j) in [(0, 0), (5, 3), (11, 7)] {
            let hops = adj.hop_distances(&[i, g.m() + j]);
            let before = predict(&ctx, &p, &[(i, j)]).unwrap();
            for v in 0..g.node_count() {
                if hops[v].is_some_and(|h| h <= depth) {
                    continue;
                }
                let mut q = p.clone();
                q.x.row_mut(v).iter_mut().for_each(|x| *x += 1.0);
                let after = predict(&ctx, &q, &[(i, j)]).unwrap();
                assert_eq!(before.logits, after.logits, "depth {depth} pair ({i},{j}) node {v}");
            }
        }
    }
}

/// Relabelling students and courses permutes every output row the same way.
#[test]
fn permutation_equivariance() {
    let mut rng = Rng::new(9);
    let g = random_graph(&mut rng, 7, 5, 0.45);
    let (m, n) = (g.m(), g.n());
    let mut sp: Vec<usize> = (0..m).collect();
    let mut cp: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut sp);
    rng.shuffle(&mut cp);
    let edges: Vec<Edge> = g
        .edges()
        .iter()
        .map(|e| Edge {
            student: sp[e.student],
            course: cp[e.course],
            level: e.level,
        })
        .collect();
    let h = BipartiteGraph::new(
        (0..m).map(|i| format!("s{i}")).collect(),
        (0..n).map(|j| format!("c{j}")).collect(),
        edges,
    )
    .unwrap();
    let node = |v: usize| if v < m { sp[v] } else { m + cp[v - m] };

    let dims = ModelDims {
        depth: 2,
        features: 4,
        hidden: 5,
        latent: 3,
        nodes: g.node_count(),
    };
    let p = init_params(dims, 4).unwrap();
    let mut q = p.clone();
    for v in 0..g.node_count() {
        q.x.row_mut(node(v)).copy_from_slice(p.x.row(v));
        for r in 0..10 {
            q.decoder[r].row_mut(node(v)).copy_from_slice(p.decoder[r].row(v));
        }
    }
    let ea = encode(&NormalizedAdjacency::new(decompose(&g)), &p, None, false).unwrap();
    let eb = encode(&NormalizedAdjacency::new(decompose(&h)), &q, None, false).unwrap();
    for v in 0..g.node_count() {
        for (a, b) in ea.z_mean.row(v).iter().zip(eb.z_mean.row(node(v))) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let moved: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (sp[i], cp[j])).collect();
    let pa = predict(&NormalizedAdjacency::new(decompose(&g)), &p, &pairs).unwrap();
    let pb = predict(&NormalizedAdjacency::new(decompose(&h)), &q, &moved).unwrap();
    for (a, b) in pa.probs.iter().zip(&pb.probs) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
