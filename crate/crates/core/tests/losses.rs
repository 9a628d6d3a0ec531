mod common;

use common::{graph_from_edges, random_graph, rng};
use lossbench_core::encoders::Mlp;
use lossbench_core::graph::{pagerank, pmi_matrix, PageRankOptions};
use lossbench_core::losses::{
    contrastive_loss, dae_loss, dae_noise, edge_triples, hybrid_loss, loss_params,
    pagerank_anchors, pagerank_loss, pagerank_partners, pmi_loss, total_loss, triplet_loss,
    LossTargets,
};
use lossbench_core::{
    enumerate_hybrids, grad_check, BaseLoss, CsrMatrix, Error, Graph, HybridLossSpec, LossContext,
    Tape, Tensor, VarMap,
};
use proptest::prelude::*;
use rand::Rng as _;

fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| r.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
    dot / (na * nb)
}

fn eval(
    z: &Tensor,
    f: impl FnOnce(&mut Tape, lossbench_core::Var) -> lossbench_core::Result<lossbench_core::Var>,
) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let out = f(&mut tape, v).unwrap();
    tape.value(out).item()
}

fn hinge_oracle(z: &Tensor, a: &[usize], p: &[usize], n: &[usize], m: f64) -> f64 {
    let terms: Vec<f64> = (0..a.len())
        .map(|t| (m - cos(z.row(a[t]), z.row(p[t])) + cos(z.row(a[t]), z.row(n[t]))).max(0.0))
        .collect();
    terms.iter().sum::<f64>() / terms.len() as f64
}

// ---------- PMI ----------

#[test]
fn pmi_loss_of_empty_matrix_is_zero() {
    let z = rand_tensor(4, 3, 1);
    let empty = CsrMatrix::from_triplets(4, 4, vec![]);
    assert_eq!(eval(&z, |t, v| pmi_loss(t, v, &empty)), 0.0);
}

#[test]
fn pmi_loss_two_aligned_nodes() {
    let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
    let pmi = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]);
    let v = eval(&z, |t, x| pmi_loss(t, x, &pmi));
    assert!((v + 0.5).abs() < 1e-15, "{v}");
}

#[test]
fn pmi_loss_matches_double_loop() {
    let g = random_graph(6, 0.5, 3, 0, 2);
    let z = rand_tensor(6, 4, 3);
    for clip in [true, false] {
        let pmi = pmi_matrix(&g, clip).to_dense();
        let mut expect = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                expect += pmi.get(i, j) * cos(z.row(i), z.row(j));
            }
        }
        expect *= -1.0 / 36.0;
        let sparse = pmi_matrix(&g, clip);
        let got = eval(&z, |t, v| pmi_loss(t, v, &sparse));
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }
}

// ---------- contrastive and triplet ----------

fn path4() -> Graph {
    graph_from_edges(4, &[(0, 1), (1, 2), (2, 3)])
}

#[test]
fn edge_triples_cover_both_directions_with_valid_negatives() {
    let g = random_graph(10, 0.3, 2, 0, 4);
    let ctx = LossContext {
        negatives: 3,
        ..LossContext::default()
    };
    let (a, p, n) = edge_triples(&g, &ctx, 9, "contrastive").unwrap();
    assert_eq!(a.len(), 2 * g.num_edges() * 3);
    for t in 0..a.len() {
        assert!(g.has_edge(a[t], p[t]));
        assert!(n[t] != a[t] && !g.has_edge(a[t], n[t]));
    }
    for &(u, v) in g.edges() {
        assert!((0..a.len()).any(|t| a[t] == u && p[t] == v));
        assert!((0..a.len()).any(|t| a[t] == v && p[t] == u));
    }
}

#[test]
fn edge_losses_vanish_when_hinge_is_closed() {
    // each edge joins parallel rows and every non-neighbor is orthogonal
    let g = graph_from_edges(4, &[(0, 1), (2, 3)]);
    let z = Tensor::from_rows(&[
        vec![1.0, 0.0],
        vec![2.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, 3.0],
    ])
    .unwrap();
    let ctx = LossContext::default();
    for seed in 0..5 {
        assert_eq!(eval(&z, |t, v| contrastive_loss(t, v, &g, &ctx, seed)), 0.0);
        assert_eq!(eval(&z, |t, v| triplet_loss(t, v, &g, &ctx, seed)), 0.0);
    }
}

#[test]
fn edge_losses_equal_margin_when_positive_and_negative_coincide() {
    let g = path4();
    let z = Tensor::full(4, 3, 0.7);
    let ctx = LossContext::default();
    for seed in 0..3 {
        let c = eval(&z, |t, v| contrastive_loss(t, v, &g, &ctx, seed));
        let tr = eval(&z, |t, v| triplet_loss(t, v, &g, &ctx, seed));
        assert!(
            (c - 0.5).abs() < 1e-15 && (tr - 0.5).abs() < 1e-15,
            "{c} {tr}"
        );
    }
}

#[test]
fn edge_losses_match_triple_oracle() {
    let g = random_graph(8, 0.4, 2, 0, 5);
    let z = rand_tensor(8, 5, 6);
    let ctx = LossContext::default();
    for (stream, which) in [("contrastive", 0), ("triplet", 1)] {
        let (a, p, n) = edge_triples(&g, &ctx, 11, stream).unwrap();
        let expect = hinge_oracle(&z, &a, &p, &n, ctx.margin);
        let got = if which == 0 {
            eval(&z, |t, v| contrastive_loss(t, v, &g, &ctx, 11))
        } else {
            eval(&z, |t, v| triplet_loss(t, v, &g, &ctx, 11))
        };
        assert!((got - expect).abs() < 1e-12, "{stream}: {got} vs {expect}");
    }
}

#[test]
fn contrastive_and_triplet_draw_independent_negatives() {
    let g = random_graph(30, 0.1, 2, 0, 7);
    let ctx = LossContext::default();
    let c = edge_triples(&g, &ctx, 3, "contrastive").unwrap().2;
    let t = edge_triples(&g, &ctx, 3, "triplet").unwrap().2;
    assert_ne!(c, t);
    assert_eq!(c, edge_triples(&g, &ctx, 3, "contrastive").unwrap().2);
}

#[test]
fn edge_losses_reject_complete_graphs() {
    let g = graph_from_edges(3, &[(0, 1), (1, 2), (0, 2)]);
    let z = rand_tensor(3, 2, 8);
    let mut tape = Tape::new();
    let v = tape.constant(z);
    let ctx = LossContext::default();
    assert!(matches!(
        contrastive_loss(&mut tape, v, &g, &ctx, 0),
        Err(Error::NoNegative(_))
    ));
    assert!(matches!(
        triplet_loss(&mut tape, v, &g, &ctx, 0),
        Err(Error::NoNegative(_))
    ));
}

// ---------- denoising ----------

fn fixed_mlp(tape: &mut Tape, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Mlp {
    Mlp {
        w1: tape.constant(w1),
        b1: tape.constant(b1),
        w2: tape.constant(w2),
        b2: tape.constant(b2),
    }
}

#[test]
fn dae_identity_without_noise_is_exact() {
    let z = rand_tensor(5, 3, 9).map(f64::abs);
    let mut tape = Tape::new();
    let v = tape.constant(z);
    let mlp = fixed_mlp(
        &mut tape,
        Tensor::identity(3),
        Tensor::zeros(1, 3),
        Tensor::identity(3),
        Tensor::zeros(1, 3),
    );
    let l = dae_loss(&mut tape, v, &mlp, 0.0, 1).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
}

#[test]
fn dae_zero_denoiser_gives_mean_square() {
    let z = rand_tensor(4, 3, 10);
    let expect = z.data().iter().map(|x| x * x).sum::<f64>() / 12.0;
    let mut tape = Tape::new();
    let v = tape.constant(z);
    let mlp = fixed_mlp(
        &mut tape,
        Tensor::zeros(3, 3),
        Tensor::zeros(1, 3),
        Tensor::zeros(3, 3),
        Tensor::zeros(1, 3),
    );
    let l = dae_loss(&mut tape, v, &mlp, 0.1, 1).unwrap();
    assert!((tape.value(l).item() - expect).abs() < 1e-15);
}

#[test]
fn dae_matches_elementwise_oracle() {
    let (z, w1, b1, w2, b2) = (
        rand_tensor(4, 3, 11),
        rand_tensor(3, 3, 12),
        rand_tensor(1, 3, 13),
        rand_tensor(3, 3, 14),
        rand_tensor(1, 3, 15),
    );
    let eps = dae_noise(4, 3, 0.1, 77);
    let mut expect = 0.0;
    for i in 0..4 {
        let x: Vec<f64> = (0..3).map(|j| z.get(i, j) + eps.get(i, j)).collect();
        let h: Vec<f64> = (0..3)
            .map(|k| ((0..3).map(|j| x[j] * w1.get(j, k)).sum::<f64>() + b1.get(0, k)).max(0.0))
            .collect();
        for c in 0..3 {
            let out = (0..3).map(|k| h[k] * w2.get(k, c)).sum::<f64>() + b2.get(0, c);
            expect += (z.get(i, c) - out).powi(2);
        }
    }
    expect /= 12.0;
    let mut tape = Tape::new();
    let v = tape.constant(z);
    let mlp = fixed_mlp(&mut tape, w1, b1, w2, b2);
    let l = dae_loss(&mut tape, v, &mlp, 0.1, 77).unwrap();
    assert!((tape.value(l).item() - expect).abs() < 1e-12);
}

#[test]
fn dae_noise_is_seeded_and_gaussian() {
    assert_eq!(dae_noise(3, 3, 0.1, 5), dae_noise(3, 3, 0.1, 5));
    assert_ne!(dae_noise(3, 3, 0.1, 5), dae_noise(3, 3, 0.1, 6));
    let e = dae_noise(200, 100, 0.1, 1);
    let n = e.len() as f64;
    let mean = e.sum() / n;
    let var = e.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 5.0 * 0.1 / n.sqrt());
    assert!((var.sqrt() - 0.1).abs() < 0.002);
}

// ---------- PageRank ----------

#[test]
fn pagerank_partners_match_exhaustive_scan() {
    let g = random_graph(6, 0.4, 2, 0, 16);
    let pr = pagerank(&g, PageRankOptions::default()).unwrap().scores;
    for u in 0..6 {
        let others: Vec<usize> = (0..6).filter(|&w| w != u).collect();
        let d = |w: usize| (pr[u] - pr[w]).abs();
        let best = others.iter().map(|&w| d(w)).fold(f64::INFINITY, f64::min);
        let p = *others.iter().find(|&&w| d(w) == best).unwrap();
        let rest: Vec<usize> = others.into_iter().filter(|&w| w != p).collect();
        let worst = rest.iter().map(|&w| d(w)).fold(f64::NEG_INFINITY, f64::max);
        let q = *rest.iter().find(|&&w| d(w) == worst).unwrap();
        assert_eq!(pagerank_partners(&pr, u).unwrap(), (p, q), "node {u}");
    }
}

#[test]
fn pagerank_ties_go_to_lowest_id() {
    let pr = vec![0.25; 4];
    assert_eq!(pagerank_partners(&pr, 0).unwrap(), (1, 2));
    assert_eq!(pagerank_partners(&pr, 2).unwrap(), (0, 1));
}

#[test]
fn pagerank_loss_equals_margin_for_equal_embeddings() {
    let g = random_graph(7, 0.4, 2, 0, 17);
    let pr = pagerank(&g, PageRankOptions::default()).unwrap().scores;
    let z = Tensor::full(7, 4, -0.3);
    let v = eval(&z, |t, x| {
        pagerank_loss(t, x, &pr, &LossContext::default(), 0)
    });
    assert!((v - 0.5).abs() < 1e-15);
}

#[test]
fn pagerank_loss_vanishes_when_hinge_is_closed() {
    // scores put 0,1 together and 2,3 together; negatives land across the gap
    let pr = vec![0.1, 0.11, 0.39, 0.4];
    let z = Tensor::from_rows(&[
        vec![1.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, 2.0],
    ])
    .unwrap();
    let v = eval(&z, |t, x| {
        pagerank_loss(t, x, &pr, &LossContext::default(), 0)
    });
    assert_eq!(v, 0.0);
}

#[test]
fn pagerank_loss_rejects_tiny_graphs() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::full(2, 2, 1.0));
    assert!(pagerank_loss(&mut tape, z, &[0.5, 0.5], &LossContext::default(), 0).is_err());
}

#[test]
fn pagerank_anchors_are_distinct_and_bounded() {
    let ctx = LossContext {
        anchor_count: 20,
        ..LossContext::default()
    };
    let a = pagerank_anchors(100, &ctx, 3);
    assert_eq!(a.len(), 20);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(a, pagerank_anchors(100, &ctx, 3));
    assert_eq!(pagerank_anchors(10, &ctx, 3), (0..10).collect::<Vec<_>>());
}

#[test]
fn pagerank_loss_matches_anchor_oracle() {
    let g = random_graph(40, 0.1, 2, 0, 18);
    let pr = pagerank(&g, PageRankOptions::default()).unwrap().scores;
    let z = rand_tensor(40, 6, 19);
    let ctx = LossContext {
        anchor_count: 15,
        ..LossContext::default()
    };
    let a = pagerank_anchors(40, &ctx, 4);
    let (p, n): (Vec<usize>, Vec<usize>) = a
        .iter()
        .map(|&u| pagerank_partners(&pr, u).unwrap())
        .unzip();
    let expect = hinge_oracle(&z, &a, &p, &n, ctx.margin);
    let got = eval(&z, |t, x| pagerank_loss(t, x, &pr, &ctx, 4));
    assert!((got - expect).abs() < 1e-12);
}

// ---------- hybrid ----------

fn hybrid_value(spec: &HybridLossSpec, values: &[f64], thetas: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let vals: Vec<_> = spec
        .members()
        .iter()
        .zip(values)
        .map(|(&l, &v)| (l, tape.constant(Tensor::scalar(v))))
        .collect();
    let gates: Vec<_> = spec
        .members()
        .iter()
        .zip(thetas)
        .map(|(&l, &t)| (l, tape.param(Tensor::scalar(t))))
        .collect();
    let out = hybrid_loss(&mut tape, spec, &vals, &gates).unwrap();
    tape.value(out).item()
}

#[test]
fn hybrid_single_member_at_zero_gate_is_half() {
    let spec = HybridLossSpec::single(BaseLoss::Pmi);
    assert_eq!(hybrid_value(&spec, &[1.7], &[0.0]), 0.85);
}

#[test]
fn hybrid_saturated_gates_give_plain_sum() {
    let spec =
        HybridLossSpec::new([BaseLoss::Contrastive, BaseLoss::Dae, BaseLoss::Triplet]).unwrap();
    let v = hybrid_value(&spec, &[1.0, 2.0, 3.0], &[30.0; 3]);
    assert!((v - 6.0).abs() < 1e-9, "{v}");
}

#[test]
fn hybrid_order_three_at_zero_gates() {
    let spec = HybridLossSpec::new([BaseLoss::Pmi, BaseLoss::PageRank, BaseLoss::Dae]).unwrap();
    assert_eq!(hybrid_value(&spec, &[1.0, 2.0, 3.0], &[0.0; 3]), 3.0);
}

#[test]
fn hybrid_rejects_missing_member() {
    let spec = HybridLossSpec::new([BaseLoss::Pmi, BaseLoss::Dae]).unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::scalar(1.0));
    let g = tape.param(Tensor::scalar(0.0));
    let vals = [(BaseLoss::Pmi, v)];
    let gates = [(BaseLoss::Pmi, g), (BaseLoss::Dae, g)];
    assert!(hybrid_loss(&mut tape, &spec, &vals, &gates).is_err());
}

#[test]
fn hybrid_gradient_reaches_gates_and_members() {
    let spec = HybridLossSpec::new([BaseLoss::Pmi, BaseLoss::Triplet]).unwrap();
    let mut tape = Tape::new();
    let a = tape.param(Tensor::scalar(2.0));
    let b = tape.param(Tensor::scalar(4.0));
    let ta = tape.param(Tensor::scalar(0.0));
    let tb = tape.param(Tensor::scalar(0.0));
    let out = hybrid_loss(
        &mut tape,
        &spec,
        &[(BaseLoss::Pmi, a), (BaseLoss::Triplet, b)],
        &[(BaseLoss::Pmi, ta), (BaseLoss::Triplet, tb)],
    )
    .unwrap();
    let g = tape.backward(out).unwrap();
    assert_eq!(g.get(a).unwrap().item(), 0.5);
    assert_eq!(g.get(ta).unwrap().item(), 0.25 * 2.0);
    assert_eq!(g.get(tb).unwrap().item(), 0.25 * 4.0);
}

#[test]
fn enumeration_counts_and_order() {
    assert_eq!(enumerate_hybrids(1).unwrap().len(), 5);
    assert_eq!(enumerate_hybrids(2).unwrap().len(), 15);
    let all = enumerate_hybrids(5).unwrap();
    assert_eq!(all.len(), 31);
    let names: Vec<String> = all.iter().map(HybridLossSpec::name).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    assert_eq!(names[0], "Contr_l");
    assert!(names.contains(&"Contr_l + CrossE_L + PMI_L + PR_L + Triplet_L".to_string()));
    assert!(enumerate_hybrids(0).is_err() && enumerate_hybrids(6).is_err());
}

#[test]
fn names_round_trip() {
    for spec in enumerate_hybrids(5).unwrap() {
        assert_eq!(spec.name().parse::<HybridLossSpec>().unwrap(), spec);
    }
    let s: HybridLossSpec = "PR_L + Contr_l".parse().unwrap();
    assert_eq!(s.name(), "Contr_l + PR_L");
    assert!("Foo_L".parse::<HybridLossSpec>().is_err());
    let json = serde_json::to_string(&s).unwrap();
    assert_eq!(json, "\"Contr_l + PR_L\"");
}

#[test]
fn loss_params_hold_gates_and_denoiser() {
    let p = loss_params(&"CrossE_L + PMI_L".parse().unwrap(), 6, 1);
    assert_eq!(p.get("gate.CrossE_L").unwrap().item(), 0.0);
    assert_eq!(p.get("gate.PMI_L").unwrap().item(), 0.0);
    assert_eq!(p.get("loss.dae.w1").unwrap().shape(), (6, 6));
    let q = loss_params(&"PMI_L".parse().unwrap(), 6, 1);
    assert_eq!(q.len(), 1);
}

// ---------- properties ----------

fn connected_ish(n: usize, seed: u64) -> Graph {
    // random graph with no node adjacent to all others
    let mut s = seed;
    loop {
        let g = random_graph(n, 0.35, 3, 0, s);
        if g.num_edges() > 0 && (0..n).all(|u| g.degree(u) + 1 < n) {
            return g;
        }
        s += 1000;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cosine_losses_are_scale_invariant(seed in 0u64..1000, scale in 0.01f64..100.0) {
        let g = connected_ish(8, seed);
        let targets = LossTargets::new(&g).unwrap();
        let z = rand_tensor(8, 4, seed + 1);
        let zs = z.scale(scale);
        let ctx = LossContext::default();
        type L = fn(&mut Tape, lossbench_core::Var, &Graph, &LossTargets, &LossContext) -> lossbench_core::Result<lossbench_core::Var>;
        let losses: [L; 4] = [
            |t, v, _, tg, _| pmi_loss(t, v, &tg.pmi),
            |t, v, g, _, c| contrastive_loss(t, v, g, c, 3),
            |t, v, _, tg, c| pagerank_loss(t, v, &tg.pagerank, c, 3),
            |t, v, g, _, c| triplet_loss(t, v, g, c, 3),
        ];
        for f in losses {
            let a = eval(&z, |t, v| f(t, v, &g, &targets, &ctx));
            let b = eval(&zs, |t, v| f(t, v, &g, &targets, &ctx));
            prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn hinge_losses_are_bounded(seed in 0u64..1000, margin in 0.1f64..2.0) {
        let g = connected_ish(8, seed);
        let pr = pagerank(&g, PageRankOptions::default()).unwrap().scores;
        let z = rand_tensor(8, 3, seed + 2);
        let ctx = LossContext { margin, ..LossContext::default() };
        for v in [
            eval(&z, |t, x| contrastive_loss(t, x, &g, &ctx, seed)),
            eval(&z, |t, x| triplet_loss(t, x, &g, &ctx, seed)),
            eval(&z, |t, x| pagerank_loss(t, x, &pr, &ctx, seed)),
        ] {
            prop_assert!((0.0..=margin + 2.0).contains(&v), "{}", v);
        }
    }

    #[test]
    fn hybrid_is_monotone_in_each_member(
        values in prop::collection::vec(-5.0f64..5.0, 5),
        thetas in prop::collection::vec(-10.0f64..10.0, 5),
        bump in 0.0f64..3.0,
        which in 0usize..5,
    ) {
        let spec = HybridLossSpec::new(BaseLoss::ALL).unwrap();
        let base = hybrid_value(&spec, &values, &thetas);
        let mut up = values.clone();
        up[which] += bump;
        prop_assert!(hybrid_value(&spec, &up, &thetas) >= base);
    }

    #[test]
    fn every_loss_passes_grad_check(seed in 0u64..1000, which in 0usize..5) {
        let g = connected_ish(8, seed);
        let targets = LossTargets::new(&g).unwrap();
        let loss = BaseLoss::ALL[which];
        let spec = HybridLossSpec::single(loss);
        let aux = loss_params(&spec, 4, seed);
        let mut params = vec![rand_tensor(8, 4, seed + 3)];
        params.extend(aux.values().iter().cloned());
        let names = aux.names().to_vec();
        let ctx = LossContext::default();
        let r = grad_check(
            |tape, vars| {
                let map = VarMap::from_pairs(names.iter().cloned().zip(vars[1..].iter().copied()));
                Ok(total_loss(tape, &spec, vars[0], &g, &targets, &map, &ctx, seed)?.0)
            },
            &params,
            1e-5,
        ).unwrap();
        prop_assert!(r.max_rel_error < 1e-4, "{}: {:?}", loss, r);
    }
}
