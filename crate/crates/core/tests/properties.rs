mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use torsor_core::conv::{commutant_basis, Nonlinearity, TorsorConvLayer};
use torsor_core::format::{parse_features, parse_graph, parse_states, write_features, write_graph, write_states};
use torsor_core::groups::{distance, random_element};
use torsor_core::sheaf::{
    apply_gauge_features, frustration, frustration_gradient, is_global_section, transport_from_root,
};
use torsor_core::sync::{group_objective, solve_brute_force};
use torsor_core::{Gauge, GroupElement, GroupKind, PotentialGraph, Representation};

fn kind_strategy() -> impl Strategy<Value = GroupKind> {
    prop_oneof![
        (2u32..7).prop_map(GroupKind::Cyclic),
        Just(GroupKind::So2),
        Just(GroupKind::So3),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn group_axioms(kind in kind_strategy(), s in any::<u64>()) {
        let (a, b, c) = (random_element(kind, s), random_element(kind, s ^ 1), random_element(kind, s ^ 2));
        let left = a.compose(&b).unwrap().compose(&c).unwrap();
        let right = a.compose(&b.compose(&c).unwrap()).unwrap();
        prop_assert!(distance(&left, &right).unwrap() <= 1e-12);
        let id = GroupElement::identity(kind);
        prop_assert!(distance(&a.compose(&id).unwrap(), &a).unwrap() <= 1e-15);
        prop_assert!(a.compose(&a.inverse()).unwrap().is_identity(1e-12));
    }

    #[test]
    fn distance_is_bi_invariant(kind in kind_strategy(), s in any::<u64>()) {
        let (a, b, h, g) = (
            random_element(kind, s),
            random_element(kind, s ^ 1),
            random_element(kind, s ^ 2),
            random_element(kind, s ^ 3),
        );
        let d = distance(&a, &b).unwrap();
        let moved = distance(
            &h.compose(&a).unwrap().compose(&g).unwrap(),
            &h.compose(&b).unwrap().compose(&g).unwrap(),
        )
        .unwrap();
        prop_assert!((d - moved).abs() <= 1e-9);
    }

    #[test]
    fn gauge_actions_compose(kind in kind_strategy(), n in 2usize..9, s in any::<u64>()) {
        let g = random_graph(kind, n, 3, s);
        let (g1, g2) = (Gauge::random(kind, n, s ^ 5), Gauge::random(kind, n, s ^ 6));
        let twice = g.apply_gauge(&g1).unwrap().apply_gauge(&g2).unwrap();
        let once = g.apply_gauge(&g1.then(&g2).unwrap()).unwrap();
        for (x, y) in twice.edges().iter().zip(once.edges()) {
            prop_assert!(distance(&x.psi, &y.psi).unwrap() <= 1e-9);
        }
        let back = g.apply_gauge(&g1).unwrap().apply_gauge(&g1.inverse()).unwrap();
        for (x, y) in back.edges().iter().zip(g.edges()) {
            prop_assert!(distance(&x.psi, &y.psi).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn holonomy_is_conjugated(kind in kind_strategy(), n in 3usize..8, s in any::<u64>()) {
        let cycle: Vec<usize> = (0..=n).map(|i| i % n).collect();
        let mut b = PotentialGraph::builder(kind, n).unwrap();
        for i in 0..n {
            b.edge(i, (i + 1) % n, random_element(kind, s.wrapping_add(i as u64))).unwrap();
        }
        let g = b.build();
        let gamma = Gauge::random(kind, n, s ^ 9);
        let h = g.holonomy(&cycle).unwrap();
        let h2 = g.apply_gauge(&gamma).unwrap().holonomy(&cycle).unwrap();
        let expected = gamma[0].inverse().compose(&h).unwrap().compose(&gamma[0]).unwrap();
        prop_assert!(distance(&h2, &expected).unwrap() <= 1e-9);
    }

    #[test]
    fn frustration_is_gauge_invariant(kind in kind_strategy(), n in 2usize..12, s in any::<u64>()) {
        let g = random_graph(kind, n, 4, s);
        let rep = test_rep(kind);
        let f = random_features(&rep, n, s ^ 3);
        let gamma = Gauge::random(kind, n, s ^ 4);
        let eta = frustration(&g, &f).unwrap();
        let moved = frustration(&g.apply_gauge(&gamma).unwrap(), &apply_gauge_features(&f, &gamma).unwrap()).unwrap();
        prop_assert!((eta - moved).abs() <= 1e-9);
    }

    #[test]
    fn frustration_vanishes_exactly_on_sections(kind in kind_strategy(), n in 2usize..12, s in any::<u64>()) {
        let (g, _) = consistent_graph(kind, n, 3, s);
        let rep = test_rep(kind);
        let section = transport_from_root(&g, &rep, 0, &random_vector(rep.dim(), s ^ 1)).unwrap().features;
        prop_assert!(frustration(&g, &section).unwrap() <= 1e-12);
        prop_assert!(is_global_section(&g, &section, 1e-9).unwrap().is_section);
        let noisy = random_features(&rep, n, s ^ 2);
        let eta = frustration(&g, &noisy).unwrap();
        let check = is_global_section(&g, &noisy, 1e-6).unwrap();
        prop_assert_eq!(eta <= 1e-14, check.is_section);
    }

    #[test]
    fn frustration_ignores_edge_orientation(kind in kind_strategy(), n in 2usize..10, s in any::<u64>()) {
        let g = random_graph(kind, n, 3, s);
        // Same graph entered with every edge reversed.
        let reversed = PotentialGraph::from_edges(
            kind,
            n,
            g.edges().iter().map(|e| (e.v, e.u, e.psi.inverse(), e.weight)),
        )
        .unwrap();
        let f = random_features(&test_rep(kind), n, s ^ 8);
        let (a, b) = (frustration(&g, &f).unwrap(), frustration(&reversed, &f).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences(kind in kind_strategy(), n in 2usize..7, s in any::<u64>()) {
        let g = random_graph(kind, n, 2, s);
        let f = random_features(&test_rep(kind), n, s ^ 11);
        let grad = frustration_gradient(&g, &f).unwrap();
        let h = 1e-6;
        let mut fd = DMatrix::zeros(n, f.dim());
        for i in 0..n {
            for j in 0..f.dim() {
                let (mut p, mut m) = (f.values().clone(), f.values().clone());
                p[(i, j)] += h;
                m[(i, j)] -= h;
                fd[(i, j)] = (frustration(&g, &f.with_values(p).unwrap()).unwrap()
                    - frustration(&g, &f.with_values(m).unwrap()).unwrap())
                    / (2.0 * h);
            }
        }
        prop_assert!((&grad - &fd).norm() <= 1e-5 * fd.norm().max(1e-8));
    }

    #[test]
    fn brute_force_objective_is_gauge_invariant(n in 2usize..6, order in 2u32..5, s in any::<u64>()) {
        let kind = GroupKind::Cyclic(order);
        let g = random_graph(kind, n, 3, s);
        let gamma = Gauge::random(kind, n, s ^ 2);
        let a = solve_brute_force(&g).unwrap();
        let b = solve_brute_force(&g.apply_gauge(&gamma).unwrap()).unwrap();
        prop_assert_eq!(a.objective, b.objective);
        // Mapping the solution through the gauge keeps its objective.
        let moved: Vec<_> = a
            .states()
            .unwrap()
            .iter()
            .zip(gamma.elements())
            .map(|(x, y)| y.inverse().compose(x).unwrap())
            .collect();
        prop_assert_eq!(group_objective(&g.apply_gauge(&gamma).unwrap(), &moved).unwrap(), a.objective);
    }

    #[test]
    fn layer_is_linear(kind in kind_strategy(), n in 2usize..9, s in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let g = random_graph(kind, n, 3, s);
        let rep = test_rep(kind);
        let layer = TorsorConvLayer::random(commutant_basis(&rep, &rep).unwrap(), Nonlinearity::None, s).unwrap();
        let (f1, f2) = (random_features(&rep, n, s ^ 1), random_features(&rep, n, s ^ 2));
        let mix = f1.with_values(f1.values() * alpha + f2.values() * beta).unwrap();
        let lhs = layer.forward(&g, &mix).unwrap();
        let rhs = layer.forward(&g, &f1).unwrap().values() * alpha + layer.forward(&g, &f2).unwrap().values() * beta;
        prop_assert!((lhs.values() - rhs).amax() <= 1e-10);
    }

    #[test]
    fn layer_preserves_sections(kind in kind_strategy(), n in 2usize..10, s in any::<u64>()) {
        let (g, _) = consistent_graph(kind, n, 3, s);
        let rep = test_rep(kind);
        let section = transport_from_root(&g, &rep, 0, &random_vector(rep.dim(), s ^ 1)).unwrap().features;
        let layer = TorsorConvLayer::random(commutant_basis(&rep, &rep).unwrap(), Nonlinearity::None, s ^ 2).unwrap();
        let out = layer.forward(&g, &section).unwrap();
        prop_assert!(is_global_section(&g, &out, 1e-9).unwrap().is_section);
        for v in 0..n {
            prop_assert!((out.row(v) - layer.kernel() * section.row(v)).amax() <= 1e-9);
        }
    }

    #[test]
    fn formats_round_trip(kind in kind_strategy(), n in 1usize..8, s in any::<u64>()) {
        let g = random_graph(kind, n, 2, s);
        let text = write_graph(&g);
        let back = parse_graph(&text).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(write_graph(&back), text);

        let states: Vec<_> = (0..n).map(|i| random_element(kind, s.wrapping_add(i as u64))).collect();
        let text = write_states(&states, Some(1.5));
        prop_assert_eq!(&parse_states(&text, kind).unwrap(), &states);

        let f = random_features(&test_rep(kind), n, s ^ 1);
        let text = write_features(&f);
        let back = parse_features(&text, f.rep()).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(write_features(&back), text);
    }
}

#[test]
fn grid_reduction_on_cycle() {
    let kind = GroupKind::So2;
    let n = 9;
    let id = GroupElement::identity(kind);
    let g = PotentialGraph::from_edges(kind, n, (0..n).map(|i| (i, (i + 1) % n, id, 1.0))).unwrap();
    let rep = Representation::trivial(kind, 3).unwrap();
    let layer = TorsorConvLayer::random(commutant_basis(&rep, &rep).unwrap(), Nonlinearity::None, 17).unwrap();
    let f = random_features(&rep, n, 4);
    let out = layer.forward(&g, &f).unwrap();
    for v in 0..n {
        let mean = (f.row((v + n - 1) % n) + f.row((v + 1) % n)) / 2.0;
        assert!((out.row(v) - layer.kernel() * mean).amax() <= 1e-12);
    }

    // Relabel vertices by a shift plus reflection, which maps the cycle to itself.
    let perm: Vec<usize> = (0..n).map(|v| (n - v + 3) % n).collect();
    let mut permuted = DMatrix::zeros(n, 3);
    for (v, &p) in perm.iter().enumerate() {
        permuted.set_row(p, &f.values().row(v));
    }
    let g2 = PotentialGraph::from_edges(kind, n, g.edges().iter().map(|e| (perm[e.u], perm[e.v], id, 1.0))).unwrap();
    let out2 = layer.forward(&g2, &f.with_values(permuted).unwrap()).unwrap();
    for (v, &p) in perm.iter().enumerate() {
        assert!((out2.row(p) - out.row(v)).amax() <= 1e-12);
    }
}

#[test]
fn equivariance_for_every_kind_and_nonlinearity() {
    for (i, kind) in KINDS.into_iter().enumerate() {
        let rep = test_rep(kind);
        for nl in [Nonlinearity::None, Nonlinearity::NormRelu { bias: 0.2 }] {
            for s in 0..10u64 {
                let seed = 1000 * i as u64 + s;
                let g = random_graph(kind, 7, 4, seed);
                let layer = TorsorConvLayer::random(commutant_basis(&rep, &rep).unwrap(), nl, seed).unwrap();
                let f = random_features(&rep, 7, seed ^ 3);
                let dev =
                    torsor_core::conv::check_gauge_equivariance(&layer, &g, &f, &Gauge::random(kind, 7, seed ^ 4))
                        .unwrap();
                assert!(dev <= 1e-9, "{kind} {nl} {dev}");
            }
        }
    }
}
