use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{knn_graph, regular_grid, Graph};

fn random_instance(seed: u64, n: usize, k: usize, c: usize) -> (Graph, Vec<[f64; 3]>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect();
    let g = knn_graph(&pos, k).unwrap();
    let f = Array2::from_shape_fn((n, c), |_| rng.random_range(-1.0..1.0));
    (g, pos, f)
}

fn line(n: usize) -> (Graph, Vec<[f64; 3]>) {
    let pos = (0..n).map(|i| [i as f64, 0.0, 0.0]).collect();
    let g = Graph::from_edges(n, (0..n - 1).map(|i| (i, i + 1))).unwrap();
    (g, pos)
}

#[test]
fn auxiliary_graph_sizes() {
    let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
    let pos = vec![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
    let aux = build_auxiliary_graph(&tri, &pos).unwrap();
    assert_eq!(aux.num_vertices(), 6);
    assert_eq!(aux.arcs.len(), 6);
    assert_eq!(aux.transposed_arcs.len(), 6);
    // edge (0, 1) midpoint
    assert_eq!(aux.positions[3], [0.5, 0.5, 0.0]);
    assert!(aux.transposed_arcs.iter().all(|&(m, v)| m >= 3 && v < 3));

    let one = Graph::from_edges(2, [(0, 1)]).unwrap();
    let aux = build_auxiliary_graph(&one, &[[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
    assert_eq!((aux.num_vertices(), aux.arcs.len()), (3, 2));

    let aux = build_auxiliary_graph(&Graph::empty(4), &[[0.0; 3]; 4]).unwrap();
    assert_eq!((aux.num_vertices(), aux.arcs.len()), (4, 0));
}

#[test]
fn gradient_on_axis_edge() {
    let g = Graph::from_edges(2, [(0, 1)]).unwrap();
    let pos = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let grad = assemble_gradient(&g, &pos).unwrap();
    assert_eq!(grad.shape(), (3, 2));
    let out = grad.mul_dense(&array![[0.0], [4.0]]).unwrap();
    assert_eq!(out, array![[2.0], [0.0], [0.0]]);
    // constant features vanish
    let out = grad.mul_dense(&array![[3.0], [3.0]]).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn gradient_on_diagonal_edge() {
    let g = Graph::from_edges(2, [(0, 1)]).unwrap();
    let pos = [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]];
    let out = assemble_gradient(&g, &pos).unwrap().mul_dense(&array![[0.0], [1.0]]).unwrap();
    let expect = 1.0 / (2.0 * 2f64.sqrt());
    assert!((out[[0, 0]] - expect).abs() < 1e-15);
    assert!((out[[1, 0]] - expect).abs() < 1e-15);
    assert_eq!(out[[2, 0]], 0.0);
}

#[test]
fn edge_average_weights() {
    let (g, _) = line(3);
    let a = assemble_edge_average(&g).unwrap();
    assert_eq!(a.shape(), (9, 6));
    assert_eq!(a.get(1, 0), 0.5);
    assert_eq!(a.get(1, 1), 0.5);
    assert_eq!(a.get(0, 0), 1.0);

    let star = Graph::from_edges(5, (1..5).map(|i| (0, i))).unwrap();
    let a = assemble_edge_average(&star).unwrap();
    assert!((0..4).all(|e| a.get(0, e) == 0.25));

    let iso = Graph::from_edges(3, [(0, 1)]).unwrap();
    let a = assemble_edge_average(&iso).unwrap();
    assert_eq!(a.row(2).count(), 0);
}

#[test]
fn composite_second_derivative_on_path() {
    let (g, pos) = line(3);
    let f = array![[1.5], [-0.25], [4.0]];
    let feats = diff_features_reference(&g, &pos, &f).unwrap();
    let lap = feats.block(Term::LapX)[[1, 0]];
    assert!((lap - (1.5 + 0.5 + 4.0) / 8.0).abs() < 1e-15);

    let lin = array![[0.0], [1.0], [2.0]];
    let feats = diff_features(&g, &pos, &lin).unwrap();
    assert_eq!(feats.block(Term::LapX)[[1, 0]], 0.0);

    let constant = Array2::from_elem((3, 2), 7.0);
    let feats = diff_features(&g, &pos, &constant).unwrap();
    assert!(feats.as_array().slice(ndarray::s![.., 2..]).iter().all(|&v| v == 0.0));
    assert_eq!(feats.block(Term::Mass), constant);
}

#[test]
fn single_vertex_and_width() {
    let g = Graph::empty(1);
    let f = array![[3.0, -1.0]];
    let feats = diff_features(&g, &[[0.0; 3]], &f).unwrap();
    assert_eq!(feats.as_array().ncols(), 14);
    assert_eq!(feats.block(Term::Mass), f);
    assert!(feats.as_array().iter().skip(2).all(|&v| v == 0.0));
    assert!(matches!(
        diff_features(&g, &[[0.0; 3]], &Array2::zeros((2, 1))),
        Err(crate::Error::DimensionMismatch(_))
    ));
}

#[test]
fn zero_length_edges_are_clamped() {
    let pos = [[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]];
    let g = knn_graph(&pos, 1).unwrap();
    let op = DiffOperator::new(&g, &pos).unwrap();
    assert_eq!(op.clamped_edges(), 1);
    let f = array![[1.0], [2.0], [3.0]];
    let fused = op.apply(&f).unwrap();
    assert!(fused.as_array().iter().all(|v| v.is_finite()));
    let reference = diff_features_reference(&g, &pos, &f).unwrap();
    assert!(relative_deviation(fused.as_array(), reference.as_array()) <= 1e-10);
}

#[test]
fn fused_matches_reference_and_messages() {
    for seed in 0..30 {
        let n = 5 + (seed as usize * 7) % 40;
        let k = 2 + seed as usize % 5;
        let (g, pos, f) = random_instance(seed, n, k, 1 + seed as usize % 4);
        let fused = diff_features(&g, &pos, &f).unwrap();
        let reference = diff_features_reference(&g, &pos, &f).unwrap();
        assert!(relative_deviation(fused.as_array(), reference.as_array()) <= 1e-10);
        let aux = build_auxiliary_graph(&g, &pos).unwrap();
        let mp = aux.message_passing(&f).unwrap();
        assert!(relative_deviation(mp.as_array(), reference.as_array()) <= 1e-10);
    }
}

#[test]
fn adjoint_dot_product_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..10 {
        let (g, pos, f) = random_instance(seed + 100, 25, 4, 3);
        let op = DiffOperator::new(&g, &pos).unwrap();
        let y = Array2::from_shape_fn((25, 21), |_| rng.random_range(-1.0..1.0));
        let lhs = (op.apply(&f).unwrap().as_array() * &y).sum();
        let rhs = (&f * &op.adjoint(&y).unwrap()).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}

#[test]
fn unnormalized_transposed_derivative_is_negative_gradient_transpose() {
    // T without mean normalization equals −∂ᵀ, so −T∂ = ∂ᵀ∂ is PSD
    for seed in 0..8 {
        let (g, pos, _) = random_instance(seed + 300, 8 + seed as usize * 3, 3, 1);
        let grad = assemble_gradient(&g, &pos).unwrap();
        let tder = assemble_transposed_derivative(&g, &pos).unwrap();
        let (nv, ne) = (g.num_vertices(), g.num_edges());
        for b in 0..3 {
            for v in 0..nv {
                let deg = g.degree(v) as f64;
                for &e in g.incident_edges(v) {
                    let t = tder.get(b * nv + v, b * ne + e) * deg;
                    assert!((t + grad.get(b * ne + e, v)).abs() < 1e-12);
                }
            }
            let gd = grad.to_dense();
            let block = gd.slice(ndarray::s![b * ne..(b + 1) * ne, ..]).to_owned();
            let gram = block.t().dot(&block);
            let m = nalgebra::DMatrix::from_fn(nv, nv, |r, c| gram[[r, c]]);
            let min = m.symmetric_eigenvalues().min();
            assert!(min >= -1e-10, "min eigenvalue {min}");
        }
    }
}

#[test]
fn grid_nullspaces_and_axis_decoupling() {
    let (cloud, g) = regular_grid(6, 5, 4, 0.5).unwrap();
    let pos = &cloud.positions;
    let affine = Array2::from_shape_fn((pos.len(), 2), |(v, ch)| {
        let p = pos[v];
        if ch == 0 {
            1.0 + 2.0 * p[0] - 3.0 * p[1] + 0.5 * p[2]
        } else {
            -p[1]
        }
    });
    let feats = diff_features(&g, pos, &affine).unwrap();
    let interior = |v: usize| {
        let (ix, iy, iz) = (v % 6, (v / 6) % 5, v / 30);
        (1..5).contains(&ix) && (1..4).contains(&iy) && (1..3).contains(&iz)
    };
    for v in (0..pos.len()).filter(|&v| interior(v)) {
        for t in [Term::LapX, Term::LapY, Term::LapZ] {
            for ch in 0..2 {
                assert!(feats.block(t)[[v, ch]].abs() <= 1e-10);
            }
        }
        // channel 1 varies only along y
        assert!(feats.block(Term::GradX)[[v, 1]].abs() <= 1e-12);
        assert!(feats.block(Term::LapX)[[v, 1]].abs() <= 1e-12);
        assert!(feats.block(Term::GradZ)[[v, 1]].abs() <= 1e-12);
    }
}

#[test]
fn grid_stencils_2d() {
    let (cloud, g) = regular_grid(8, 8, 1, 1.0).unwrap();
    let v = 3 + 8 * 4;
    let gx = extract_stencil(&cloud, &g, Term::GradX, v).unwrap();
    assert!(!gx.boundary);
    let pat = [([-1, 0, 0], -1.0), ([1, 0, 0], 1.0)].into_iter().collect();
    let fit = fit_pattern(&gx.entries, &pat);
    assert!((fit.scale - 0.125).abs() < 1e-15);
    assert!(fit.max_deviation <= 1e-15);

    let lx = extract_stencil(&cloud, &g, Term::LapX, v).unwrap();
    let pat = [([-1, 0, 0], 1.0), ([0, 0, 0], -2.0), ([1, 0, 0], 1.0)].into_iter().collect();
    let fit = fit_pattern(&lx.entries, &pat);
    assert!((fit.scale - 1.0 / 16.0).abs() < 1e-15);
    assert!(fit.max_deviation <= 1e-15);

    let corner = extract_stencil(&cloud, &g, Term::LapX, 0).unwrap();
    assert!(corner.boundary);

    let mass = extract_stencil(&cloud, &g, Term::Mass, v).unwrap();
    assert_eq!(mass.entries.into_iter().collect::<Vec<_>>(), vec![([0, 0, 0], 1.0)]);
}

#[test]
fn grid_stencils_3d_star() {
    let (cloud, g) = regular_grid(5, 5, 5, 1.0).unwrap();
    let v = 2 + 5 * (2 + 5 * 2);
    for t in Term::ALL {
        let st = extract_stencil(&cloud, &g, t, v).unwrap();
        assert_eq!(st.max_off_star(), 0.0, "{t}");
        assert!(st.entries.len() <= 7);
    }
    let gz = extract_stencil(&cloud, &g, Term::GradZ, v).unwrap();
    assert!((gz.entries[&[0, 0, 1]] - 1.0 / 12.0).abs() < 1e-15);
}

#[test]
fn term_names_roundtrip() {
    for t in Term::ALL {
        assert_eq!(t.name().parse::<Term>().unwrap(), t);
    }
    assert!("lapw".parse::<Term>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linearity(seed in 0u64..10_000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let (g, pos, f) = random_instance(seed, 20, 3, 2);
        let (_, _, h) = random_instance(seed + 1, 20, 3, 2);
        let op = DiffOperator::new(&g, &pos).unwrap();
        let combo = op.apply(&(&f * alpha + &h * beta)).unwrap();
        let sep = op.apply(&f).unwrap().into_array() * alpha + op.apply(&h).unwrap().into_array() * beta;
        let dev = combo.as_array().iter().zip(sep.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(dev <= 1e-12);
    }

    #[test]
    fn constants_in_nullspace(seed in 0u64..10_000, k in 1usize..6, value in -10.0f64..10.0) {
        let (g, pos, _) = random_instance(seed, 15, k, 1);
        let f = Array2::from_elem((15, 3), value);
        let feats = diff_features(&g, &pos, &f).unwrap();
        prop_assert!(feats.as_array().slice(ndarray::s![.., 3..]).iter().all(|v| v.abs() <= 1e-12));
    }
}

#[test]
fn reference_patterns_fit_grid_stencils() {
    let (cloud, g) = regular_grid(5, 5, 5, 1.0).unwrap();
    let v = 2 + 5 * 2 + 25 * 2;
    for t in Term::ALL {
        let s = extract_stencil(&cloud, &g, t, v).unwrap();
        let fit = fit_pattern(&s.entries, &reference_pattern(t));
        assert!(fit.scale > 0.0, "{t}");
        assert!(fit.max_deviation <= 1e-15, "{t}");
    }
}
