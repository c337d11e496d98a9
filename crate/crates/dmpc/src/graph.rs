//! Weighted undirected communication topology: adjacency, degrees, Laplacian
//! and its square root.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Eigenvalues of a symmetric PSD matrix below this are treated as exactly
/// zero when forming the square root, so machine noise cannot produce NaNs.
const EIG_ZERO_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("adjacency matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("adjacency not symmetric at ({i},{j}): {aij} vs {aji}")]
    NonSymmetric { i: usize, j: usize, aij: f64, aji: f64 },
    #[error("negative weight {weight} at ({i},{j})")]
    NegativeWeight { i: usize, j: usize, weight: f64 },
    #[error("self loop at node {i}: a_ii = {weight}")]
    SelfLoop { i: usize, weight: f64 },
}

/// Communication graph of the `l` agents. Immutable after construction.
#[derive(Debug, Clone)]
pub struct CommGraph {
    pub l: usize,
    pub adjacency: DMatrix<f64>,
    pub degrees: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    pub laplacian_sqrt: DMatrix<f64>,
    /// Laplacian eigenvalues sorted ascending; `eigenvalues[0]` ~ 0.
    pub eigenvalues: DVector<f64>,
}

/// Builds the graph from an adjacency matrix, validating symmetry, zero
/// diagonal and nonnegative weights.
pub fn build_graph(adjacency: DMatrix<f64>) -> Result<CommGraph, GraphError> {
    let (rows, cols) = adjacency.shape();
    if rows != cols {
        return Err(GraphError::NotSquare { rows, cols });
    }
    let l = rows;
    for i in 0..l {
        let aii = adjacency[(i, i)];
        if aii != 0.0 {
            return Err(GraphError::SelfLoop { i, weight: aii });
        }
        for j in 0..l {
            let aij = adjacency[(i, j)];
            if aij < 0.0 {
                return Err(GraphError::NegativeWeight { i, j, weight: aij });
            }
            if j > i {
                let aji = adjacency[(j, i)];
                if (aij - aji).abs() > SYMMETRY_TOL {
                    return Err(GraphError::NonSymmetric { i, j, aij, aji });
                }
            }
        }
    }

    let degrees = DVector::from_iterator(l, adjacency.row_iter().map(|r| r.sum()));
    let laplacian = DMatrix::from_diagonal(&degrees) - &adjacency;

    let eig = laplacian.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(l, order.iter().map(|&i| eig.eigenvalues[i]));

    // sqrt(L) = Q diag(sqrt(nu)) Q^T with small eigenvalues clamped to zero
    let q = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    let sqrt_diag = DVector::from_iterator(
        l,
        eigenvalues.iter().map(|&nu| if nu < EIG_ZERO_TOL { 0.0 } else { nu.sqrt() }),
    );
    let laplacian_sqrt = &q * DMatrix::from_diagonal(&sqrt_diag) * q.transpose();

    Ok(CommGraph { l, adjacency, degrees, laplacian, laplacian_sqrt, eigenvalues })
}

/// True iff the algebraic connectivity is positive (second eigenvalue above
/// the zero tolerance). A single node is trivially connected.
pub fn validate_connectivity(g: &CommGraph) -> bool {
    if g.l <= 1 {
        return true;
    }
    g.eigenvalues[1] > EIG_ZERO_TOL
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn ring4() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 4, &[
            0., 1., 0., 1.,
            1., 0., 1., 0.,
            0., 1., 0., 1.,
            1., 0., 1., 0.,
        ])
    }

    #[test]
    fn ring_degrees_and_laplacian() {
        let g = build_graph(ring4()).unwrap();
        assert_eq!(g.degrees.as_slice(), &[2., 2., 2., 2.]);
        let expected = DMatrix::from_row_slice(4, 4, &[
            2., -1., 0., -1.,
            -1., 2., -1., 0.,
            0., -1., 2., -1.,
            -1., 0., -1., 2.,
        ]);
        assert_abs_diff_eq!(g.laplacian, expected, epsilon = 1e-14);
        assert!(validate_connectivity(&g));
    }

    #[test]
    fn single_agent() {
        let g = build_graph(DMatrix::from_row_slice(1, 1, &[0.])).unwrap();
        assert_eq!(g.laplacian[(0, 0)], 0.0);
        assert_eq!(g.degrees[0], 0.0);
        assert!(validate_connectivity(&g));
    }

    #[test]
    fn complete_graph_eigenvalues() {
        // complete graph on 3 nodes: spectrum {0, 3, 3}
        let adj = DMatrix::from_row_slice(3, 3, &[0., 1., 1., 1., 0., 1., 1., 1., 0.]);
        let g = build_graph(adj).unwrap();
        assert_abs_diff_eq!(g.eigenvalues[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(g.eigenvalues[1], 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(g.eigenvalues[2], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn disconnected_pair() {
        let g = build_graph(DMatrix::zeros(2, 2)).unwrap();
        assert!(!validate_connectivity(&g));
    }

    #[test]
    fn path_graph_connectivity() {
        let adj = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 1., 0., 1., 0., 1., 0.]);
        let g = build_graph(adj).unwrap();
        // P3 spectrum is {0, 1, 3}
        assert_abs_diff_eq!(g.eigenvalues[1], 1.0, epsilon = 1e-10);
        assert!(validate_connectivity(&g));
    }

    #[test]
    fn rejects_bad_adjacency() {
        let mut a = ring4();
        a[(0, 1)] = 2.0;
        assert!(matches!(build_graph(a), Err(GraphError::NonSymmetric { i: 0, j: 1, .. })));

        let mut a = ring4();
        a[(2, 2)] = 0.5;
        assert!(matches!(build_graph(a), Err(GraphError::SelfLoop { i: 2, .. })));

        let mut a = ring4();
        a[(0, 1)] = -1.0;
        a[(1, 0)] = -1.0;
        assert!(matches!(build_graph(a), Err(GraphError::NegativeWeight { i: 0, j: 1, .. })));

        assert!(matches!(
            build_graph(DMatrix::zeros(2, 3)),
            Err(GraphError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn laplacian_invariants() {
        let g = build_graph(ring4()).unwrap();
        // row sums vanish
        for i in 0..4 {
            assert!(g.laplacian.row(i).sum().abs() <= 1e-12);
        }
        // consensus null space: L * const = 0
        let v = DVector::from_element(4, 3.7);
        assert!((&g.laplacian * &v).norm() <= 1e-10 * v.norm());
        // sqrt(L) * sqrt(L) = L entrywise
        let l2 = &g.laplacian_sqrt * &g.laplacian_sqrt;
        assert_abs_diff_eq!(l2, g.laplacian, epsilon = 1e-9);
        // sqrt(L) symmetric PSD with the same null space
        assert_abs_diff_eq!(g.laplacian_sqrt.clone(), g.laplacian_sqrt.transpose(), epsilon = 1e-12);
        assert!((&g.laplacian_sqrt * &v).norm() <= 1e-9 * v.norm());
        // column sums vanish, which is what conserves sum(gamma) downstream
        for j in 0..4 {
            assert!(g.laplacian.column(j).sum().abs() <= 1e-12);
        }
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn symmetric_adjacency(l: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(0.0_f64..2.0, l * l).prop_map(move |vals| {
            let mut a = DMatrix::zeros(l, l);
            for i in 0..l {
                for j in (i + 1)..l {
                    // sparsify so both connected and disconnected graphs appear
                    let w = vals[i * l + j];
                    let w = if w < 0.7 { 0.0 } else { w };
                    a[(i, j)] = w;
                    a[(j, i)] = w;
                }
            }
            a
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn laplacian_invariants_hold(adj in (2usize..6).prop_flat_map(symmetric_adjacency)) {
            let g = build_graph(adj).unwrap();
            // rows and columns sum to zero
            for i in 0..g.l {
                prop_assert!(g.laplacian.row(i).sum().abs() <= 1e-12);
                prop_assert!(g.laplacian.column(i).sum().abs() <= 1e-12);
            }
            // spectrum nonnegative with a zero eigenvalue
            prop_assert!(g.eigenvalues[0].abs() <= 1e-10);
            prop_assert!(g.eigenvalues.iter().all(|&nu| nu >= -1e-10));
            // square root reproduces L and shares its null space
            let err = (&g.laplacian_sqrt * &g.laplacian_sqrt - &g.laplacian).abs().max();
            prop_assert!(err <= 1e-9);
            let ones = DVector::from_element(g.l, 1.0);
            prop_assert!((&g.laplacian_sqrt * ones).norm() <= 1e-9);
        }
    }
}
