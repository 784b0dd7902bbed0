//! Orthogonal projections that remove nuisance directions from the
//! measurement model: the coupling Jacobian and its projection, truncated
//! eigen-subspaces for high-dimensional nuisance Jacobians, subspaces from
//! baseline-difference Jacobians, and the combination of all of them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Relative singular/eigenvalue cutoff used for numerical rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Jacobian of the measurements with respect to the stacked coupling
/// parameters (source log-amplitudes, detector log-amplitudes, then the
/// phases in the same order). Entries are zeros and ones only and depend
/// solely on how pairs are arranged into the measurement vector.
#[derive(Debug, Clone)]
pub struct CouplingJacobian {
    /// Dense 2m x 2l zero/one matrix.
    pub matrix: DMatrix<f64>,
    pub n_pairs: usize,
    pub n_sources: usize,
    pub n_detectors: usize,
    /// Positions of the ones, for structure checks.
    pub entries: Vec<(u32, u32)>,
}

impl CouplingJacobian {
    pub fn n_optodes(&self) -> usize {
        self.n_sources + self.n_detectors
    }
}

/// Build the coupling Jacobian for a pair list.
///
/// The amplitude row of pair (i, j) carries ones at columns i and l_s + j;
/// the phase row carries ones at the same offsets shifted by l. No optical
/// data enters the construction.
pub fn coupling_jacobian(pairs: &[(u32, u32)], n_sources: usize, n_detectors: usize) -> CouplingJacobian {
    let m = pairs.len();
    let l = n_sources + n_detectors;
    let mut matrix = DMatrix::zeros(2 * m, 2 * l);
    let mut entries = Vec::with_capacity(4 * m);
    for (k, &(s, d)) in pairs.iter().enumerate() {
        debug_assert!((s as usize) < n_sources && (d as usize) < n_detectors);
        let amp_cols = [s as usize, n_sources + d as usize];
        for c in amp_cols {
            matrix[(k, c)] = 1.0;
            entries.push((k as u32, c as u32));
            matrix[(m + k, l + c)] = 1.0;
            entries.push(((m + k) as u32, (l + c) as u32));
        }
    }
    CouplingJacobian {
        matrix,
        n_pairs: m,
        n_sources,
        n_detectors,
        entries,
    }
}

/// Which nuisance a projection was built against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Coupling,
    Roni,
    Baseline,
    Combined,
    Custom,
}

/// Symmetric idempotent operator onto the orthogonal complement of a
/// recorded nullspace basis.
#[derive(Debug, Clone)]
pub struct ProjectionOperator {
    /// Dense 2m x 2m projection matrix.
    pub matrix: DMatrix<f64>,
    /// Orthonormal basis of the annihilated subspace (2m x k).
    pub nullspace_basis: DMatrix<f64>,
    /// rank(P) = 2m - k.
    pub rank: usize,
    pub kind: ProjectionKind,
}

impl ProjectionOperator {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Dimension of the annihilated subspace.
    pub fn nullity(&self) -> usize {
        self.nullspace_basis.ncols()
    }

    /// True when the basis was empty and P degenerated to the identity.
    pub fn is_identity(&self) -> bool {
        self.nullity() == 0
    }

    pub fn identity(dim: usize, kind: ProjectionKind) -> Self {
        ProjectionOperator {
            matrix: DMatrix::identity(dim, dim),
            nullspace_basis: DMatrix::zeros(dim, 0),
            rank: dim,
            kind,
        }
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    pub fn apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * m
    }
}

/// Projection onto the orthogonal complement of the range of `columns`.
///
/// A rank-revealing SVD absorbs linearly dependent and zero columns, so the
/// construction is the pseudo-inverse form of `I - B (B^T B)^-1 B^T` and is
/// safe for rank-deficient input. A zero matrix degenerates to the identity.
pub fn projection_from_basis(
    columns: &DMatrix<f64>,
    rank_tolerance: f64,
    kind: ProjectionKind,
) -> ProjectionOperator {
    let dim = columns.nrows();
    if columns.ncols() == 0 {
        return ProjectionOperator::identity(dim, kind);
    }
    let svd = columns.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max <= 0.0 {
        return ProjectionOperator::identity(dim, kind);
    }
    let cut = rank_tolerance * sigma_max;
    let retained: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter_map(|(i, s)| (*s > cut).then_some(i))
        .collect();
    let mut basis = DMatrix::zeros(dim, retained.len());
    for (new, &old) in retained.iter().enumerate() {
        basis.set_column(new, &u.column(old));
    }
    fix_column_signs(&mut basis);
    let mut matrix = DMatrix::identity(dim, dim) - &basis * basis.transpose();
    // Symmetrize away the last bits of rounding.
    let matrix_t = matrix.transpose();
    matrix = (matrix + matrix_t) * 0.5;
    ProjectionOperator {
        matrix,
        rank: dim - basis.ncols(),
        nullspace_basis: basis,
        kind,
    }
}

/// Largest-magnitude entry of each column is made positive so serialized
/// bases do not flip between runs.
fn fix_column_signs(basis: &mut DMatrix<f64>) {
    for mut col in basis.column_iter_mut() {
        let mut lead = 0.0f64;
        for v in col.iter() {
            if v.abs() > lead.abs() {
                lead = *v;
            }
        }
        if lead < 0.0 {
            for v in col.iter_mut() {
                *v = -*v;
            }
        }
    }
}

/// Positive semidefinite weight for the nuisance subspace constructions.
#[derive(Debug, Clone, Copy)]
pub enum SpsdWeight<'a> {
    Identity,
    Sparse(&'a CsrMatrix),
    Dense(&'a DMatrix<f64>),
}

impl SpsdWeight<'_> {
    /// `J W J^T` for a dense J with this weight.
    fn sandwich(&self, j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            SpsdWeight::Identity => Ok(j * j.transpose()),
            SpsdWeight::Dense(w) => {
                if w.nrows() != j.ncols() || w.ncols() != j.ncols() {
                    return Err(Error::Shape(format!(
                        "weight is {}x{} for a Jacobian with {} columns",
                        w.nrows(),
                        w.ncols(),
                        j.ncols()
                    )));
                }
                Ok(j * *w * j.transpose())
            }
            SpsdWeight::Sparse(w) => {
                if w.nrows() != j.ncols() || w.ncols() != j.ncols() {
                    return Err(Error::Shape(format!(
                        "weight is {}x{} for a Jacobian with {} columns",
                        w.nrows(),
                        w.ncols(),
                        j.ncols()
                    )));
                }
                // Rows of (J W): W is symmetric, so W J(r,:)^T works row-wise.
                let mut jw = DMatrix::zeros(j.nrows(), j.ncols());
                let mut row = vec![0.0; j.ncols()];
                for r in 0..j.nrows() {
                    for c in 0..j.ncols() {
                        row[c] = j[(r, c)];
                    }
                    let wr = w.matvec(&row);
                    for c in 0..j.ncols() {
                        jw[(r, c)] = wr[c];
                    }
                }
                Ok(&jw * j.transpose())
            }
        }
    }
}

/// Eigen-subspace of a weighted nuisance Gram matrix.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    /// Orthonormal columns, one per retained eigendirection (2m x k).
    pub columns: DMatrix<f64>,
    /// Eigenvalues matching the columns, descending.
    pub eigenvalues: Vec<f64>,
    /// Requested dimension; fewer columns are returned when the numerical
    /// rank of the Gram matrix is smaller.
    pub requested: usize,
}

impl SubspaceBasis {
    pub fn was_truncated(&self) -> bool {
        self.columns.ncols() < self.requested
    }
}

/// Top-k eigenvectors of `J~ A~ J~^T`, the directions in data space most
/// affected by the weighted nuisance parameter. With the identity weight
/// these are the first left singular vectors of the nuisance Jacobian.
pub fn roni_subspace(
    j_tilde: &DMatrix<f64>,
    a_tilde: SpsdWeight<'_>,
    k: usize,
) -> Result<SubspaceBasis> {
    if k == 0 || k > j_tilde.nrows() {
        return Err(Error::Config(format!(
            "subspace dimension {k} outside 1..={}",
            j_tilde.nrows()
        )));
    }
    let gram = a_tilde.sandwich(j_tilde)?;
    top_eigen_subspace(gram, k)
}

/// Top-k eigenvectors of the summed weighted difference-Jacobian Gram
/// matrix `sum_i Jhat_i A Jhat_i^T`.
pub fn baseline_subspace(
    diff_jacobians: &[DMatrix<f64>],
    a: SpsdWeight<'_>,
    k: usize,
) -> Result<SubspaceBasis> {
    let first = diff_jacobians
        .first()
        .ok_or_else(|| Error::Config("no difference Jacobians given".into()))?;
    if k == 0 || k > first.nrows() {
        return Err(Error::Config(format!(
            "subspace dimension {k} outside 1..={}",
            first.nrows()
        )));
    }
    let mut gram = DMatrix::zeros(first.nrows(), first.nrows());
    for j in diff_jacobians {
        if j.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "difference Jacobians disagree in shape: {:?} vs {:?}",
                j.shape(),
                first.shape()
            )));
        }
        gram += a.sandwich(j)?;
    }
    top_eigen_subspace(gram, k)
}

fn top_eigen_subspace(gram: DMatrix<f64>, k: usize) -> Result<SubspaceBasis> {
    let dim = gram.nrows();
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda_max = eig.eigenvalues[order[0]].max(0.0);
    // Directions with eigenvalues at numerical zero carry no nuisance
    // energy; keeping them would annihilate arbitrary data directions.
    let keep: Vec<usize> = order
        .iter()
        .copied()
        .take(k)
        .filter(|&i| eig.eigenvalues[i] > RANK_TOLERANCE * lambda_max && eig.eigenvalues[i] > 0.0)
        .collect();
    let mut columns = DMatrix::zeros(dim, keep.len());
    let mut eigenvalues = Vec::with_capacity(keep.len());
    for (new, &old) in keep.iter().enumerate() {
        columns.set_column(new, &eig.eigenvectors.column(old));
        eigenvalues.push(eig.eigenvalues[old]);
    }
    fix_column_signs(&mut columns);
    Ok(SubspaceBasis {
        columns,
        eigenvalues,
        requested: k,
    })
}

/// Projection annihilating the stacked nuisance directions
/// `[J_c, V~, V]`; any subset may be present and linear dependence among
/// the stacked columns is absorbed by the rank-revealing construction.
pub fn combined_projection(
    coupling: Option<&CouplingJacobian>,
    roni_basis: Option<&DMatrix<f64>>,
    baseline_basis: Option<&DMatrix<f64>>,
    rank_tolerance: f64,
) -> Result<ProjectionOperator> {
    let mut blocks: Vec<&DMatrix<f64>> = Vec::new();
    if let Some(c) = coupling {
        blocks.push(&c.matrix);
    }
    if let Some(v) = roni_basis {
        blocks.push(v);
    }
    if let Some(v) = baseline_basis {
        blocks.push(v);
    }
    let Some(first) = blocks.first() else {
        return Err(Error::Config(
            "combined projection needs at least one nuisance block".into(),
        ));
    };
    let rows = first.nrows();
    let total_cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut stacked = DMatrix::zeros(rows, total_cols);
    let mut at = 0;
    for block in blocks {
        if block.nrows() != rows {
            return Err(Error::Shape(format!(
                "nuisance blocks disagree in row count: {} vs {rows}",
                block.nrows()
            )));
        }
        for c in 0..block.ncols() {
            stacked.set_column(at, &block.column(c));
            at += 1;
        }
    }
    Ok(projection_from_basis(
        &stacked,
        rank_tolerance,
        ProjectionKind::Combined,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn random_matrix(rows: usize, cols: usize, stream: &mut Stream) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| stream.next_range(-1.0, 1.0))
    }

    fn random_spsd(n: usize, stream: &mut Stream) -> DMatrix<f64> {
        let a = random_matrix(n, n, stream);
        &a * a.transpose()
    }

    /// Principal angles between equal-dimension subspaces via the SVD of
    /// Qa^T Qb; returns the largest angle's sine.
    fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        assert_eq!(a.ncols(), b.ncols());
        let qa = orthonormalize(a);
        let qb = orthonormalize(b);
        let overlap = qa.transpose() * qb;
        let svd = overlap.svd(false, false);
        let min_cos = svd
            .singular_values
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
            .min(1.0);
        (1.0 - min_cos * min_cos).max(0.0).sqrt()
    }

    fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
        let svd = a.clone().svd(true, false);
        let u = svd.u.unwrap();
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-12 * smax)
            .count();
        u.columns(0, rank).into_owned()
    }

    #[test]
    fn minimal_coupling_jacobian() {
        let jc = coupling_jacobian(&[(0, 0)], 1, 1);
        let expected = DMatrix::from_row_slice(
            2,
            4,
            &[
                1.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 1.0,
            ],
        );
        assert_eq!(jc.matrix, expected);
    }

    #[test]
    fn published_geometry_shape() {
        // 15 sources x 21 detectors with 210 retained pairs gives a
        // 420 x 72 coupling Jacobian.
        let mut pairs = Vec::new();
        'outer: for s in 0..15u32 {
            for d in 0..21u32 {
                pairs.push((s, d));
                if pairs.len() == 210 {
                    break 'outer;
                }
            }
        }
        let jc = coupling_jacobian(&pairs, 15, 21);
        assert_eq!(jc.matrix.nrows(), 420);
        assert_eq!(jc.matrix.ncols(), 72);
    }

    /// Incidence-counting oracle: every row sums to 2 and each column sums
    /// to the number of pairs its optode participates in.
    #[test]
    fn row_and_column_sums() {
        let pairs = vec![(0, 0), (0, 1), (1, 0), (1, 2), (2, 2)];
        let (ls, ld) = (3, 3);
        let jc = coupling_jacobian(&pairs, ls, ld);
        for r in 0..jc.matrix.nrows() {
            let sum: f64 = jc.matrix.row(r).iter().sum();
            assert_eq!(sum, 2.0, "row {r}");
        }
        let l = ls + ld;
        for s in 0..ls {
            let expected = pairs.iter().filter(|(ps, _)| *ps == s as u32).count() as f64;
            let amp: f64 = jc.matrix.column(s).iter().sum();
            let phase: f64 = jc.matrix.column(l + s).iter().sum();
            assert_eq!(amp, expected);
            assert_eq!(phase, expected);
        }
        for d in 0..ld {
            let expected = pairs.iter().filter(|(_, pd)| *pd == d as u32).count() as f64;
            let amp: f64 = jc.matrix.column(ls + d).iter().sum();
            let phase: f64 = jc.matrix.column(l + ls + d).iter().sum();
            assert_eq!(amp, expected);
            assert_eq!(phase, expected);
        }
    }

    #[test]
    fn projection_annihilates_its_basis() {
        let jc = coupling_jacobian(&[(0, 0)], 1, 1);
        let p = projection_from_basis(&jc.matrix, RANK_TOLERANCE, ProjectionKind::Coupling);
        let residual = &p.matrix * &jc.matrix;
        assert!(residual.amax() < 1e-12);
    }

    #[test]
    fn orthonormal_input_gives_dimension_count() {
        let mut stream = Stream::from_key(&[21]);
        let q = orthonormalize(&random_matrix(12, 5, &mut stream));
        assert_eq!(q.ncols(), 5);
        let p = projection_from_basis(&q, RANK_TOLERANCE, ProjectionKind::Custom);
        assert_eq!(p.rank, 12 - 5);
        assert_eq!(p.nullity(), 5);
    }

    #[test]
    fn zero_matrix_degenerates_to_identity() {
        let z = DMatrix::zeros(6, 3);
        let p = projection_from_basis(&z, RANK_TOLERANCE, ProjectionKind::Custom);
        assert!(p.is_identity());
        assert_eq!(p.rank, 6);
        assert_eq!(p.matrix, DMatrix::identity(6, 6));
    }

    /// The unsigned bipartite incidence structure makes J_c rank deficient:
    /// numerical rank 2(l - 1) on a connected pair graph, verified against
    /// an SVD oracle.
    #[test]
    fn connected_coupling_graph_rank_deficiency() {
        // 3 sources, 4 detectors, all pairs: connected bipartite graph.
        let mut pairs = Vec::new();
        for s in 0..3u32 {
            for d in 0..4u32 {
                pairs.push((s, d));
            }
        }
        let jc = coupling_jacobian(&pairs, 3, 4);
        let l = 7;
        let p = projection_from_basis(&jc.matrix, RANK_TOLERANCE, ProjectionKind::Coupling);
        assert_eq!(p.nullity(), 2 * (l - 1));
        assert_eq!(p.rank, 2 * pairs.len() - 2 * (l - 1));

        let svd = jc.matrix.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let numerical_rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > RANK_TOLERANCE * smax)
            .count();
        assert_eq!(numerical_rank, 2 * (l - 1));
    }

    #[test]
    fn projector_is_symmetric_idempotent() {
        let mut stream = Stream::from_key(&[22]);
        for k in [1usize, 3, 7] {
            let basis = random_matrix(14, k, &mut stream);
            let p = projection_from_basis(&basis, RANK_TOLERANCE, ProjectionKind::Custom);
            let sym = (&p.matrix - p.matrix.transpose()).amax();
            assert!(sym < 1e-13, "symmetry defect {sym}");
            let idem = (&p.matrix * &p.matrix - &p.matrix).norm();
            assert!(idem <= 1e-10 * p.matrix.norm(), "idempotence defect {idem}");
            let annihilation = (&p.matrix * &basis).amax();
            assert!(annihilation <= 1e-10 * basis.amax());
            let null = (&p.matrix * &p.nullspace_basis).amax();
            assert!(null < 1e-10);
        }
    }

    #[test]
    fn projector_depends_only_on_range() {
        let mut stream = Stream::from_key(&[23]);
        let basis = random_matrix(10, 4, &mut stream);
        let p = projection_from_basis(&basis, RANK_TOLERANCE, ProjectionKind::Custom);

        // Permute, scale, and duplicate columns.
        let mut mangled = DMatrix::zeros(10, 6);
        mangled.set_column(0, &(basis.column(2) * 3.5));
        mangled.set_column(1, &basis.column(0));
        mangled.set_column(2, &(basis.column(1) * 0.1));
        mangled.set_column(3, &basis.column(3));
        mangled.set_column(4, &(basis.column(0) * 2.0)); // duplicate
        mangled.set_column(5, &basis.column(2)); // duplicate
        let q = projection_from_basis(&mangled, RANK_TOLERANCE, ProjectionKind::Custom);
        assert_eq!(p.rank, q.rank);
        assert!((&p.matrix - &q.matrix).amax() < 1e-10);
    }

    #[test]
    fn rank_one_roni_subspace_is_the_column() {
        let mut j = DMatrix::zeros(6, 3);
        let col = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        j.set_column(1, &col);
        let basis = roni_subspace(&j, SpsdWeight::Identity, 1).unwrap();
        assert_eq!(basis.columns.ncols(), 1);
        let unit = &col / col.norm();
        let got = basis.columns.column(0);
        let align: f64 = unit.dot(&got.into_owned());
        assert!((align.abs() - 1.0).abs() < 1e-12);
    }

    /// Dense eigendecomposition oracle on a random weighted instance.
    #[test]
    fn roni_subspace_matches_dense_eigensolve() {
        let mut stream = Stream::from_key(&[24]);
        let j = random_matrix(20, 30, &mut stream);
        let w = random_spsd(30, &mut stream);
        let k = 6;
        let basis = roni_subspace(&j, SpsdWeight::Dense(&w), k).unwrap();
        assert_eq!(basis.columns.ncols(), k);

        let gram = &j * &w * j.transpose();
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..20).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut oracle = DMatrix::zeros(20, k);
        for (new, &old) in order.iter().take(k).enumerate() {
            oracle.set_column(new, &eig.eigenvectors.column(old));
        }
        assert!(
            subspace_distance(&basis.columns, &oracle) < 1e-8,
            "subspaces diverge"
        );
        for pair in basis.eigenvalues.windows(2) {
            assert!(pair[0] >= pair[1], "eigenvalues not descending");
        }
    }

    #[test]
    fn sparse_and_dense_weights_agree() {
        let mut stream = Stream::from_key(&[25]);
        let j = random_matrix(10, 15, &mut stream);
        let w = random_spsd(15, &mut stream);
        let ws = CsrMatrix::from_dense(&w);
        let a = roni_subspace(&j, SpsdWeight::Dense(&w), 4).unwrap();
        let b = roni_subspace(&j, SpsdWeight::Sparse(&ws), 4).unwrap();
        assert!(subspace_distance(&a.columns, &b.columns) < 1e-9);
    }

    #[test]
    fn requesting_beyond_rank_truncates() {
        let mut j = DMatrix::zeros(8, 4);
        let mut stream = Stream::from_key(&[26]);
        // Rank 2: two independent columns.
        let a = DVector::from_fn(8, |_, _| stream.next_range(-1.0, 1.0));
        let b = DVector::from_fn(8, |_, _| stream.next_range(-1.0, 1.0));
        j.set_column(0, &a);
        j.set_column(1, &b);
        j.set_column(2, &(a.clone() * 2.0));
        j.set_column(3, &(b.clone() - &a));
        let basis = roni_subspace(&j, SpsdWeight::Identity, 5).unwrap();
        assert_eq!(basis.columns.ncols(), 2);
        assert!(basis.was_truncated());
    }

    #[test]
    fn single_term_baseline_equals_roni_construction() {
        let mut stream = Stream::from_key(&[27]);
        let j = random_matrix(12, 20, &mut stream);
        let a = baseline_subspace(std::slice::from_ref(&j), SpsdWeight::Identity, 4).unwrap();
        let b = roni_subspace(&j, SpsdWeight::Identity, 4).unwrap();
        assert_eq!(a.columns, b.columns);
    }

    /// Rescaling one difference matrix rescales its Gram summand
    /// quadratically; the result matches a recomputed dense eigensolve.
    #[test]
    fn baseline_sum_rescaling_matches_oracle() {
        let mut stream = Stream::from_key(&[28]);
        let j1 = random_matrix(10, 14, &mut stream);
        let j2 = random_matrix(10, 14, &mut stream);
        let w = random_spsd(14, &mut stream);
        let scale = 2.5;
        let scaled = baseline_subspace(
            &[j1.clone() * scale, j2.clone()],
            SpsdWeight::Dense(&w),
            3,
        )
        .unwrap();

        let gram = (&j1 * &w * j1.transpose()) * (scale * scale) + &j2 * &w * j2.transpose();
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut oracle = DMatrix::zeros(10, 3);
        for (new, &old) in order.iter().take(3).enumerate() {
            oracle.set_column(new, &eig.eigenvectors.column(old));
        }
        assert!(subspace_distance(&scaled.columns, &oracle) < 1e-8);
    }

    #[test]
    fn combined_with_empty_extras_is_pure_coupling() {
        let mut pairs = Vec::new();
        for s in 0..2u32 {
            for d in 0..3u32 {
                pairs.push((s, d));
            }
        }
        let jc = coupling_jacobian(&pairs, 2, 3);
        let pure = projection_from_basis(&jc.matrix, RANK_TOLERANCE, ProjectionKind::Coupling);
        let combined = combined_projection(Some(&jc), None, None, RANK_TOLERANCE).unwrap();
        assert!((&pure.matrix - &combined.matrix).amax() < 1e-12);
    }

    #[test]
    fn duplicated_columns_leave_projection_unchanged() {
        let mut stream = Stream::from_key(&[29]);
        let v = random_matrix(12, 3, &mut stream);
        let mut dup = DMatrix::zeros(12, 4);
        for c in 0..3 {
            dup.set_column(c, &v.column(c));
        }
        dup.set_column(3, &v.column(1));
        let p = combined_projection(None, Some(&v), None, RANK_TOLERANCE).unwrap();
        let q = combined_projection(None, Some(&dup), None, RANK_TOLERANCE).unwrap();
        assert!((&p.matrix - &q.matrix).amax() < 1e-10);
    }

    /// SVD range-comparison oracle: range(I - P) equals the range of the
    /// stacked nuisance matrix.
    #[test]
    fn complement_range_matches_stack() {
        let mut stream = Stream::from_key(&[30]);
        let pairs: Vec<(u32, u32)> = (0..3u32).flat_map(|s| (0..3u32).map(move |d| (s, d))).collect();
        let jc = coupling_jacobian(&pairs, 3, 3);
        let v1 = random_matrix(18, 2, &mut stream);
        let v2 = random_matrix(18, 2, &mut stream);
        let p = combined_projection(Some(&jc), Some(&v1), Some(&v2), RANK_TOLERANCE).unwrap();

        let mut stacked = DMatrix::zeros(18, jc.matrix.ncols() + 4);
        for c in 0..jc.matrix.ncols() {
            stacked.set_column(c, &jc.matrix.column(c));
        }
        for c in 0..2 {
            stacked.set_column(jc.matrix.ncols() + c, &v1.column(c));
            stacked.set_column(jc.matrix.ncols() + 2 + c, &v2.column(c));
        }
        let complement = DMatrix::identity(18, 18) - &p.matrix;
        let range_c = orthonormalize(&complement);
        let range_s = orthonormalize(&stacked);
        assert_eq!(range_c.ncols(), range_s.ncols());
        assert!(subspace_distance(&range_c, &range_s) < 1e-8);
    }

    /// Among all rank-k orthogonal projections, the returned subspace
    /// maximizes the captured weighted nuisance energy; compare the trace
    /// against the eigenvalue tail bound from a dense solve.
    #[test]
    fn eigen_subspace_is_trace_optimal() {
        let mut stream = Stream::from_key(&[31]);
        let j = random_matrix(12, 18, &mut stream);
        let w = random_spsd(18, &mut stream);
        let k = 4;
        let basis = roni_subspace(&j, SpsdWeight::Dense(&w), k).unwrap();
        let gram = &j * &w * j.transpose();
        let captured = (basis.columns.transpose() * &gram * &basis.columns).trace();

        let eig = gram.clone().symmetric_eigen();
        let mut lambda: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        lambda.sort_by(|a, b| b.total_cmp(a));
        let best: f64 = lambda.iter().take(k).sum();
        assert!(
            (captured - best).abs() <= 1e-8 * best.abs(),
            "captured {captured} vs optimal {best}"
        );

        // Any random rank-k subspace captures no more.
        for _ in 0..10 {
            let q = orthonormalize(&random_matrix(12, k, &mut stream));
            let other = (q.transpose() * &gram * &q).trace();
            assert!(other <= best + 1e-8 * best.abs());
        }
    }
}
