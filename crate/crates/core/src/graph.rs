//! Weighted digraphs, their interaction matrices, and spectral analysis.
//!
//! Edge direction follows the information flow of the consensus protocol: a
//! nonzero entry `a[i][j]` means agent `i` receives information from agent
//! `j`. The Laplacian `L = D - A` (with `D = diag(A * 1)`) therefore has
//! exactly zero row sums, and the interaction matrix `P = I - eps * L` is
//! row stochastic for any sampling period `eps`.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, Inverse, Norm, SVD};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Residual tolerance for accepting an eigenpair of the Laplacian.
pub const EIGENPAIR_TOL: f64 = 1e-8;

/// Relative singular-value cutoff below which the eigenvector basis is
/// treated as rank deficient.
const BASIS_RANK_TOL: f64 = 1e-10;

/// A weighted directed graph on `n` agents, stored as a dense nonnegative
/// adjacency matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    n: usize,
    adjacency: Array2<f64>,
}

impl WeightedDigraph {
    /// Build a graph from an adjacency matrix, validating shape, sign,
    /// diagonal, and strong connectivity.
    pub fn from_adjacency(adjacency: Array2<f64>) -> Result<Self> {
        let g = Self::from_adjacency_unchecked(adjacency)?;
        if !g.is_strongly_connected() {
            return Err(Error::InvalidParameter(
                "digraph is not strongly connected".into(),
            ));
        }
        Ok(g)
    }

    /// Build a graph without the connectivity check. Shape, diagonal, and
    /// nonnegativity are still enforced.
    pub fn from_adjacency_unchecked(adjacency: Array2<f64>) -> Result<Self> {
        let (rows, cols) = adjacency.dim();
        if rows != cols {
            return Err(Error::DimensionMismatch(format!(
                "adjacency must be square, got {rows}x{cols}"
            )));
        }
        for i in 0..rows {
            if adjacency[[i, i]] != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "adjacency diagonal must be zero (entry [{i},{i}] = {})",
                    adjacency[[i, i]]
                )));
            }
        }
        if adjacency.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParameter(
                "adjacency weights must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { n: rows, adjacency })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    /// Out-degree vector `A * 1` (row sums).
    pub fn degrees(&self) -> Array1<f64> {
        self.adjacency.sum_axis(ndarray::Axis(1))
    }

    /// Diagonal degree matrix `D = diag(A * 1)`.
    pub fn degree_matrix(&self) -> Array2<f64> {
        Array2::from_diag(&self.degrees())
    }

    /// Laplacian `L = D - A`; row sums are zero by construction.
    pub fn laplacian(&self) -> Array2<f64> {
        let mut l = -self.adjacency.clone();
        for (i, d) in self.degrees().iter().enumerate() {
            l[[i, i]] += d;
        }
        l
    }

    /// Largest diagonal entry of `D`; the stability bound for the sampling
    /// period is `eps < 1 / d_max`.
    pub fn d_max(&self) -> f64 {
        self.degrees().iter().cloned().fold(0.0, f64::max)
    }

    /// Strong connectivity: every agent reachable from agent 0 along edge
    /// direction and along reversed edges.
    pub fn is_strongly_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        self.reaches_all(false) && self.reaches_all(true)
    }

    fn reaches_all(&self, reversed: bool) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..self.n {
                let w = if reversed {
                    self.adjacency[[j, i]]
                } else {
                    self.adjacency[[i, j]]
                };
                if w != 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Row-stochastic interaction matrix `P = I - eps * L` together with the
/// sampling period that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    p: Array2<f64>,
    epsilon: f64,
}

impl InteractionMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    /// Wrap an existing row-stochastic matrix (row sums checked to 1e-9).
    pub fn from_matrix(p: Array2<f64>, epsilon: f64) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "interaction matrix must be square, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        if epsilon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sampling period must be positive, got {epsilon}"
            )));
        }
        for (i, row) in p.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "row {i} sums to {s}, expected 1"
                )));
            }
        }
        Ok(Self { p, epsilon })
    }
}

/// `P = I - eps * L` for `0 < eps < 1/d_max`.
pub fn interaction_matrix(g: &WeightedDigraph, epsilon: f64) -> Result<InteractionMatrix> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sampling period must be positive, got {epsilon}"
        )));
    }
    let d_max = g.d_max();
    if d_max > 0.0 && epsilon >= 1.0 / d_max {
        return Err(Error::InvalidParameter(format!(
            "sampling period {epsilon} outside (0, {:.6}) for d_max = {d_max}",
            1.0 / d_max
        )));
    }
    let mut p = -epsilon * &g.laplacian();
    for i in 0..g.n() {
        p[[i, i]] += 1.0;
    }
    Ok(InteractionMatrix { p, epsilon })
}

/// Eigenstructure of a Laplacian with simple (diagonalizable) spectrum.
///
/// Eigenvalues are sorted by modulus, so index 0 carries the zero eigenvalue
/// of a connected digraph. Right eigenvectors are the columns of
/// `right_vectors` with the first column rescaled to the all-ones vector;
/// left eigenvectors are the columns of `left_vectors` and satisfy
/// `w_i^T v_j = delta_ij` with the plain (unconjugated) transpose.
#[derive(Debug, Clone)]
pub struct SpectralData {
    eigenvalues: Vec<Complex64>,
    right_vectors: Array2<Complex64>,
    left_vectors: Array2<Complex64>,
}

impl SpectralData {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    /// Column `i` is the right eigenvector `v_i`.
    pub fn right_vectors(&self) -> &Array2<Complex64> {
        &self.right_vectors
    }

    /// Column `i` is the left eigenvector `w_i`.
    pub fn left_vectors(&self) -> &Array2<Complex64> {
        &self.left_vectors
    }

    /// Modulus of the smallest nonzero eigenvalue.
    pub fn lambda2_modulus(&self) -> f64 {
        self.eigenvalues[1].norm()
    }

    /// True when the smallest nonzero eigenvalue is real (or within `rel_tol`
    /// of the real axis in the sense `Re(lambda_2) >= (1 - rel_tol) * |lambda_2|`).
    pub fn lambda2_effectively_real(&self, rel_tol: f64) -> bool {
        let l2 = self.eigenvalues[1];
        l2.re >= (1.0 - rel_tol) * l2.norm()
    }

    /// Rebuild `V diag(lambda) V^{-1}` and return its real part; used to
    /// verify the decomposition against the original Laplacian.
    pub fn reconstruct(&self) -> Array2<f64> {
        let n = self.n();
        let mut acc = Array2::<Complex64>::zeros((n, n));
        for (i, lam) in self.eigenvalues.iter().enumerate() {
            let v = self.right_vectors.column(i);
            let w = self.left_vectors.column(i);
            for r in 0..n {
                for c in 0..n {
                    acc[[r, c]] += lam * v[r] * w[c];
                }
            }
        }
        acc.mapv(|z| z.re)
    }
}

/// Diagonalize a zero-row-sum Laplacian into biorthogonal eigenpairs.
///
/// Defective or disconnected Laplacians are rejected rather than decomposed
/// into generalized chains; random weighted digraphs are generically
/// diagonalizable so this restriction only bites on constructed inputs.
pub fn spectral_decompose(l: &Array2<f64>) -> Result<SpectralData> {
    let n = l.nrows();
    if n != l.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "laplacian must be square, got {}x{}",
            n,
            l.ncols()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter("need at least 2 agents".into()));
    }
    let scale = l.norm_l2().max(1.0);
    for (i, row) in l.rows().into_iter().enumerate() {
        let s: f64 = row.sum();
        if s.abs() > 1e-8 * scale {
            return Err(Error::InvalidParameter(format!(
                "laplacian row {i} sums to {s:.3e}, expected 0"
            )));
        }
    }

    let (vals, vecs) = l
        .eig()
        .map_err(|e| Error::DefectiveMatrix(format!("eigendecomposition failed: {e}")))?;

    // Sort by modulus; break ties on (re, im) so the order is reproducible.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (za, zb) = (vals[a], vals[b]);
        za.norm()
            .partial_cmp(&zb.norm())
            .unwrap()
            .then(za.re.partial_cmp(&zb.re).unwrap())
            .then(za.im.partial_cmp(&zb.im).unwrap())
    });

    let eigenvalues: Vec<Complex64> = order.iter().map(|&i| vals[i]).collect();
    let max_mod = eigenvalues.last().map(|z| z.norm()).unwrap_or(0.0);
    let zero_tol = 1e-7 * (1.0 + max_mod);
    let near_zero = eigenvalues.iter().filter(|z| z.norm() < zero_tol).count();
    if near_zero != 1 {
        return Err(Error::InvalidParameter(format!(
            "{near_zero} near-zero eigenvalues; expected exactly 1 (connected digraph)"
        )));
    }

    let mut right = Array2::<Complex64>::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        right.column_mut(col).assign(&vecs.column(i));
    }

    // The zero eigenvector of a zero-row-sum Laplacian is the ones vector;
    // rescale the computed one onto it.
    let mean = right.column(0).sum() / Complex64::new(n as f64, 0.0);
    if mean.norm() < 1e-12 {
        return Err(Error::DefectiveMatrix(
            "zero-eigenvalue eigenvector has zero mean; cannot scale to ones".into(),
        ));
    }
    {
        let mut v1 = right.column_mut(0);
        v1.mapv_inplace(|z| z / mean);
        if v1.iter().any(|z| (z - Complex64::new(1.0, 0.0)).norm() > 1e-6) {
            return Err(Error::DefectiveMatrix(
                "zero-eigenvalue eigenvector is not constant; graph disconnected or defective"
                    .into(),
            ));
        }
        v1.fill(Complex64::new(1.0, 0.0));
    }

    // Rank check on the eigenvector basis before inverting it. An exactly
    // defective matrix shows up numerically as a pair of eigenvalues split by
    // ~sqrt(machine eps) whose eigenvectors are nearly parallel, so the
    // coincidence check uses a looser conditioning threshold than the hard
    // rank cutoff. Repeated eigenvalues with a well-conditioned basis (e.g.
    // complete graphs) pass.
    let (_, sv, _) = right
        .svd(false, false)
        .map_err(|e| Error::DefectiveMatrix(format!("svd of eigenbasis failed: {e}")))?;
    let (s_max, s_min) = (sv[0], sv[sv.len() - 1]);
    if s_min <= BASIS_RANK_TOL * s_max {
        return Err(Error::DefectiveMatrix(format!(
            "eigenvector basis is rank deficient (sigma_min/sigma_max = {:.3e})",
            s_min / s_max
        )));
    }
    let min_gap = eigenvalues
        .iter()
        .enumerate()
        .flat_map(|(i, a)| eigenvalues[i + 1..].iter().map(move |b| (a - b).norm()))
        .fold(f64::INFINITY, f64::min);
    if min_gap < 1e-6 * (1.0 + max_mod) && s_min <= 1e-6 * s_max {
        return Err(Error::DefectiveMatrix(format!(
            "eigenvalues coincide within {min_gap:.3e} and the basis is ill conditioned \
             (sigma_min/sigma_max = {:.3e})",
            s_min / s_max
        )));
    }

    // Rows of V^{-1} are the left eigenvectors in the plain-transpose
    // convention, already normalized so w_i^T v_i = 1.
    let vinv = right
        .inv()
        .map_err(|e| Error::DefectiveMatrix(format!("eigenbasis inversion failed: {e}")))?;
    let left_vectors = vinv.t().to_owned();

    let data = SpectralData {
        eigenvalues,
        right_vectors: right,
        left_vectors,
    };

    // Defining residuals of every eigenpair.
    let lc = l.mapv(|x| Complex64::new(x, 0.0));
    for i in 0..n {
        let lam = data.eigenvalues[i];
        let v = data.right_vectors.column(i);
        let w = data.left_vectors.column(i);
        let rv = v.mapv(|z| z * lam) - lc.dot(&v);
        let rw = w.mapv(|z| z * lam) - lc.t().dot(&w);
        let (nv, nw) = (rv.norm_l2(), rw.norm_l2());
        if nv > EIGENPAIR_TOL * (1.0 + scale) || nw > EIGENPAIR_TOL * (1.0 + scale) {
            return Err(Error::DefectiveMatrix(format!(
                "eigenpair {i} residual too large (right {nv:.3e}, left {nw:.3e})"
            )));
        }
    }
    Ok(data)
}

/// Generate a strongly connected weighted digraph: a random Hamiltonian
/// cycle guarantees connectivity, then every remaining ordered pair gets an
/// edge with probability `density` and a weight drawn from `weight_range`.
/// Deterministic for a fixed seed.
pub fn random_connected_digraph(
    n: usize,
    density: f64,
    weight_range: (f64, f64),
    seed: u64,
) -> Result<WeightedDigraph> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 agents, got {n}"
        )));
    }
    let (lo, hi) = weight_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "weight range must satisfy 0 < lo <= hi, got ({lo}, {hi})"
        )));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "density must lie in (0, 1], got {density}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        if lo == hi {
            lo
        } else {
            rng.gen_range(lo..hi)
        }
    };

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let mut a = Array2::<f64>::zeros((n, n));
    for t in 0..n {
        let i = perm[t];
        let j = perm[(t + 1) % n];
        a[[i, j]] = draw(&mut rng);
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && a[[i, j]] == 0.0 && rng.gen_bool(density) {
                a[[i, j]] = draw(&mut rng);
            }
        }
    }
    WeightedDigraph::from_adjacency(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn two_node_complete_digraph_is_forced() {
        let g = random_connected_digraph(2, 1.0, (1.0, 1.0), 0).unwrap();
        assert_eq!(g.adjacency(), &array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = random_connected_digraph(7, 0.4, (0.5, 1.5), 42).unwrap();
        let b = random_connected_digraph(7, 0.4, (0.5, 1.5), 42).unwrap();
        assert_eq!(a.adjacency(), b.adjacency());
        let c = random_connected_digraph(7, 0.4, (0.5, 1.5), 43).unwrap();
        assert_ne!(a.adjacency(), c.adjacency());
    }

    /// Brute-force reachability over all ordered pairs.
    fn reachable_all_pairs(a: &Array2<f64>) -> bool {
        let n = a.nrows();
        for s in 0..n {
            let mut seen = vec![false; n];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    if a[[i, j] ] != 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            if seen.iter().any(|&x| !x) {
                return false;
            }
        }
        true
    }

    #[test]
    fn sparse_generation_stays_strongly_connected() {
        let g = random_connected_digraph(5, 0.4, (0.5, 1.5), 7).unwrap();
        assert!(reachable_all_pairs(g.adjacency()));
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(random_connected_digraph(1, 0.5, (1.0, 1.0), 0).is_err());
        assert!(random_connected_digraph(4, 0.5, (0.0, 1.0), 0).is_err());
        assert!(random_connected_digraph(4, 0.5, (2.0, 1.0), 0).is_err());
        assert!(random_connected_digraph(4, 0.0, (1.0, 2.0), 0).is_err());
    }

    #[test]
    fn interaction_matrix_direct_substitution() {
        let g = WeightedDigraph::from_adjacency(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let p = interaction_matrix(&g, 0.1).unwrap();
        assert_abs_diff_eq!(p.matrix()[[0, 0]], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(p.matrix()[[0, 1]], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(p.matrix()[[1, 0]], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(p.matrix()[[1, 1]], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn edgeless_graph_yields_identity() {
        let g = WeightedDigraph::from_adjacency_unchecked(Array2::zeros((3, 3))).unwrap();
        let p = interaction_matrix(&g, 0.7).unwrap();
        assert_eq!(p.matrix(), &Array2::<f64>::eye(3));
    }

    #[test]
    fn sampling_period_outside_stability_bound_is_rejected() {
        let g = WeightedDigraph::from_adjacency(array![[0.0, 2.0], [2.0, 0.0]]).unwrap();
        assert!(interaction_matrix(&g, 0.5).is_err());
        assert!(interaction_matrix(&g, 0.0).is_err());
        assert!(interaction_matrix(&g, -0.1).is_err());
        assert!(interaction_matrix(&g, 0.49).is_ok());
    }

    /// Power iteration estimate of the spectral radius, independent of the
    /// eigensolver.
    fn power_iteration_radius(m: &Array2<f64>, iters: usize) -> f64 {
        let n = m.nrows();
        let mut x = Array1::<f64>::from_shape_fn(n, |i| 1.0 + (i as f64) * 0.3);
        let mut lam = 0.0;
        for _ in 0..iters {
            let y = m.dot(&x);
            lam = y.norm_l2() / x.norm_l2();
            let ny = y.norm_l2();
            x = y / ny;
        }
        lam
    }

    #[test]
    fn spectral_radius_of_interaction_matrix_within_unit_disk() {
        let g = random_connected_digraph(5, 0.6, (0.5, 1.5), 3).unwrap();
        let eps = 0.5 / g.d_max();
        let p = interaction_matrix(&g, eps).unwrap();
        let spec = spectral_decompose(&g.laplacian()).unwrap();
        let radius = spec
            .eigenvalues()
            .iter()
            .map(|lam| (Complex64::new(1.0, 0.0) - eps * lam).norm())
            .fold(0.0, f64::max);
        assert!(radius <= 1.0 + 1e-12, "radius = {radius}");
        let pr = power_iteration_radius(p.matrix(), 500);
        assert!(pr <= 1.0 + 1e-6, "power-iteration radius = {pr}");
        assert_abs_diff_eq!(radius, 1.0, epsilon = 1e-12); // rho(P) = 1 via the ones vector
    }

    #[test]
    fn symmetric_two_node_laplacian_decomposes_exactly() {
        let l = array![[1.0, -1.0], [-1.0, 1.0]];
        let spec = spectral_decompose(&l).unwrap();
        assert!(spec.eigenvalues()[0].norm() < 1e-12);
        assert_abs_diff_eq!(spec.eigenvalues()[1].re, 2.0, epsilon = 1e-12);
        let v1 = spec.right_vectors().column(0);
        assert_abs_diff_eq!(v1[0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v1[1].re, 1.0, epsilon = 1e-12);
        let v2 = spec.right_vectors().column(1);
        assert_abs_diff_eq!((v2[0] + v2[1]).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn reconstruction_recovers_random_laplacians() {
        for seed in 0..100u64 {
            let n = 3 + (seed % 10) as usize;
            let g = random_connected_digraph(n, 0.5, (0.5, 1.5), seed).unwrap();
            let l = g.laplacian();
            let spec = spectral_decompose(&l).unwrap();
            let rel = (&spec.reconstruct() - &l).norm_l2() / l.norm_l2();
            assert!(rel < 1e-8, "seed {seed}: relative error {rel:.3e}");
        }
    }

    #[test]
    fn eigenpairs_are_biorthogonal() {
        let g = random_connected_digraph(6, 0.5, (0.5, 1.5), 11).unwrap();
        let spec = spectral_decompose(&g.laplacian()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let dot: Complex64 = spec
                    .left_vectors()
                    .column(i)
                    .iter()
                    .zip(spec.right_vectors().column(j).iter())
                    .map(|(w, v)| w * v)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (dot - Complex64::new(expect, 0.0)).norm() < 1e-8,
                    "w_{i}^T v_{j} = {dot}"
                );
            }
        }
    }

    #[test]
    fn coincident_eigenvalues_with_deficient_basis_are_rejected() {
        // Build S * J * S^{-1} with a 2x2 Jordan block for eigenvalue 1 and a
        // zero eigenvalue whose eigenvector is the ones column, so row sums
        // stay zero while the matrix is defective by construction.
        let s = array![[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let j = array![[0.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, 0.0, 1.0]];
        let s_inv = s.inv().unwrap();
        let l: Array2<f64> = s.dot(&j).dot(&s_inv);
        for row in l.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
        match spectral_decompose(&l) {
            Err(Error::DefectiveMatrix(_)) => {}
            other => panic!("expected DefectiveMatrix, got {other:?}"),
        }
    }

    #[test]
    fn repeated_eigenvalues_with_full_basis_are_accepted() {
        // Equal-weight complete digraph: the nonzero eigenvalue N*w repeats
        // N-1 times but the eigenbasis is full rank.
        let n = 5;
        let mut a = Array2::from_elem((n, n), 0.8);
        for i in 0..n {
            a[[i, i]] = 0.0;
        }
        let g = WeightedDigraph::from_adjacency(a).unwrap();
        let spec = spectral_decompose(&g.laplacian()).unwrap();
        let rel = (&spec.reconstruct() - &g.laplacian()).norm_l2() / g.laplacian().norm_l2();
        assert!(rel < 1e-8);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let l = array![
            [1.0, -1.0, 0.0, 0.0],
            [-1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, -1.0],
            [0.0, 0.0, -1.0, 1.0],
        ];
        assert!(spectral_decompose(&l).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn laplacian_and_interaction_row_sums(
            n in 3usize..12,
            density in 0.2f64..1.0,
            seed in 0u64..1000,
        ) {
            let g = random_connected_digraph(n, density, (0.5, 1.5), seed).unwrap();
            let l = g.laplacian();
            for row in l.rows() {
                prop_assert!(row.sum().abs() < 1e-12);
            }
            let p = interaction_matrix(&g, 0.5 / g.d_max()).unwrap();
            for row in p.matrix().rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            prop_assert!(g.is_strongly_connected());
        }
    }
}
