//! Linear algebra of the constraint distribution and the impact subspaces.
//!
//! At a configuration q the constraint rows mu(q) span the annihilator of
//! the admissible velocity space. At a boundary point the stacked rows of
//! db(q) and mu(q) span the subspace that carries the momentum jump of an
//! elastic impact, and its null space is the tangent directions along which
//! momentum is conserved.

use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::SystemSpec;

/// Orthonormal bases attached to the constraint distribution at one
/// configuration: columns of `tangent_basis` span the admissible velocities,
/// rows of `annihilator_basis` are the constraint one-forms mu(q) verbatim.
#[derive(Debug, Clone)]
pub struct DistributionBasis {
    pub q: DVector<f64>,
    /// n x (n - m), orthonormal columns spanning the kernel of mu(q).
    pub tangent_basis: DMatrix<f64>,
    /// m x n, the rows of mu(q) (not orthonormalized).
    pub annihilator_basis: DMatrix<f64>,
}

impl DistributionBasis {
    /// Dimension of the distribution, n - m.
    pub fn rank(&self) -> usize {
        self.tangent_basis.ncols()
    }
}

/// Subspace data of an impact point: the boundary conormal db(q), an
/// orthonormal row basis of the jump space spanned by db(q) and the
/// constraint rows, and an orthonormal column basis of its null space (the
/// admissible tangent directions within the boundary).
#[derive(Debug, Clone)]
pub struct ImpactSubspaces {
    pub q: DVector<f64>,
    /// db(q) as a 1 x n row.
    pub boundary_annihilator: RowDVector<f64>,
    /// k x n orthonormal rows spanning rowspace of stack(db; mu).
    pub jump_basis: DMatrix<f64>,
    /// n x (n - k) orthonormal columns annihilated by every jump row.
    pub admissible_tangent: DMatrix<f64>,
}

impl ImpactSubspaces {
    /// Dimension k of the jump space.
    pub fn jump_rank(&self) -> usize {
        self.jump_basis.nrows()
    }
}

/// Split of R^n induced by a row stack S: an orthonormal row basis of the
/// rowspace (rank x n) and an orthonormal column basis of the null space
/// (n x (n - rank)).
///
/// The rank comes from the singular values of S itself (above
/// `RANK_TOLERANCE` relative to the largest); the eigendecomposition of
/// S^T S then supplies a full orthonormal basis of R^n to split.
pub fn rowspace_nullspace_split(s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = s.ncols();
    if s.nrows() == 0 {
        return (DMatrix::zeros(0, n), DMatrix::identity(n, n));
    }
    // The rank decision needs true singular values: eigenvalues of S^T S
    // carry squared rounding noise (~sqrt(eps) relative after the square
    // root), which would sit above the rank tolerance.
    let rank = crate::model::row_rank(s);
    let gram = s.transpose() * s;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("eigenvalues of a real symmetric matrix are finite")
    });

    let mut rowspace = DMatrix::zeros(rank, n);
    for (r, &i) in order[..rank].iter().enumerate() {
        rowspace.set_row(r, &eig.eigenvectors.column(i).transpose());
    }
    let mut nullspace = DMatrix::zeros(n, n - rank);
    for (c, &i) in order[rank..].iter().enumerate() {
        nullspace.set_column(c, &eig.eigenvectors.column(i));
    }
    (rowspace, nullspace)
}

/// Bases of the constraint distribution and its annihilator at q.
pub fn distribution_at(spec: &SystemSpec, q: &DVector<f64>) -> Result<DistributionBasis> {
    spec.check_dim(q)?;
    let mu = spec.constraints_at(q);
    let m = spec.constraint_count();
    let (rowspace, nullspace) = rowspace_nullspace_split(&mu);
    if rowspace.nrows() < m {
        return Err(Error::RankDrop {
            expected: m,
            found: rowspace.nrows(),
        });
    }
    Ok(DistributionBasis {
        q: q.clone(),
        tangent_basis: nullspace,
        annihilator_basis: mu,
    })
}

/// M-orthogonal projection of v onto the distribution at q: the unique
/// v* with mu(q) v* = 0 minimizing (v - v*)^T M(q) (v - v*).
///
/// Solved via the normal equations v* = v - M^{-1} mu^T (mu M^{-1} mu^T)^{-1} mu v.
pub fn project_velocity(spec: &SystemSpec, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    spec.check_dim(q)?;
    spec.check_dim(v)?;
    let m = spec.constraint_count();
    if m == 0 {
        return Ok(v.clone());
    }
    let mu = spec.constraints_at(q);
    let chol_m = spec.mass_cholesky(q)?;
    let minv_mut = chol_m.solve(&mu.transpose());
    let gram = &mu * &minv_mut;
    let chol_g = nalgebra::Cholesky::new(gram).ok_or(Error::RankDrop {
        expected: m,
        found: crate::model::row_rank(&mu),
    })?;
    let alpha = chol_g.solve(&(&mu * v));
    Ok(v - minv_mut * alpha)
}

/// Jump-space and admissible-tangent bases at a boundary configuration.
///
/// Fails when db(q) vanishes or when db(q) lies in the span of the
/// constraint rows (the boundary is not transversal to the distribution, so
/// no reflecting direction exists).
pub fn impact_subspaces(spec: &SystemSpec, q: &DVector<f64>) -> Result<ImpactSubspaces> {
    spec.check_dim(q)?;
    let db = spec.boundary_gradient_at(q);
    if db.norm() == 0.0 {
        return Err(Error::DegenerateBoundary);
    }
    let mu = spec.constraints_at(q);
    let m = spec.constraint_count();
    if m > 0 {
        let rank_mu = crate::model::row_rank(&mu);
        if rank_mu < m {
            return Err(Error::RankDrop {
                expected: m,
                found: rank_mu,
            });
        }
    }

    let n = spec.dim();
    let mut stack = DMatrix::zeros(m + 1, n);
    stack.set_row(0, &db);
    for r in 0..m {
        stack.set_row(r + 1, &mu.row(r));
    }
    let (jump_basis, admissible_tangent) = rowspace_nullspace_split(&stack);
    if jump_basis.nrows() == m {
        return Err(Error::NonTransversalContact);
    }
    Ok(ImpactSubspaces {
        q: q.clone(),
        boundary_annihilator: db,
        jump_basis,
        admissible_tangent,
    })
}
