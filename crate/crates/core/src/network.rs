//! Coupling network: block Laplacian of `M` fully connected clusters, hidden
//! behind a random orthogonal rotation.
//!
//! `L` carries eigenvalue 0 with multiplicity `M` and `-N` with multiplicity
//! `K - M`. The rotated matrix `C = Q L Q^T` keeps that spectrum but is dense,
//! so the cluster structure is no longer visible in its entries.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_desc;
use crate::seeds::rng_from_seed;

/// Eigenvalues within this distance of zero count towards the nullity.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    /// Number of isolated clusters `M`.
    #[serde(rename = "m")]
    pub clusters: usize,
    /// Nodes per cluster `N`.
    #[serde(rename = "n")]
    pub nodes_per_cluster: usize,
    /// Seed for the Gaussian matrix whose QR factor is the rotation.
    pub seed: u64,
}

impl NetworkParams {
    pub fn new(clusters: usize, nodes_per_cluster: usize, seed: u64) -> Result<Self> {
        let params = Self {
            clusters,
            nodes_per_cluster,
            seed,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters < 1 {
            return Err(Error::param("at least one cluster is required"));
        }
        if self.nodes_per_cluster < 2 {
            return Err(Error::param(format!(
                "clusters need at least 2 nodes, got {}",
                self.nodes_per_cluster
            )));
        }
        Ok(())
    }

    /// Total number of assets `K = M * N`.
    pub fn assets(&self) -> usize {
        self.clusters * self.nodes_per_cluster
    }
}

pub fn build_laplacian(params: &NetworkParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    let n = params.nodes_per_cluster;
    let k = params.assets();
    let mut l = DMatrix::zeros(k, k);
    for block in 0..params.clusters {
        let start = block * n;
        for i in start..start + n {
            for j in start..start + n {
                l[(i, j)] = if i == j { 1.0 - n as f64 } else { 1.0 };
            }
        }
    }
    Ok(l)
}

/// Haar-random orthogonal matrix from the QR factorisation of a `k x k`
/// standard-normal matrix, with columns sign-corrected so `diag(R) >= 0`.
pub fn random_orthogonal(k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let a = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone)]
pub struct CouplingNetwork {
    pub params: NetworkParams,
    pub laplacian: DMatrix<f64>,
    pub rotation: DMatrix<f64>,
    pub coupling: DMatrix<f64>,
}

pub fn build_coupling(params: &NetworkParams) -> Result<CouplingNetwork> {
    let laplacian = build_laplacian(params)?;
    let rotation = random_orthogonal(params.assets(), params.seed);
    let coupling = &rotation * &laplacian * rotation.transpose();
    Ok(CouplingNetwork {
        params: *params,
        laplacian,
        rotation,
        coupling,
    })
}

impl CouplingNetwork {
    pub fn assets(&self) -> usize {
        self.params.assets()
    }

    /// Eigenvalues of `C`, ascending.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        let (vals, _) = symmetric_eigen_desc(&self.coupling)?;
        let mut v: Vec<f64> = vals.iter().copied().collect();
        v.reverse();
        Ok(v)
    }

    /// Orthogonal projector onto the null space of `C`.
    pub fn nullspace_projector(&self) -> Result<DMatrix<f64>> {
        let basis = self.nullspace_basis()?;
        Ok(&basis * basis.transpose())
    }

    /// `K x M` orthonormal basis of the null space of `C`.
    pub fn nullspace_basis(&self) -> Result<DMatrix<f64>> {
        let (vals, vecs) = symmetric_eigen_desc(&self.coupling)?;
        let m = self.params.clusters;
        // Every non-zero eigenvalue is -N, so the null space is the leading block.
        let near_zero = vals.iter().filter(|v| v.abs() < ZERO_EIGENVALUE_TOL).count();
        if near_zero != m {
            return Err(Error::Numerical(format!(
                "expected nullity {m}, found {near_zero} eigenvalues below {ZERO_EIGENVALUE_TOL}"
            )));
        }
        Ok(vecs.columns(0, m).into_owned())
    }

    /// `W(eps) = (1 - eps) I + (eps / N) C`, the linear part of one update.
    pub fn update_matrix(&self, epsilon: f64) -> DMatrix<f64> {
        let k = self.assets();
        let n = self.params.nodes_per_cluster as f64;
        DMatrix::identity(k, k) * (1.0 - epsilon) + &self.coupling * (epsilon / n)
    }

    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.assets(), self.coupling.row_iter().map(|r| r.sum()))
    }
}
