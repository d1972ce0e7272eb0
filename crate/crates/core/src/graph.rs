//! Leader-rooted communication graphs.
//!
//! Node 0 is the leader (the exosystem); followers are nodes `1..=N`.
//! `a[i][j] > 0` means follower `i` receives information from node `j`.

use std::collections::VecDeque;

use thiserror::Error;

use crate::numerics::{solve_lyapunov, sym_eigvals, Matrix, NumericsError, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("adjacency must be (N+1)x(N+1), got {rows}x{cols}")]
    Shape { rows: usize, cols: usize },
    #[error("edge {from}->{to}: {reason}")]
    BadEdge {
        from: usize,
        to: usize,
        reason: &'static str,
    },
    #[error("adjacency entry ({i},{j}) = {value} must be finite and nonnegative")]
    BadWeight { i: usize, j: usize, value: f64 },
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("follower block is not Hurwitz-stable; some follower cannot be reached from the leader")]
    NotRooted,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Weighted directed graph over the leader and `N` followers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    adjacency: Matrix<T>,
}

impl<T: Real> Network<T> {
    pub fn new(adjacency: Matrix<T>) -> Result<Self, GraphError> {
        let (rows, cols) = adjacency.shape();
        if rows != cols || rows == 0 {
            return Err(GraphError::Shape { rows, cols });
        }
        for i in 0..rows {
            for j in 0..cols {
                let w = adjacency[(i, j)];
                if !w.is_finite() || w < T::zero() {
                    return Err(GraphError::BadWeight {
                        i,
                        j,
                        value: w.as_f64(),
                    });
                }
                if i == j && w != T::zero() {
                    return Err(GraphError::SelfLoop(i));
                }
            }
        }
        Ok(Self { adjacency })
    }

    /// Builds a network from `(from, to, weight)` triples. Repeated edges accumulate.
    pub fn from_edges(n_followers: usize, edges: &[(usize, usize, T)]) -> Result<Self, GraphError> {
        let n = n_followers + 1;
        let mut a = Matrix::zeros(n, n);
        for &(from, to, w) in edges {
            if from >= n || to >= n {
                return Err(GraphError::BadEdge {
                    from,
                    to,
                    reason: "node index out of range",
                });
            }
            if from == to {
                return Err(GraphError::SelfLoop(from));
            }
            if !w.is_finite() || w < T::zero() {
                return Err(GraphError::BadEdge {
                    from,
                    to,
                    reason: "weight must be finite and nonnegative",
                });
            }
            a[(to, from)] += w;
        }
        Self::new(a)
    }

    /// Directed chain `0 -> 1 -> ... -> N` with unit weights.
    pub fn chain(n_followers: usize) -> Self {
        let edges: Vec<(usize, usize, T)> = (0..n_followers).map(|i| (i, i + 1, T::one())).collect();
        Self::from_edges(n_followers, &edges).expect("chain is well formed")
    }

    pub fn n_followers(&self) -> usize {
        self.adjacency.rows() - 1
    }

    pub fn adjacency(&self) -> &Matrix<T> {
        &self.adjacency
    }

    /// Weight of the edge `from -> to`.
    pub fn weight(&self, from: usize, to: usize) -> T {
        self.adjacency[(to, from)]
    }

    /// Positive-weight edges as `(from, to, weight)`, ordered by receiver then sender.
    pub fn edges(&self) -> Vec<(usize, usize, T)> {
        let n = self.adjacency.rows();
        let mut out = Vec::new();
        for to in 0..n {
            for from in 0..n {
                let w = self.adjacency[(to, from)];
                if w > T::zero() {
                    out.push((from, to, w));
                }
            }
        }
        out
    }
}

/// Follower block of the Laplacian and the leader-edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianParts<T> {
    pub h: Matrix<T>,
    pub delta: Matrix<T>,
}

/// Lyapunov pair for `H` and the certified observer rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverRate<T> {
    pub p_h: Matrix<T>,
    pub q_h: Matrix<T>,
    pub rho_h: T,
}

pub fn partition_laplacian<T: Real>(net: &Network<T>) -> LaplacianParts<T> {
    let n = net.n_followers();
    let a = net.adjacency();
    let mut h = Matrix::zeros(n, n);
    let mut delta = Matrix::zeros(n, n);
    for i in 0..n {
        let row = i + 1;
        let degree = (0..=n)
            .filter(|&j| j != row)
            .fold(T::zero(), |acc, j| acc + a[(row, j)]);
        h[(i, i)] = degree;
        for j in 0..n {
            if j != i {
                h[(i, j)] = -a[(row, j + 1)];
            }
        }
        delta[(i, i)] = a[(row, 0)];
    }
    LaplacianParts { h, delta }
}

/// True when every follower is reachable from the leader along positive-weight edges.
pub fn has_leader_spanning_tree<T: Real>(net: &Network<T>) -> bool {
    let n = net.n_followers() + 1;
    let a = net.adjacency();
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if !seen[i] && a[(i, j)] > T::zero() {
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Solves `P H + H^T P = I` and returns `rho_H = 1 / (2 lambda_max(P))`.
pub fn observer_rate<T: Real>(parts: &LaplacianParts<T>) -> Result<ObserverRate<T>, GraphError> {
    let n = parts.h.rows();
    let q_h = Matrix::identity(n);
    let p_h = solve_lyapunov(&parts.h, &q_h)?;
    let eigs = sym_eigvals(&p_h)?;
    let (lo, hi) = match (eigs.first(), eigs.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return Err(GraphError::Shape { rows: 0, cols: 0 }),
    };
    if lo <= T::zero() {
        return Err(GraphError::NotRooted);
    }
    let q_min = T::one();
    Ok(ObserverRate {
        p_h,
        q_h,
        rho_h: q_min / (T::lit(2.0) * hi),
    })
}
