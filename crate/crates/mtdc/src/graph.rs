//! Physical grid and communication topologies with their weighted Laplacians.
//!
//! Buses are 1-indexed at every external interface and 0-indexed internally.
//! Both graphs must be static, undirected and connected; the communication
//! graph defaults to the physical topology with weights `1/R_ij`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Selects which of the two graphs an operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    /// HVDC transmission lines, edge weights `1/R_ij`.
    Physical,
    /// Communication links, edge weights `c_ij`.
    Communication,
}

/// An undirected weighted edge between two buses (0-indexed endpoints).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Line resistance in Ω for the physical graph, conductance-like
    /// weight in Ω⁻¹ for the communication graph.
    pub value: f64,
}

/// A multi-terminal HVDC network: DC buses with lumped capacitances joined
/// by resistive lines, plus a communication graph for the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    n: usize,
    lines: Vec<Edge>,
    capacitances: Vec<f64>,
    comm_edges: Vec<Edge>,
    lap_r: DMatrix<f64>,
    lap_c: DMatrix<f64>,
}

impl NetworkModel {
    /// Builds and validates a network. `lines` carries 1-indexed endpoints and
    /// resistances in Ω; `comm_edges` carries 1-indexed endpoints and weights
    /// in Ω⁻¹. When `comm_edges` is `None` the communication graph copies the
    /// line topology with `c_ij = 1/R_ij`.
    pub fn new(
        n: usize,
        lines: &[(usize, usize, f64)],
        capacitances: Vec<f64>,
        comm_edges: Option<&[(usize, usize, f64)]>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidNetwork(format!(
                "need at least 2 buses, got {n}"
            )));
        }
        if capacitances.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: capacitances.len(),
            });
        }
        for (i, &c) in capacitances.iter().enumerate() {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidNetwork(format!(
                    "capacitance of bus {} must be positive and finite, got {c}",
                    i + 1
                )));
            }
        }

        let phys = check_edges(n, lines, "line", "resistance")?;
        let comm = match comm_edges {
            Some(edges) => check_edges(n, edges, "communication edge", "weight")?,
            // Mirror the line topology with conductance weights.
            None => phys
                .iter()
                .map(|e| Edge {
                    i: e.i,
                    j: e.j,
                    value: 1.0 / e.value,
                })
                .collect(),
        };

        check_connected(n, &phys, "physical")?;
        check_connected(n, &comm, "communication")?;

        let lap_r = laplacian_from_edges(n, phys.iter().map(|e| (e.i, e.j, 1.0 / e.value)));
        let lap_c = laplacian_from_edges(n, comm.iter().map(|e| (e.i, e.j, e.value)));

        Ok(Self {
            n,
            lines: phys,
            capacitances,
            comm_edges: comm,
            lap_r,
            lap_c,
        })
    }

    pub fn bus_count(&self) -> usize {
        self.n
    }

    /// Per-bus capacitances C_i in F.
    pub fn capacitances(&self) -> &[f64] {
        &self.capacitances
    }

    /// Transmission lines with 0-indexed endpoints and resistances in Ω.
    pub fn lines(&self) -> &[Edge] {
        &self.lines
    }

    /// Communication edges with 0-indexed endpoints and weights in Ω⁻¹.
    pub fn comm_edges(&self) -> &[Edge] {
        &self.comm_edges
    }

    /// The weighted Laplacian ℬWℬᵀ of the requested graph, built once at
    /// construction. Weights are conductances `1/R_ij` for the physical graph
    /// and `c_ij` for the communication graph.
    pub fn laplacian(&self, which: GraphKind) -> &DMatrix<f64> {
        match which {
            GraphKind::Physical => &self.lap_r,
            GraphKind::Communication => &self.lap_c,
        }
    }

    /// True when both graphs have identical Laplacians (within `rel_tol`
    /// relative to the largest entry). Hypothesis of the certificate module.
    pub fn comm_equals_physical(&self, rel_tol: f64) -> bool {
        let scale = self
            .lap_r
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()))
            .max(1.0);
        self.lap_r
            .iter()
            .zip(self.lap_c.iter())
            .all(|(a, b)| (a - b).abs() <= rel_tol * scale)
    }
}

fn check_edges(
    n: usize,
    edges: &[(usize, usize, f64)],
    what: &str,
    weight_name: &str,
) -> Result<Vec<Edge>> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(edges.len());
    for &(i, j, w) in edges {
        if i < 1 || i > n || j < 1 || j > n {
            return Err(Error::InvalidNetwork(format!(
                "{what} ({i},{j}) references a bus outside 1..={n}"
            )));
        }
        if i == j {
            return Err(Error::InvalidNetwork(format!(
                "{what} ({i},{j}) is a self-loop"
            )));
        }
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidNetwork(format!(
                "{what} ({i},{j}) has non-positive {weight_name} {w}"
            )));
        }
        let key = (i.min(j), i.max(j));
        if !seen.insert(key) {
            return Err(Error::InvalidNetwork(format!(
                "duplicate {what} between buses {} and {}",
                key.0, key.1
            )));
        }
        out.push(Edge {
            i: i - 1,
            j: j - 1,
            value: w,
        });
    }
    Ok(out)
}

fn check_connected(n: usize, edges: &[Edge], name: &str) -> Result<()> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.i].push(e.j);
        adj[e.j].push(e.i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::InvalidNetwork(format!(
            "{name} graph is disconnected: bus {} is unreachable from bus 1",
            missing + 1
        )));
    }
    Ok(())
}

fn laplacian_from_edges(n: usize, edges: impl Iterator<Item = (usize, usize, f64)>) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for (i, j, w) in edges {
        l[(i, i)] += w;
        l[(j, j)] += w;
        l[(i, j)] -= w;
        l[(j, i)] -= w;
    }
    l
}

/// Eigenvalues of a symmetric matrix in ascending order. For a Laplacian of a
/// connected graph the smallest is zero (within rounding) and the second
/// smallest is strictly positive.
pub fn laplacian_spectrum(l: &DMatrix<f64>) -> Result<Vec<f64>> {
    let scale = l.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1.0);
    for i in 0..l.nrows() {
        for j in (i + 1)..l.ncols() {
            if (l[(i, j)] - l[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Numerical(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let sym = (l + l.transpose()) * 0.5;
    let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    Ok(eig)
}

/// Diagonal of the paper's matrix C = diag(1/C_i).
pub fn inverse_capacitance_diag(model: &NetworkModel) -> DVector<f64> {
    DVector::from_iterator(
        model.bus_count(),
        model.capacitances().iter().map(|c| 1.0 / c),
    )
}
