//! Upwind finite-difference operators and assembly of the per-block
//! tridiagonal systems solved inside each policy iteration.
//!
//! Only the price direction is implicit. The α and β couplings, and the
//! off-diagonal penalty couplings, are taken from the previous policy
//! iterate; the penalty diagonal stays on the matrix diagonal so that every
//! block is an M-matrix.

use crate::error::{Error, Result};
use crate::grid::{Mesh3D, NodeKind};
use crate::model::ModelParams;

/// λ[L]⁻ = min over m ∈ [0, λ] of m·L; returns the minimising m.
#[inline]
pub fn penalty_switch(l_value: f64, lambda: f64) -> f64 {
    if l_value < 0.0 {
        lambda
    } else {
        0.0
    }
}

/// Per-node penalty coefficients m̃ ∈ {0, λ_B} and ñ ∈ {0, λ_C}.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyPolicy {
    pub lambda_b: f64,
    pub lambda_c: f64,
    pub m_tilde: Vec<f64>,
    pub n_tilde: Vec<f64>,
}

impl PenaltyPolicy {
    pub fn inactive(len: usize, lambda_b: f64, lambda_c: f64) -> Self {
        Self {
            lambda_b,
            lambda_c,
            m_tilde: vec![0.0; len],
            n_tilde: vec![0.0; len],
        }
    }

    /// Re-evaluate the switches from the discrete buy/sell operators at
    /// `field`. Returns the number of nodes whose coefficients changed.
    pub fn update(&mut self, mesh: &Mesh3D, params: &ModelParams, field: &[f64]) -> usize {
        let mut changed = 0;
        for (flat, kind) in mesh.kinds().iter().enumerate() {
            let (m, n) = if *kind == NodeKind::Interior {
                let n = mesh.node_index(flat);
                (
                    penalty_switch(lb_unchecked(field, mesh, params.theta, n.i, n.j, n.k), self.lambda_b),
                    penalty_switch(lc_unchecked(field, mesh, params.theta, n.i, n.j, n.k), self.lambda_c),
                )
            } else {
                (0.0, 0.0)
            };
            if m != self.m_tilde[flat] || n != self.n_tilde[flat] {
                changed += 1;
            }
            self.m_tilde[flat] = m;
            self.n_tilde[flat] = n;
        }
        changed
    }

    pub fn active_count(&self) -> (usize, usize) {
        (
            self.m_tilde.iter().filter(|&&m| m > 0.0).count(),
            self.n_tilde.iter().filter(|&&n| n > 0.0).count(),
        )
    }
}

fn require_interior(mesh: &Mesh3D, i: usize, j: usize, k: usize) -> Result<()> {
    mesh.stack_index(i, j, k)?;
    match mesh.kind(i, j, k) {
        NodeKind::Interior => Ok(()),
        kind => Err(Error::Contract(format!(
            "discrete operator applied at {kind:?} node ({i}, {j}, {k})"
        ))),
    }
}

#[inline]
fn lb_unchecked(v: &[f64], mesh: &Mesh3D, theta: f64, i: usize, j: usize, k: usize) -> f64 {
    let c = v[mesh.idx(i, j, k)];
    let d_alpha_plus = (v[mesh.idx(i + 1, j, k)] - c) / mesh.h_alpha;
    let d_beta_minus = (c - v[mesh.idx(i, j - 1, k)]) / mesh.h_beta;
    -d_alpha_plus + (1.0 + theta) * mesh.prices[k] * d_beta_minus
}

#[inline]
fn lc_unchecked(v: &[f64], mesh: &Mesh3D, theta: f64, i: usize, j: usize, k: usize) -> f64 {
    let c = v[mesh.idx(i, j, k)];
    let d_alpha_minus = (c - v[mesh.idx(i - 1, j, k)]) / mesh.h_alpha;
    let d_beta_plus = (v[mesh.idx(i, j + 1, k)] - c) / mesh.h_beta;
    d_alpha_minus - (1.0 - theta) * mesh.prices[k] * d_beta_plus
}

/// Discrete buy operator −D_α⁺ + (1+θ)S_k D_β⁻.
pub fn apply_lb(field: &[f64], mesh: &Mesh3D, params: &ModelParams, i: usize, j: usize, k: usize) -> Result<f64> {
    require_interior(mesh, i, j, k)?;
    Ok(lb_unchecked(field, mesh, params.theta, i, j, k))
}

/// Discrete sell operator D_α⁻ − (1−θ)S_k D_β⁺.
pub fn apply_lc(field: &[f64], mesh: &Mesh3D, params: &ModelParams, i: usize, j: usize, k: usize) -> Result<f64> {
    require_interior(mesh, i, j, k)?;
    Ok(lc_unchecked(field, mesh, params.theta, i, j, k))
}

/// Discrete no-transaction operator
/// −(D_t + r β⁺ D_β⁺ + r β⁻ D_β⁻ + μ S D_S + ½σ² S² D_SS) applied to
/// `current` (level n), with `next` the level n+1 field.
pub fn apply_la(
    current: &[f64],
    next: &[f64],
    mesh: &Mesh3D,
    params: &ModelParams,
    i: usize,
    j: usize,
    k: usize,
) -> Result<f64> {
    require_interior(mesh, i, j, k)?;
    let c = current[mesh.idx(i, j, k)];
    let beta = mesh.betas[j];
    let s = mesh.prices[k];
    let d_t = (next[mesh.idx(i, j, k)] - c) / mesh.dt;
    let d_beta_plus = (current[mesh.idx(i, j + 1, k)] - c) / mesh.h_beta;
    let d_beta_minus = (c - current[mesh.idx(i, j - 1, k)]) / mesh.h_beta;
    let (hu, hd) = (mesh.h_s_up(k), mesh.h_s_down(k));
    let up = current[mesh.idx(i, j, k + 1)];
    let down = current[mesh.idx(i, j, k - 1)];
    let d_s = (up - c) / hu;
    let d_ss = 2.0 / (hu + hd) * ((up - c) / hu - (c - down) / hd);
    Ok(-(d_t
        + params.r * beta.max(0.0) * d_beta_plus
        + params.r * beta.min(0.0) * d_beta_minus
        + params.mu * s * d_s
        + 0.5 * params.sigma * params.sigma * s * s * d_ss))
}

/// Implicit price-direction coefficients of one row (sub, diag, super).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowCoefficients {
    pub sub: f64,
    pub diag: f64,
    pub sup: f64,
}

/// Row of the block matrix at price node k of β-column j, with penalty
/// coefficients `m`, `n` at that node.
pub fn row_coefficients(mesh: &Mesh3D, params: &ModelParams, j: usize, k: usize, m: f64, n: f64) -> RowCoefficients {
    let dt = mesh.dt;
    let s = mesh.prices[k];
    let (hu, hd) = (mesh.h_s_up(k), mesh.h_s_down(k));
    let diffusion = params.sigma * params.sigma * s * s;
    let sup = -dt * (params.mu * s / hu + diffusion / (hu * (hu + hd)));
    let sub = -dt * diffusion / (hd * (hu + hd));
    let beta_drift = params.r * mesh.betas[j].abs() / mesh.h_beta;
    let penalty = m * (1.0 / mesh.h_alpha + (1.0 + params.theta) * s / mesh.h_beta)
        + n * (1.0 / mesh.h_alpha + (1.0 - params.theta) * s / mesh.h_beta);
    RowCoefficients {
        sub,
        diag: 1.0 - sub - sup + dt * (beta_drift + penalty),
        sup,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    /// `lower[r]` multiplies x[r] in row r+1.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// `upper[r]` multiplies x[r+1] in row r.
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn identity(rhs: Vec<f64>) -> Self {
        let n = rhs.len();
        Self {
            lower: vec![0.0; n.saturating_sub(1)],
            diag: vec![1.0; n],
            upper: vec![0.0; n.saturating_sub(1)],
            rhs,
        }
    }

    /// A·x for the stored matrix.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|r| {
                let mut acc = self.diag[r] * x[r];
                if r > 0 {
                    acc += self.lower[r - 1] * x[r - 1];
                }
                if r + 1 < n {
                    acc += self.upper[r] * x[r + 1];
                }
                acc
            })
            .collect()
    }

    pub fn is_diagonally_dominant(&self) -> bool {
        let n = self.len();
        (0..n).all(|r| {
            let off = if r > 0 { self.lower[r - 1].abs() } else { 0.0 }
                + if r + 1 < n { self.upper[r].abs() } else { 0.0 };
            self.diag[r].abs() >= off
        })
    }
}

/// One contiguous run of unknowns along the price line of block (i, j).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSystem {
    pub i: usize,
    pub j: usize,
    pub k_start: usize,
    pub system: TridiagonalSystem,
}

/// Interior price-index runs [start, end) of block (i, j).
pub fn interior_runs(mesh: &Mesh3D, i: usize, j: usize) -> Vec<(usize, usize)> {
    let ns = mesh.n_price();
    let mut runs = Vec::new();
    let mut k = 0;
    while k < ns {
        if mesh.kind(i, j, k) == NodeKind::Interior {
            let start = k;
            while k < ns && mesh.kind(i, j, k) == NodeKind::Interior {
                k += 1;
            }
            runs.push((start, k));
        } else {
            k += 1;
        }
    }
    runs
}

/// Assemble the linear systems of block (i, j) for the next policy iterate.
///
/// `prev_iter` supplies the lagged α/β neighbours and the Dirichlet values
/// at the ends of each run; `next_time` is the converged level n+1 field.
pub fn assemble_block(
    i: usize,
    j: usize,
    mesh: &Mesh3D,
    params: &ModelParams,
    policy: &PenaltyPolicy,
    prev_iter: &[f64],
    next_time: &[f64],
) -> Vec<BlockSystem> {
    interior_runs(mesh, i, j)
        .into_iter()
        .map(|(start, end)| BlockSystem {
            i,
            j,
            k_start: start,
            system: assemble_run(i, j, start, end, mesh, params, policy, prev_iter, next_time),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_run(
    i: usize,
    j: usize,
    start: usize,
    end: usize,
    mesh: &Mesh3D,
    params: &ModelParams,
    policy: &PenaltyPolicy,
    prev_iter: &[f64],
    next_time: &[f64],
) -> TridiagonalSystem {
    let n = end - start;
    let dt = mesh.dt;
    let beta = mesh.betas[j];
    let drift_up = params.r * beta.max(0.0) / mesh.h_beta;
    let drift_down = params.r * (-beta.min(0.0)) / mesh.h_beta;
    let mut sys = TridiagonalSystem {
        lower: vec![0.0; n.saturating_sub(1)],
        diag: vec![0.0; n],
        upper: vec![0.0; n.saturating_sub(1)],
        rhs: vec![0.0; n],
    };
    for (row, k) in (start..end).enumerate() {
        let flat = mesh.idx(i, j, k);
        let m = policy.m_tilde[flat];
        let nn = policy.n_tilde[flat];
        let s = mesh.prices[k];
        let coeff = row_coefficients(mesh, params, j, k, m, nn);

        let mut rhs = next_time[flat];
        rhs += dt * (drift_up + nn * (1.0 - params.theta) * s / mesh.h_beta) * prev_iter[mesh.idx(i, j + 1, k)];
        rhs += dt * (drift_down + m * (1.0 + params.theta) * s / mesh.h_beta) * prev_iter[mesh.idx(i, j - 1, k)];
        rhs += dt * m / mesh.h_alpha * prev_iter[mesh.idx(i + 1, j, k)];
        rhs += dt * nn / mesh.h_alpha * prev_iter[mesh.idx(i - 1, j, k)];

        if row == 0 {
            rhs -= coeff.sub * prev_iter[mesh.idx(i, j, k - 1)];
        } else {
            sys.lower[row - 1] = coeff.sub;
        }
        if row + 1 == n {
            rhs -= coeff.sup * prev_iter[mesh.idx(i, j, k + 1)];
        } else {
            sys.upper[row] = coeff.sup;
        }
        sys.diag[row] = coeff.diag;
        sys.rhs[row] = rhs;
    }
    sys
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, SMeshKind};

    fn setup() -> (Mesh3D, ModelParams) {
        let p = ModelParams::baseline();
        (Mesh3D::build(&GridSpec::baseline(), &p).unwrap(), p)
    }

    fn first_interior(mesh: &Mesh3D) -> (usize, usize, usize) {
        let f = mesh.kinds().iter().position(|k| *k == NodeKind::Interior).unwrap();
        let n = mesh.node_index(f);
        (n.i, n.j, n.k)
    }

    #[test]
    fn penalty_switch_examples() {
        assert_eq!(penalty_switch(0.5, 10.0), 0.0);
        assert_eq!(penalty_switch(-0.5, 10.0), 10.0);
        assert_eq!(penalty_switch(0.0, 10.0), 0.0);
    }

    #[test]
    fn operators_vanish_on_constants() {
        let (mesh, mut p) = setup();
        let v = vec![3.7; mesh.len()];
        let (i, j, k) = first_interior(&mesh);
        assert_eq!(apply_lb(&v, &mesh, &p, i, j, k).unwrap(), 0.0);
        assert_eq!(apply_lc(&v, &mesh, &p, i, j, k).unwrap(), 0.0);
        p.r = 0.0;
        p.mu = 0.0;
        p.sigma = 0.0;
        assert_eq!(apply_la(&v, &v, &mesh, &p, i, j, k).unwrap(), 0.0);
    }

    #[test]
    fn buy_operator_on_beta_field() {
        let (mesh, p) = setup();
        let mut v = vec![0.0; mesh.len()];
        for f in 0..mesh.len() {
            v[f] = mesh.coords(f)[1];
        }
        for f in 0..mesh.len() {
            if mesh.kind_at(f) != NodeKind::Interior {
                continue;
            }
            let n = mesh.node_index(f);
            let lb = apply_lb(&v, &mesh, &p, n.i, n.j, n.k).unwrap();
            let want = (1.0 + p.theta) * mesh.prices[n.k];
            assert!((lb - want).abs() < 1e-9 * want.max(1.0));
            let lc = apply_lc(&v, &mesh, &p, n.i, n.j, n.k).unwrap();
            let want_c = -(1.0 - p.theta) * mesh.prices[n.k];
            assert!((lc - want_c).abs() < 1e-9 * want.max(1.0));
        }
    }

    #[test]
    fn operators_reject_boundary_nodes() {
        let (mesh, p) = setup();
        let v = vec![0.0; mesh.len()];
        assert!(matches!(apply_lb(&v, &mesh, &p, 0, 3, 50), Err(Error::Contract(_))));
        assert!(matches!(apply_lc(&v, &mesh, &p, 3, 3, 0), Err(Error::Contract(_))));
        assert!(matches!(apply_la(&v, &v, &mesh, &p, 3, 0, 50), Err(Error::Contract(_))));
        assert!(matches!(apply_lb(&v, &mesh, &p, 99, 3, 50), Err(Error::Index(_))));
    }

    #[test]
    fn row_sum_without_penalty() {
        let (mesh, p) = setup();
        for j in 1..mesh.betas.len() - 1 {
            for k in 1..mesh.n_price() - 1 {
                let c = row_coefficients(&mesh, &p, j, k, 0.0, 0.0);
                let want = 1.0 + mesh.dt * p.r * mesh.betas[j].abs() / mesh.h_beta;
                assert!((c.sub + c.diag + c.sup - want).abs() < 1e-12);
                assert!(c.sub <= 0.0 && c.sup <= 0.0 && c.diag >= 1.0);
            }
        }
    }

    #[test]
    fn row_sum_with_penalty() {
        let (mesh, p) = setup();
        let (m, n) = (10.0, 10.0);
        let j = 4;
        let k = 50;
        let c = row_coefficients(&mesh, &p, j, k, m, n);
        let s = mesh.prices[k];
        let want = 1.0
            + mesh.dt
                * (p.r * mesh.betas[j].abs() / mesh.h_beta
                    + m * (1.0 / mesh.h_alpha + (1.0 + p.theta) * s / mesh.h_beta)
                    + n * (1.0 / mesh.h_alpha + (1.0 - p.theta) * s / mesh.h_beta));
        assert!((c.sub + c.diag + c.sup - want).abs() < 1e-10);
    }

    #[test]
    fn uniform_rows_match_closed_form_coefficients() {
        let (mesh, p) = setup();
        let hs = 1.0;
        let j = 5;
        for k in [1usize, 37, 99] {
            let s = mesh.prices[k];
            let c = row_coefficients(&mesh, &p, j, k, 0.0, 0.0);
            let dt = mesh.dt;
            let diag = 1.0
                + dt * (p.r * mesh.betas[j].abs() / mesh.h_beta
                    + p.mu * s / hs
                    + p.sigma.powi(2) * s * s / (hs * hs));
            let sup = -dt * (p.mu * s / hs + p.sigma.powi(2) * s * s / (2.0 * hs * hs));
            let sub = -dt * p.sigma.powi(2) * s * s / (2.0 * hs * hs);
            assert!((c.diag - diag).abs() < 1e-10);
            assert!((c.sup - sup).abs() < 1e-10);
            assert!((c.sub - sub).abs() < 1e-10);
        }
    }

    #[test]
    fn assembled_blocks_are_m_matrices() {
        for kind in [SMeshKind::Uniform, SMeshKind::LogUniform] {
            let p = ModelParams::baseline();
            let mut spec = GridSpec::baseline();
            spec.s_mesh = kind;
            let mesh = Mesh3D::build(&spec, &p).unwrap();
            let mut policy = PenaltyPolicy::inactive(mesh.len(), 10.0, 10.0);
            for f in 0..mesh.len() {
                if f % 3 == 0 {
                    policy.m_tilde[f] = 10.0;
                }
                if f % 5 == 0 {
                    policy.n_tilde[f] = 10.0;
                }
            }
            let v = vec![1.0; mesh.len()];
            let mut blocks = 0;
            for i in 0..mesh.alphas.len() {
                for j in 0..mesh.betas.len() {
                    for b in assemble_block(i, j, &mesh, &p, &policy, &v, &v) {
                        blocks += 1;
                        let s = &b.system;
                        assert!(s.diag.iter().all(|&d| d >= 1.0));
                        assert!(s.lower.iter().chain(&s.upper).all(|&x| x <= 0.0));
                        let n = s.len();
                        for r in 0..n {
                            let off = if r > 0 { -s.lower[r - 1] } else { 0.0 }
                                + if r + 1 < n { -s.upper[r] } else { 0.0 };
                            assert!(s.diag[r] > off);
                        }
                    }
                }
            }
            assert!(blocks > 0);
        }
    }

    #[test]
    fn vanishing_time_step_gives_identity() {
        let p = ModelParams::baseline();
        let mut mesh = Mesh3D::build(&GridSpec::baseline(), &p).unwrap();
        mesh.dt = 1e-14;
        let policy = PenaltyPolicy::inactive(mesh.len(), 10.0, 10.0);
        let prev: Vec<f64> = (0..mesh.len()).map(|f| f as f64 * 0.01).collect();
        let next: Vec<f64> = (0..mesh.len()).map(|f| (f as f64).sin()).collect();
        for b in assemble_block(3, 5, &mesh, &p, &policy, &prev, &next) {
            for (r, d) in b.system.diag.iter().enumerate() {
                assert!((d - 1.0).abs() < 1e-9);
                let flat = mesh.idx(3, 5, b.k_start + r);
                assert!((b.system.rhs[r] - next[flat]).abs() < 1e-9);
            }
            assert!(b.system.lower.iter().chain(&b.system.upper).all(|x| x.abs() < 1e-9));
        }
    }

    #[test]
    fn no_drift_no_penalty_is_identity() {
        let mut p = ModelParams::baseline();
        p.sigma = 0.0;
        p.mu = 0.0;
        p.r = 0.0;
        let mesh = Mesh3D::build(&GridSpec::baseline(), &p).unwrap();
        let policy = PenaltyPolicy::inactive(mesh.len(), 10.0, 10.0);
        let v = vec![2.0; mesh.len()];
        for b in assemble_block(2, 5, &mesh, &p, &policy, &v, &v) {
            assert!(b.system.diag.iter().all(|&d| d == 1.0));
            assert!(b.system.lower.iter().chain(&b.system.upper).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn policy_update_counts_switches() {
        let (mesh, p) = setup();
        let mut v = vec![0.0; mesh.len()];
        // Value increasing in α favours buying everywhere in the interior.
        for f in 0..mesh.len() {
            v[f] = 100.0 * mesh.coords(f)[0];
        }
        let mut policy = PenaltyPolicy::inactive(mesh.len(), 10.0, 20.0);
        let changed = policy.update(&mesh, &p, &v);
        assert_eq!(changed, mesh.interior_count());
        let (buy, sell) = policy.active_count();
        assert_eq!(buy, mesh.interior_count());
        assert_eq!(sell, 0);
        assert_eq!(policy.update(&mesh, &p, &v), 0);
    }
}
