//! Backward time-stepping with inner policy iteration for the penalized
//! HJB equation of the value functions v⁰ and v^δ.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::discretization::{apply_lb, apply_lc, assemble_run, interior_runs, PenaltyPolicy};
use crate::error::{Error, Result, UtilityDomainError};
use crate::grid::{Mesh3D, NodeKind};
use crate::linsolve::thomas_solve_into;
use crate::model::{payoff, wealth, ModelParams, Position, UtilityFunction};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericalParams {
    pub lambda_b: f64,
    pub lambda_c: f64,
    /// Policy-iteration stopping threshold, relative to max(1, ‖V^{n+1}‖∞).
    pub tol_max: f64,
    pub p_max: usize,
    /// Final increments above this are reported as warnings.
    pub tol_warn: f64,
    /// Keep every time level of the solution, not just t = 0.
    pub keep_history: bool,
}

impl Default for NumericalParams {
    fn default() -> Self {
        Self {
            lambda_b: 10.0,
            lambda_c: 10.0,
            tol_max: 1e-8,
            p_max: 50,
            tol_warn: 1e-4,
            keep_history: false,
        }
    }
}

impl NumericalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_b >= 0.0 && self.lambda_c >= 0.0) {
            return Err(Error::Parameter("penalty parameters must be >= 0".into()));
        }
        if self.tol_max.is_nan() || self.tol_max < 0.0 || self.tol_warn.is_nan() || self.tol_warn < 0.0 {
            return Err(Error::Parameter("tolerances must be >= 0".into()));
        }
        if self.p_max == 0 {
            return Err(Error::Parameter("p_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// One time level V^n over all mesh nodes, stacked as in [`Mesh3D`].
///
/// Values at insolvent nodes are the Dirichlet formula where the utility
/// is defined there and NaN otherwise; they are never read by the scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub values: Vec<f64>,
    pub time_index: usize,
}

impl ValueField {
    pub fn at(&self, mesh: &Mesh3D, i: usize, j: usize, k: usize) -> f64 {
        self.values[mesh.idx(i, j, k)]
    }

    /// Sup-norm over solvent nodes.
    pub fn sup_norm(&self, mesh: &Mesh3D) -> f64 {
        solvent_sup_norm(&self.values, mesh)
    }
}

fn solvent_sup_norm(values: &[f64], mesh: &Mesh3D) -> f64 {
    values
        .iter()
        .zip(mesh.kinds())
        .filter(|(_, k)| **k != NodeKind::Insolvent)
        .fold(0.0, |m, (v, _)| m.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub time_index: usize,
    pub iterations: usize,
    pub final_tol: f64,
    pub threshold: f64,
    pub converged: bool,
    pub buy_nodes: usize,
    pub sell_nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub steps: Vec<StepReport>,
    pub wall_time: Duration,
    /// Every step reached its threshold before p_max.
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl SolveReport {
    pub fn max_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).max().unwrap_or(0)
    }

    pub fn total_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }

    pub fn worst_final_tol(&self) -> f64 {
        self.steps.iter().fold(0.0, |m, s| m.max(s.final_tol))
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub field: ValueField,
    pub report: SolveReport,
    /// Levels N, N−1, …, 0 when `keep_history` is set; empty otherwise.
    pub history: Vec<ValueField>,
}

/// U(w + δ·C_T(S)) at one node.
pub fn dirichlet_value(
    flat: usize,
    mesh: &Mesh3D,
    params: &ModelParams,
    utility: &UtilityFunction,
    position: Position,
) -> Result<f64, UtilityDomainError> {
    let [a, b, s] = mesh.coords(flat);
    let arg = wealth(a, b, s, params.theta) + position.sign() * payoff(s, params);
    utility
        .eval(arg)
        .map_err(|e| e.at_node(mesh.node_index(flat), [a, b, s]))
}

/// Terminal level V^N. Fails on the first solvent node whose terminal
/// wealth lies outside the utility's domain.
pub fn terminal_condition(
    mesh: &Mesh3D,
    params: &ModelParams,
    utility: &UtilityFunction,
    position: Position,
) -> Result<ValueField> {
    let mut values = Vec::with_capacity(mesh.len());
    for flat in 0..mesh.len() {
        let v = match dirichlet_value(flat, mesh, params, utility, position) {
            Ok(v) => v,
            Err(e) if mesh.kind_at(flat) != NodeKind::Insolvent => return Err(e.into()),
            Err(_) => f64::NAN,
        };
        values.push(v);
    }
    Ok(ValueField {
        values,
        time_index: mesh.n_time,
    })
}

/// Time-independent Dirichlet data on all non-interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn boundary_condition(
    mesh: &Mesh3D,
    params: &ModelParams,
    utility: &UtilityFunction,
    position: Position,
) -> Result<BoundaryData> {
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    for (flat, kind) in mesh.kinds().iter().enumerate() {
        let v = match kind {
            NodeKind::Interior => continue,
            NodeKind::Boundary => dirichlet_value(flat, mesh, params, utility, position)?,
            NodeKind::Insolvent => dirichlet_value(flat, mesh, params, utility, position).unwrap_or(f64::NAN),
        };
        nodes.push(flat);
        values.push(v);
    }
    Ok(BoundaryData { nodes, values })
}

struct BlockLayout {
    /// Interior runs per (i, j) block, indexed i·N_β' + j.
    runs: Vec<Vec<(usize, usize)>>,
}

impl BlockLayout {
    fn new(mesh: &Mesh3D) -> Self {
        let (na, nb, _) = mesh.dims();
        let runs = (0..na * nb).map(|b| interior_runs(mesh, b / nb, b % nb)).collect();
        Self { runs }
    }
}

/// Advance one level backwards: from V^{n+1} to V^n.
pub fn step_backward(
    next: &ValueField,
    mesh: &Mesh3D,
    params: &ModelParams,
    numerics: &NumericalParams,
) -> Result<(ValueField, StepReport)> {
    let layout = BlockLayout::new(mesh);
    step_with_layout(next, mesh, params, numerics, &layout)
}

fn step_with_layout(
    next: &ValueField,
    mesh: &Mesh3D,
    params: &ModelParams,
    numerics: &NumericalParams,
    layout: &BlockLayout,
) -> Result<(ValueField, StepReport)> {
    if next.time_index == 0 {
        return Err(Error::Contract("cannot step back from t = 0".into()));
    }
    let ns = mesh.n_price();
    let threshold = numerics.tol_max * solvent_sup_norm(&next.values, mesh).max(1.0);
    let mut policy = PenaltyPolicy::inactive(mesh.len(), numerics.lambda_b, numerics.lambda_c);
    let mut current = next.values.clone();
    let mut candidate = current.clone();
    let mut iterations = 0;
    let mut tol = f64::INFINITY;

    while iterations < numerics.p_max {
        policy.update(mesh, params, &current);
        candidate.copy_from_slice(&current);
        candidate
            .par_chunks_mut(ns)
            .zip(layout.runs.par_iter())
            .enumerate()
            .try_for_each(|(b, (line, runs))| -> Result<()> {
                let (i, j) = (b / mesh.betas.len(), b % mesh.betas.len());
                let mut scratch = Vec::new();
                for &(start, end) in runs {
                    let sys = assemble_run(i, j, start, end, mesh, params, &policy, &current, &next.values);
                    scratch.resize(sys.len(), 0.0);
                    thomas_solve_into(
                        &sys.lower,
                        &sys.diag,
                        &sys.upper,
                        &sys.rhs,
                        &mut line[start..end],
                        &mut scratch,
                    )?;
                }
                Ok(())
            })?;
        tol = candidate
            .iter()
            .zip(&current)
            .zip(mesh.kinds())
            .filter(|(_, k)| **k == NodeKind::Interior)
            .fold(0.0f64, |m, ((a, b), _)| m.max((a - b).abs()));
        if !tol.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite policy increment at time level {}",
                next.time_index - 1
            )));
        }
        std::mem::swap(&mut current, &mut candidate);
        iterations += 1;
        if tol < threshold {
            break;
        }
    }

    let (buy_nodes, sell_nodes) = policy.active_count();
    let report = StepReport {
        time_index: next.time_index - 1,
        iterations,
        final_tol: tol,
        threshold,
        converged: tol < threshold,
        buy_nodes,
        sell_nodes,
    };
    Ok((
        ValueField {
            values: current,
            time_index: next.time_index - 1,
        },
        report,
    ))
}

/// March from the terminal level N down to t = 0.
pub fn solve(
    mesh: &Mesh3D,
    params: &ModelParams,
    numerics: &NumericalParams,
    utility: &UtilityFunction,
    position: Position,
) -> Result<SolveOutput> {
    numerics.validate()?;
    let start = Instant::now();
    let terminal = terminal_condition(mesh, params, utility, position)?;
    solve_from(terminal, mesh, params, numerics, start)
}

/// March from an arbitrary terminal field (its non-interior values act as
/// Dirichlet data).
pub fn solve_from_terminal(
    terminal: ValueField,
    mesh: &Mesh3D,
    params: &ModelParams,
    numerics: &NumericalParams,
) -> Result<SolveOutput> {
    numerics.validate()?;
    solve_from(terminal, mesh, params, numerics, Instant::now())
}

fn solve_from(
    terminal: ValueField,
    mesh: &Mesh3D,
    params: &ModelParams,
    numerics: &NumericalParams,
    start: Instant,
) -> Result<SolveOutput> {
    let layout = BlockLayout::new(mesh);
    let mut history = Vec::new();
    let mut steps = Vec::with_capacity(terminal.time_index);
    let mut warnings = Vec::new();
    let mut field = terminal;
    while field.time_index > 0 {
        let (prev, step) = step_with_layout(&field, mesh, params, numerics, &layout)?;
        if !step.converged && step.final_tol > numerics.tol_warn {
            warnings.push(format!(
                "time level {}: policy iteration stopped at p_max = {} with increment {:.3e}",
                step.time_index, numerics.p_max, step.final_tol
            ));
        }
        steps.push(step);
        if numerics.keep_history {
            history.push(std::mem::replace(&mut field, prev));
        } else {
            field = prev;
        }
    }
    if numerics.keep_history {
        history.push(field.clone());
    }
    let converged = steps.iter().all(|s| s.converged);
    Ok(SolveOutput {
        field,
        report: SolveReport {
            steps,
            wall_time: start.elapsed(),
            converged,
            warnings,
        },
        history,
    })
}

/// Discrete complementarity residuals of a solved field.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementarityReport {
    pub interior_nodes: usize,
    /// max over interior nodes of max(0, −𝓛_B V).
    pub worst_buy: f64,
    /// max over interior nodes of max(0, −𝓛_C V).
    pub worst_sell: f64,
    pub threshold_buy: f64,
    pub threshold_sell: f64,
    /// Fraction of interior nodes beyond either threshold.
    pub violating_fraction: f64,
}

impl ComplementarityReport {
    pub fn worst(&self) -> f64 {
        self.worst_buy.max(self.worst_sell)
    }
}

/// Checks 𝓛_B V ≥ −c/λ_B and 𝓛_C V ≥ −c/λ_C with c = max(1, ‖V‖∞).
pub fn complementarity(
    field: &ValueField,
    mesh: &Mesh3D,
    params: &ModelParams,
    numerics: &NumericalParams,
) -> Result<ComplementarityReport> {
    let c = field.sup_norm(mesh).max(1.0);
    let threshold_buy = c / numerics.lambda_b;
    let threshold_sell = c / numerics.lambda_c;
    let (mut worst_buy, mut worst_sell) = (0.0f64, 0.0f64);
    let mut interior = 0usize;
    let mut violating = 0usize;
    for flat in 0..mesh.len() {
        if mesh.kind_at(flat) != NodeKind::Interior {
            continue;
        }
        let n = mesh.node_index(flat);
        let lb = apply_lb(&field.values, mesh, params, n.i, n.j, n.k)?;
        let lc = apply_lc(&field.values, mesh, params, n.i, n.j, n.k)?;
        worst_buy = worst_buy.max(-lb);
        worst_sell = worst_sell.max(-lc);
        interior += 1;
        if lb < -threshold_buy || lc < -threshold_sell {
            violating += 1;
        }
    }
    Ok(ComplementarityReport {
        interior_nodes: interior,
        worst_buy,
        worst_sell,
        threshold_buy,
        threshold_sell,
        violating_fraction: if interior == 0 { 0.0 } else { violating as f64 / interior as f64 },
    })
}
