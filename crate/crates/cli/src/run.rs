//! Run orchestration: solve v⁰ and v^δ, extract the price, run the
//! property checks and write the artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use utilprice::{
    buy_and_hold_utility, check_bounds, check_frictionless_limit, complementarity, indifference_price, solve,
    terminal_condition, BoundCheckOptions, BoundReport, ComplementarityReport, FrictionlessReport, GridSpec,
    McEstimate, Mesh3D, NodeKind, NumericalParams, PayoffKind, Position, PriceSurface, SliceRow, SolveOutput,
    SolveReport, UtilityFunction, ValueField,
};

use crate::config::RunConfig;
use crate::CliError;

pub const CSV_HEADER: &str = "S,price,bs_bound,script_v0,script_vdelta";
pub const BENCH_HEADER: &str = "cells,seconds,seconds_per_cell_per_iter";

/// Build the mesh and reject configurations whose terminal wealth leaves
/// the utility's domain at a solvent node, before any field is allocated.
pub fn prevalidate(cfg: &RunConfig) -> Result<Mesh3D, CliError> {
    let mesh = Mesh3D::build(&cfg.grid, &cfg.params)?;
    for position in [Position::Flat, cfg.params.delta] {
        for flat in 0..mesh.len() {
            if mesh.kind_at(flat) == NodeKind::Insolvent {
                continue;
            }
            utilprice::solver::dirichlet_value(flat, &mesh, &cfg.params, &cfg.utility, position)?;
        }
    }
    Ok(mesh)
}

/// v⁰, v^δ and the price surface at t = 0.
#[derive(Debug, Clone)]
pub struct PricedPair {
    pub v0: SolveOutput,
    pub vdelta: SolveOutput,
    pub surface: PriceSurface,
}

pub fn solve_pair(cfg: &RunConfig, mesh: &Mesh3D) -> Result<PricedPair, CliError> {
    let p = &cfg.params;
    let v0 = solve(mesh, p, &cfg.numerics, &cfg.utility, Position::Flat)?;
    let vdelta = solve(mesh, p, &cfg.numerics, &cfg.utility, p.delta)?;
    let surface = indifference_price(&v0.field, &vdelta.field, mesh, p, &cfg.utility, p.delta)?;
    Ok(PricedPair { v0, vdelta, surface })
}

/// Grid indices (i, j) nearest to the requested slice.
pub fn slice_indices(mesh: &Mesh3D, slice: (f64, f64)) -> (usize, usize) {
    (mesh.nearest_alpha(slice.0), mesh.nearest_beta(slice.1))
}

pub fn price_curve_csv(rows: &[SliceRow]) -> String {
    let mut out = String::with_capacity(96 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.s, r.price, r.bs_bound, r.script_v0, r.script_vdelta
        );
    }
    out
}

/// Pass/fail result of one property check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Nodewise v^{−1} ≤ v⁰ ≤ v^{+1} over solvent nodes, with slack
/// `rel_slack`·max ‖v‖∞. Returns (worst excess, slack).
pub fn delta_monotonicity(
    short: &ValueField,
    flat: &ValueField,
    long: &ValueField,
    mesh: &Mesh3D,
    rel_slack: f64,
) -> (f64, f64) {
    let norm = [short, flat, long].iter().map(|f| f.sup_norm(mesh)).fold(0.0, f64::max);
    let mut worst = f64::NEG_INFINITY;
    for idx in 0..mesh.len() {
        if mesh.kind_at(idx) == NodeKind::Insolvent {
            continue;
        }
        worst = worst
            .max(short.values[idx] - flat.values[idx])
            .max(flat.values[idx] - long.values[idx]);
    }
    (worst, rel_slack * norm)
}

pub fn check_monotonicity(cfg: &RunConfig, mesh: &Mesh3D) -> Result<CheckOutcome, CliError> {
    let solve_at = |pos| -> Result<ValueField, CliError> {
        Ok(solve(mesh, &cfg.params, &cfg.numerics, &cfg.utility, pos)?.field)
    };
    let (short, flat, long) = (solve_at(Position::Short)?, solve_at(Position::Flat)?, solve_at(Position::Long)?);
    let (worst, slack) = delta_monotonicity(&short, &flat, &long, mesh, 1e-8);
    Ok(CheckOutcome::new(
        "delta monotonicity",
        worst <= slack,
        format!("max(v^-1 - v^0, v^0 - v^+1) = {worst:.3e}, slack {slack:.3e}"),
    ))
}

/// Worst complementarity residual at λ and at 2λ, and their ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyHalving {
    pub base: ComplementarityReport,
    pub doubled: ComplementarityReport,
    pub ratio: f64,
}

pub fn penalty_halving(cfg: &RunConfig, mesh: &Mesh3D, field: &ValueField) -> Result<PenaltyHalving, CliError> {
    let base = complementarity(field, mesh, &cfg.params, &cfg.numerics)?;
    let numerics = NumericalParams {
        lambda_b: 2.0 * cfg.numerics.lambda_b,
        lambda_c: 2.0 * cfg.numerics.lambda_c,
        ..cfg.numerics
    };
    let refined = solve(mesh, &cfg.params, &numerics, &cfg.utility, cfg.params.delta)?;
    let doubled = complementarity(&refined.field, mesh, &cfg.params, &numerics)?;
    let ratio = base.worst() / doubled.worst();
    Ok(PenaltyHalving { base, doubled, ratio })
}

/// Residuals below this are treated as no active constraint.
const RESIDUAL_FLOOR: f64 = 1e-12;

pub fn halving_outcome(h: &PenaltyHalving) -> CheckOutcome {
    let feasible = h.base.violating_fraction == 0.0;
    let inactive = h.base.worst() <= RESIDUAL_FLOOR && h.doubled.worst() <= RESIDUAL_FLOOR;
    let halves = inactive || (1.5..=3.0).contains(&h.ratio);
    CheckOutcome::new(
        "complementarity feasibility",
        feasible && halves,
        format!(
            "violating fraction {:.3e}; worst residual {:.4e} at lambda, {:.4e} at 2 lambda, ratio {:.3} (need [1.5, 3])",
            h.base.violating_fraction,
            h.base.worst(),
            h.doubled.worst(),
            h.ratio
        ),
    )
}

pub fn bounds_outcomes(report: &BoundReport) -> [CheckOutcome; 2] {
    let o = &report.options;
    let w = &report.with_option;
    let f = &report.flat;
    [
        CheckOutcome::new(
            "Black-Scholes upper bound",
            w.violations == 0 && f.violations == 0,
            format!(
                "{} nodes checked; violations {} (with option) / {} (without), max excess {:.4} / {:.4}, slack {:.4}",
                report.checked_nodes, w.violations, f.violations, w.max_excess, f.max_excess, o.bound_slack
            ),
        ),
        CheckOutcome::new(
            "beta independence",
            w.max_beta_variation <= o.beta_slack,
            format!(
                "max |V - mean_j V| = {:.4} (with option) / {:.4} (without), limit {:.4}",
                w.max_beta_variation, f.max_beta_variation, o.beta_slack
            ),
        ),
    ]
}

pub fn frictionless_outcome(report: &FrictionlessReport, limit: f64) -> CheckOutcome {
    CheckOutcome::new(
        "frictionless linear limit",
        report.max_rel_error <= limit,
        format!(
            "max |price - bs_bound| / K = {:.4e} over {} nodes (worst {:?}), limit {limit}",
            report.max_rel_error, report.nodes, report.worst_node
        ),
    )
}

/// MC buy-and-hold lower bound for v⁰ at the node nearest (α, β, K).
#[derive(Debug, Clone, PartialEq)]
pub struct McBound {
    pub node: (usize, usize, usize),
    pub v0: f64,
    pub estimate: McEstimate,
    pub margin: f64,
}

pub fn mc_bound(cfg: &RunConfig, mesh: &Mesh3D, v0: &ValueField, slice: (f64, f64)) -> Result<Option<McBound>, CliError> {
    let Some(mc) = cfg.mc else { return Ok(None) };
    let (i, j) = slice_indices(mesh, slice);
    let k = mesh.nearest_price(cfg.params.strike);
    let value = v0.at(mesh, i, j, k);
    let (a, b, s) = (mesh.alphas[i], mesh.betas[j], mesh.prices[k]);
    let estimate = buy_and_hold_utility(a, b, s, &cfg.params, &cfg.utility, &mc)?;
    let margin = value - (estimate.mean - 3.0 * estimate.std_error - 0.01 * value.abs().max(1.0));
    Ok(Some(McBound {
        node: (i, j, k),
        v0: value,
        estimate,
        margin,
    }))
}

pub fn mc_outcome(b: &McBound) -> CheckOutcome {
    CheckOutcome::new(
        "Monte-Carlo lower bound",
        b.margin >= 0.0,
        format!(
            "v0{:?} = {:.8}, buy-and-hold mean {:.8} +- {:.2e} ({} samples), margin {:.3e}",
            b.node, b.v0, b.estimate.mean, b.estimate.std_error, b.estimate.samples, b.margin
        ),
    )
}

/// Sign, monotonicity and bound checks on one price curve. The curve is
/// oriented so that a written call (δ = −1) is the nonnegative,
/// nondecreasing case.
pub fn curve_outcome(rows: &[SliceRow], cfg: &RunConfig) -> CheckOutcome {
    let p = &cfg.params;
    let tol = 1e-6 * p.strike;
    let sign = -p.delta.sign();
    let dir = match p.payoff {
        PayoffKind::Call => 1.0,
        PayoffKind::Put => -1.0,
    };
    let negative = rows.iter().filter(|r| sign * r.price < -tol).count();
    let reversals = rows
        .windows(2)
        .filter(|w| sign * dir * (w[1].price - w[0].price) < -tol)
        .count();
    let mut detail = format!("{} points, {negative} negative, {reversals} monotonicity reversals", rows.len());
    let mut passed = negative == 0 && reversals == 0;
    if cfg.utility.has_constant_risk_aversion() {
        let slack = 0.005 * p.strike;
        let above = rows
            .iter()
            .filter(|r| sign * (r.price - r.bs_bound) > slack)
            .count();
        let worst = rows.iter().map(|r| sign * (r.price - r.bs_bound)).fold(f64::NEG_INFINITY, f64::max);
        let _ = write!(detail, ", {above} above bound + {slack} (max excess {worst:.4})");
        passed &= above == 0;
    }
    CheckOutcome::new("price curve shape", passed, detail)
}

fn solve_summary(out: &mut String, label: &str, r: &SolveReport) {
    let _ = writeln!(
        out,
        "{label}: {} steps, {} policy iterations (max {} per step), converged {}, worst final increment {:.3e}, wall {:.3} s",
        r.steps.len(),
        r.total_iterations(),
        r.max_iterations(),
        r.converged,
        r.worst_final_tol(),
        r.wall_time.as_secs_f64()
    );
    for w in &r.warnings {
        let _ = writeln!(out, "  warning: {w}");
    }
}

fn complementarity_summary(out: &mut String, label: &str, c: &ComplementarityReport) {
    let _ = writeln!(
        out,
        "{label}: {} interior nodes, worst buy residual {:.4e} (threshold {:.4e}), worst sell residual {:.4e} (threshold {:.4e}), violating fraction {:.3e}",
        c.interior_nodes, c.worst_buy, c.threshold_buy, c.worst_sell, c.threshold_sell, c.violating_fraction
    );
}

/// Everything `price` computes, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct PriceRun {
    pub mesh: Mesh3D,
    pub slice: (usize, usize),
    pub pair: PricedPair,
    pub rows: Vec<SliceRow>,
    pub checks: Vec<CheckOutcome>,
    pub report: String,
}

/// Solve, write `price_curve.csv` and `report.txt` into `cfg.out_dir`.
pub fn run_price(cfg: &RunConfig) -> Result<PriceRun, CliError> {
    let mesh = prevalidate(cfg)?;
    let pair = solve_pair(cfg, &mesh)?;
    let (i, j) = slice_indices(&mesh, cfg.slice);
    let rows = pair.surface.slice(&mesh, i, j);

    let p = &cfg.params;
    let mut report = String::new();
    let _ = writeln!(report, "utility: {:?}", cfg.utility);
    let _ = writeln!(report, "model: {p:?}");
    let _ = writeln!(report, "grid: {:?}", cfg.grid);
    let _ = writeln!(
        report,
        "numerics: lambda_B {}, lambda_C {}, tol_max {:e}, p_max {}",
        cfg.numerics.lambda_b, cfg.numerics.lambda_c, cfg.numerics.tol_max, cfg.numerics.p_max
    );
    let _ = writeln!(
        report,
        "slice: alpha = {} (i = {i}), beta = {} (j = {j})",
        mesh.alphas[i], mesh.betas[j]
    );
    report.push('\n');
    solve_summary(&mut report, "v0", &pair.v0.report);
    solve_summary(&mut report, "vdelta", &pair.vdelta.report);
    report.push('\n');

    let mut checks = Vec::new();
    let c0 = complementarity(&pair.v0.field, &mesh, p, &cfg.numerics)?;
    let cd = complementarity(&pair.vdelta.field, &mesh, p, &cfg.numerics)?;
    complementarity_summary(&mut report, "complementarity v0", &c0);
    complementarity_summary(&mut report, "complementarity vdelta", &cd);
    if cfg.utility.has_constant_risk_aversion() {
        let b = check_bounds(&pair.surface, &mesh, p, &cfg.utility, BoundCheckOptions::for_strike(p.strike))?;
        checks.extend(bounds_outcomes(&b));
    }
    if cfg.utility == UtilityFunction::Linear && p.theta == 0.0 {
        let f = check_frictionless_limit(&pair.surface, &mesh, p, (0.8 * p.strike, 1.2 * p.strike));
        checks.push(frictionless_outcome(&f, 0.02));
    }
    if let Some(b) = mc_bound(cfg, &mesh, &pair.v0.field, cfg.slice)? {
        checks.push(mc_outcome(&b));
    }
    checks.push(curve_outcome(&rows, cfg));
    report.push('\n');
    for c in &checks {
        report.push_str(&c.line());
        report.push('\n');
    }

    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    write_file(&cfg.out_dir.join("price_curve.csv"), &price_curve_csv(&rows))?;
    write_file(&cfg.out_dir.join("report.txt"), &report)?;
    Ok(PriceRun {
        mesh,
        slice: (i, j),
        pair,
        rows,
        checks,
        report,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Full property suite for one configuration.
pub fn run_check(cfg: &RunConfig) -> Result<Vec<CheckOutcome>, CliError> {
    let mesh = prevalidate(cfg)?;
    // δ-monotonicity needs all three positions in the domain.
    terminal_condition(&mesh, &cfg.params, &cfg.utility, Position::Short)?;
    let pair = solve_pair(cfg, &mesh)?;
    let p = &cfg.params;
    let mut checks = vec![check_monotonicity(cfg, &mesh)?];
    checks.push(halving_outcome(&penalty_halving(cfg, &mesh, &pair.vdelta.field)?));
    if cfg.utility.has_constant_risk_aversion() {
        let b = check_bounds(&pair.surface, &mesh, p, &cfg.utility, BoundCheckOptions::for_strike(p.strike))?;
        checks.extend(bounds_outcomes(&b));
    }
    if cfg.utility == UtilityFunction::Linear && p.theta == 0.0 {
        let f = check_frictionless_limit(&pair.surface, &mesh, p, (0.8 * p.strike, 1.2 * p.strike));
        checks.push(frictionless_outcome(&f, 0.02));
    }
    if let Some(b) = mc_bound(cfg, &mesh, &pair.v0.field, cfg.slice)? {
        checks.push(mc_outcome(&b));
    }
    let (i, j) = slice_indices(&mesh, cfg.slice);
    checks.push(curve_outcome(&pair.surface.slice(&mesh, i, j), cfg));
    Ok(checks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub cells: usize,
    pub seconds: f64,
    pub iterations: usize,
}

impl BenchRow {
    pub fn seconds_per_cell_per_iter(&self) -> f64 {
        self.seconds / (self.cells as f64 * self.iterations.max(1) as f64)
    }
}

/// Median wall time of `repeats` solves of v⁰ on one grid, on a single
/// worker thread.
pub fn bench_grid(cfg: &RunConfig, grid: &GridSpec, repeats: usize) -> Result<BenchRow, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Numerical(format!("thread pool: {e}")))?;
    let mesh = Mesh3D::build(grid, &cfg.params)?;
    let mut times = Vec::with_capacity(repeats.max(1));
    let mut iterations = 0;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = pool.install(|| solve(&mesh, &cfg.params, &cfg.numerics, &cfg.utility, Position::Flat))?;
        times.push(start.elapsed().as_secs_f64());
        iterations = out.report.total_iterations();
    }
    times.sort_by(f64::total_cmp);
    Ok(BenchRow {
        cells: mesh.len(),
        seconds: times[times.len() / 2],
        iterations,
    })
}

/// Times the base grid, then the grid with each of N_S, N_α, N_β scaled by
/// its factor alone (factors of 1 are skipped).
pub fn run_bench(cfg: &RunConfig, scale: [usize; 3], repeats: usize) -> Result<Vec<BenchRow>, CliError> {
    let mut rows = vec![bench_grid(cfg, &cfg.grid, repeats)?];
    let [fs, fa, fb] = scale;
    let scaled = [
        (fs, GridSpec { n_s: cfg.grid.n_s * fs, ..cfg.grid }),
        (fa, GridSpec { n_alpha: cfg.grid.n_alpha * fa, ..cfg.grid }),
        (fb, GridSpec { n_beta: cfg.grid.n_beta * fb, ..cfg.grid }),
    ];
    for (factor, grid) in scaled {
        if factor > 1 {
            rows.push(bench_grid(cfg, &grid, repeats)?);
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{:.6e},{:.6e}", r.cells, r.seconds, r.seconds_per_cell_per_iter());
    }
    out
}
