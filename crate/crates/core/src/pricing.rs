//! Indifference price extraction and the bounds it is checked against.
//!
//! The price is the discounted difference of certainty equivalents of the
//! value functions with and without the option. The transformed field
//! 𝒱 is recovered from v through v = U(e^{μ(T−t)}(w + 𝒜 + 𝒱)).

use crate::error::{Error, Result, UtilityDomainError};
use crate::grid::{Mesh3D, NodeKind};
use crate::model::{bs_with_position, shift_a, wealth, ModelParams, Position, UtilityFunction};
use crate::solver::ValueField;

/// z solving U(w − z) = v.
pub fn certainty_equivalent(v_value: f64, w: f64, utility: &UtilityFunction) -> Result<f64, UtilityDomainError> {
    Ok(w - utility.inverse(v_value)?)
}

fn time_of(field: &ValueField, mesh: &Mesh3D) -> f64 {
    field.time_index as f64 * mesh.dt
}

/// Apply `f` at every node; solvent nodes propagate errors with their
/// location, insolvent nodes fall back to NaN.
fn nodewise<F>(mesh: &Mesh3D, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(usize) -> Result<f64, UtilityDomainError>,
{
    (0..mesh.len())
        .map(|flat| match f(flat) {
            Ok(v) => Ok(v),
            Err(_) if mesh.kind_at(flat) == NodeKind::Insolvent => Ok(f64::NAN),
            Err(e) => Err(e.at_node(mesh.node_index(flat), mesh.coords(flat)).into()),
        })
        .collect()
}

/// 𝒱 = e^{−μ(T−t)} U⁻¹(v) − w − 𝒜(β, t) at every node.
pub fn recover_script_v(
    v: &ValueField,
    mesh: &Mesh3D,
    params: &ModelParams,
    utility: &UtilityFunction,
) -> Result<Vec<f64>> {
    let t = time_of(v, mesh);
    let growth = (-params.mu * (params.maturity - t)).exp();
    let shifts = mesh
        .betas
        .iter()
        .map(|&b| shift_a(b, t, params))
        .collect::<Result<Vec<_>>>()?;
    nodewise(mesh, |flat| {
        let n = mesh.node_index(flat);
        let [a, b, s] = mesh.coords(flat);
        let ce = utility.inverse(v.values[flat])?;
        Ok(growth * ce - wealth(a, b, s, params.theta) - shifts[n.j])
    })
}

/// Price surface at one time level together with the fields it came from.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    pub position: Position,
    pub time: f64,
    /// e^{−r(T−t)}(U⁻¹(v⁰) − U⁻¹(v^δ)) per node.
    pub price: Vec<f64>,
    pub v0: ValueField,
    pub vdelta: ValueField,
    pub script_v0: Vec<f64>,
    pub script_vdelta: Vec<f64>,
    /// Frictionless risk-neutral-in-μ price per price node:
    /// −δ·e^{(μ−r)(T−t)}·𝒱_BS(S_k, t) for one unit of the contract.
    pub bs_bound: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceRow {
    pub s: f64,
    pub price: f64,
    pub bs_bound: f64,
    pub script_v0: f64,
    pub script_vdelta: f64,
}

impl PriceSurface {
    pub fn slice(&self, mesh: &Mesh3D, i: usize, j: usize) -> Vec<SliceRow> {
        (0..mesh.n_price())
            .map(|k| {
                let f = mesh.idx(i, j, k);
                SliceRow {
                    s: mesh.prices[k],
                    price: self.price[f],
                    bs_bound: self.bs_bound[k],
                    script_v0: self.script_v0[f],
                    script_vdelta: self.script_vdelta[f],
                }
            })
            .collect()
    }
}

pub fn indifference_price(
    v0: &ValueField,
    vdelta: &ValueField,
    mesh: &Mesh3D,
    params: &ModelParams,
    utility: &UtilityFunction,
    position: Position,
) -> Result<PriceSurface> {
    if v0.time_index != vdelta.time_index {
        return Err(Error::Contract(format!(
            "fields at different time levels: {} vs {}",
            v0.time_index, vdelta.time_index
        )));
    }
    if v0.values.len() != mesh.len() || vdelta.values.len() != mesh.len() {
        return Err(Error::Contract("field length does not match mesh".into()));
    }
    let t = time_of(v0, mesh);
    let tau = params.maturity - t;
    let discount = (-params.r * tau).exp();
    let price = nodewise(mesh, |flat| {
        Ok(discount * (utility.inverse(v0.values[flat])? - utility.inverse(vdelta.values[flat])?))
    })?;
    let growth = ((params.mu - params.r) * tau).exp();
    let bs_bound = mesh
        .prices
        .iter()
        .map(|&s| -position.sign() * growth * bs_with_position(s, t, params, Position::Long))
        .collect();
    Ok(PriceSurface {
        position,
        time: t,
        price,
        script_v0: recover_script_v(v0, mesh, params, utility)?,
        script_vdelta: recover_script_v(vdelta, mesh, params, utility)?,
        v0: v0.clone(),
        vdelta: vdelta.clone(),
        bs_bound,
    })
}

/// Slack and exclusion settings for the Black-Scholes upper bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheckOptions {
    pub bound_slack: f64,
    pub beta_slack: f64,
    /// Node layers next to the box faces excluded from the check.
    pub boundary_layers: usize,
}

impl BoundCheckOptions {
    pub fn for_strike(strike: f64) -> Self {
        Self {
            bound_slack: 0.005 * strike,
            beta_slack: 0.01 * strike,
            boundary_layers: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldBoundReport {
    /// max of 𝒱 − δ·𝒱_BS over checked nodes.
    pub max_excess: f64,
    pub violations: usize,
    /// max over (i, k) and j of |𝒱 − mean_j 𝒱|.
    pub max_beta_variation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub checked_nodes: usize,
    pub options: BoundCheckOptions,
    pub flat: FieldBoundReport,
    pub with_option: FieldBoundReport,
}

impl BoundReport {
    pub fn passes(&self) -> bool {
        self.with_option.violations == 0
            && self.flat.violations == 0
            && self.with_option.max_beta_variation <= self.options.beta_slack
    }
}

/// Checked nodes: interior, at least `layers` nodes from every box face.
fn checked_mask(mesh: &Mesh3D, layers: usize) -> Vec<bool> {
    let (na, nb, ns) = mesh.dims();
    let inside = |x: usize, n: usize| x >= layers && x + layers < n;
    (0..mesh.len())
        .map(|flat| {
            let n = mesh.node_index(flat);
            mesh.kind_at(flat) == NodeKind::Interior
                && inside(n.i, na)
                && inside(n.j, nb)
                && inside(n.k, ns)
        })
        .collect()
}

fn field_bound(
    script: &[f64],
    position: Position,
    mask: &[bool],
    mesh: &Mesh3D,
    params: &ModelParams,
    time: f64,
    options: &BoundCheckOptions,
) -> FieldBoundReport {
    let bs: Vec<f64> = mesh
        .prices
        .iter()
        .map(|&s| bs_with_position(s, time, params, position))
        .collect();
    let mut max_excess = f64::NEG_INFINITY;
    let mut violations = 0;
    for (flat, &on) in mask.iter().enumerate() {
        if !on {
            continue;
        }
        let excess = script[flat] - bs[mesh.node_index(flat).k];
        max_excess = max_excess.max(excess);
        if excess > options.bound_slack {
            violations += 1;
        }
    }

    let (na, nb, ns) = mesh.dims();
    let mut max_beta_variation = 0.0f64;
    let mut column = Vec::with_capacity(nb);
    for i in 0..na {
        for k in 0..ns {
            column.clear();
            column.extend((0..nb).map(|j| mesh.idx(i, j, k)).filter(|&f| mask[f]).map(|f| script[f]));
            if column.len() < 2 {
                continue;
            }
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            for v in &column {
                max_beta_variation = max_beta_variation.max((v - mean).abs());
            }
        }
    }
    FieldBoundReport {
        max_excess,
        violations,
        max_beta_variation,
    }
}

/// Checks 𝒱 ≤ 𝒱_BS and β-independence of 𝒱 on both recovered fields.
/// Only meaningful for constant risk aversion (linear or exponential).
pub fn check_bounds(
    surface: &PriceSurface,
    mesh: &Mesh3D,
    params: &ModelParams,
    utility: &UtilityFunction,
    options: BoundCheckOptions,
) -> Result<BoundReport> {
    if !utility.has_constant_risk_aversion() {
        return Err(Error::Contract(format!(
            "the Black-Scholes bound needs constant risk aversion, got {} utility",
            utility.family()
        )));
    }
    let mask = checked_mask(mesh, options.boundary_layers);
    let checked_nodes = mask.iter().filter(|&&m| m).count();
    Ok(BoundReport {
        checked_nodes,
        options,
        flat: field_bound(&surface.script_v0, Position::Flat, &mask, mesh, params, surface.time, &options),
        with_option: field_bound(
            &surface.script_vdelta,
            surface.position,
            &mask,
            mesh,
            params,
            surface.time,
            &options,
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionlessReport {
    pub nodes: usize,
    /// max |price − bs_bound| / K over interior nodes with S in range.
    pub max_rel_error: f64,
    pub worst_node: Option<(usize, usize, usize)>,
}

/// Distance of the price from the frictionless linear-utility limit over
/// interior nodes with S in `s_range`.
pub fn check_frictionless_limit(
    surface: &PriceSurface,
    mesh: &Mesh3D,
    params: &ModelParams,
    s_range: (f64, f64),
) -> FrictionlessReport {
    let mut worst = 0.0f64;
    let mut worst_node = None;
    let mut nodes = 0;
    for flat in 0..mesh.len() {
        let n = mesh.node_index(flat);
        let s = mesh.prices[n.k];
        if mesh.kind_at(flat) != NodeKind::Interior || s < s_range.0 || s > s_range.1 {
            continue;
        }
        nodes += 1;
        let err = (surface.price[flat] - surface.bs_bound[n.k]).abs() / params.strike;
        if err > worst || worst_node.is_none() {
            worst = worst.max(err);
            worst_node = Some((n.i, n.j, n.k));
        }
    }
    FrictionlessReport {
        nodes,
        max_rel_error: worst,
        worst_node,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::model::payoff;
    use crate::solver::terminal_condition;

    fn setup() -> (Mesh3D, ModelParams) {
        let p = ModelParams::baseline();
        (Mesh3D::build(&GridSpec::baseline(), &p).unwrap(), p)
    }

    #[test]
    fn certainty_equivalent_examples() {
        let lin = UtilityFunction::Linear;
        assert_eq!(certainty_equivalent(3.0, 10.0, &lin).unwrap(), 7.0);
        let exp = UtilityFunction::exponential(0.1).unwrap();
        let w = 10.0;
        assert!(certainty_equivalent(exp.eval(w).unwrap(), w, &exp).unwrap().abs() < 1e-12);
        let z = certainty_equivalent(exp.eval(4.0).unwrap(), 10.0, &exp).unwrap();
        assert!((z - 6.0).abs() < 1e-12);
        assert!(certainty_equivalent(1.5, 10.0, &exp).is_err());
    }

    #[test]
    fn terminal_fields_recover_terminal_data() {
        let (mesh, p) = setup();
        let exp = UtilityFunction::exponential(0.1).unwrap();
        for (pos, sign) in [(Position::Flat, 0.0), (Position::Long, 1.0), (Position::Short, -1.0)] {
            let term = terminal_condition(&mesh, &p, &exp, pos).unwrap();
            let script = recover_script_v(&term, &mesh, &p, &exp).unwrap();
            for f in 0..mesh.len() {
                let want = sign * payoff(mesh.coords(f)[2], &p);
                // 1 - exp(-γw) cancels at large w, costing about eps·e^{γw}/γ.
                assert!((script[f] - want).abs() < 1e-6 * (1.0 + want.abs()), "{pos:?} node {f}");
            }
        }
    }

    #[test]
    fn equal_fields_price_zero() {
        let (mesh, p) = setup();
        let exp = UtilityFunction::exponential(0.1).unwrap();
        let term = terminal_condition(&mesh, &p, &exp, Position::Flat).unwrap();
        let s = indifference_price(&term, &term, &mesh, &p, &exp, Position::Flat).unwrap();
        assert!(s.price.iter().all(|&v| v == 0.0));
        assert!(s.bs_bound.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_zero_rate_price_is_difference() {
        let (mesh, mut p) = setup();
        p.r = 0.0;
        let lin = UtilityFunction::Linear;
        let mut v0 = terminal_condition(&mesh, &p, &lin, Position::Flat).unwrap();
        let mut vd = terminal_condition(&mesh, &p, &lin, Position::Short).unwrap();
        v0.time_index = 0;
        vd.time_index = 0;
        let s = indifference_price(&v0, &vd, &mesh, &p, &lin, Position::Short).unwrap();
        for f in 0..mesh.len() {
            assert_eq!(s.price[f], v0.values[f] - vd.values[f]);
        }
    }

    #[test]
    fn swapping_fields_flips_sign() {
        let (mesh, p) = setup();
        let exp = UtilityFunction::exponential(0.1).unwrap();
        let mut v0 = terminal_condition(&mesh, &p, &exp, Position::Flat).unwrap();
        let mut vd = terminal_condition(&mesh, &p, &exp, Position::Short).unwrap();
        v0.time_index = 3;
        vd.time_index = 3;
        let a = indifference_price(&v0, &vd, &mesh, &p, &exp, Position::Short).unwrap();
        let b = indifference_price(&vd, &v0, &mesh, &p, &exp, Position::Short).unwrap();
        for (x, y) in a.price.iter().zip(&b.price) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn mismatched_levels_rejected() {
        let (mesh, p) = setup();
        let lin = UtilityFunction::Linear;
        let v0 = terminal_condition(&mesh, &p, &lin, Position::Flat).unwrap();
        let mut vd = v0.clone();
        vd.time_index -= 1;
        assert!(matches!(
            indifference_price(&v0, &vd, &mesh, &p, &lin, Position::Short),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bound_check_rejects_varying_risk_aversion() {
        let (mesh, p) = setup();
        let lin = UtilityFunction::Linear;
        let v0 = terminal_condition(&mesh, &p, &lin, Position::Flat).unwrap();
        let s = indifference_price(&v0, &v0, &mesh, &p, &lin, Position::Flat).unwrap();
        let pow = UtilityFunction::power(0.5).unwrap();
        assert!(check_bounds(&s, &mesh, &p, &pow, BoundCheckOptions::for_strike(50.0)).is_err());
        let rep = check_bounds(&s, &mesh, &p, &lin, BoundCheckOptions::for_strike(50.0)).unwrap();
        // δ = 0 terminal data: 𝒱 ≡ 0 ≤ 𝒱_BS ≡ 0.
        assert!(rep.flat.max_excess.abs() < 1e-9);
        assert_eq!(rep.with_option.violations, 0);
        assert!(rep.checked_nodes > 0);
    }
}
