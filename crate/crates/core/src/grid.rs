//! Tensor-product mesh over the truncated solvency region.
//!
//! Nodes are stacked with `k` (the price index) varying fastest, so the
//! price line of every `(i, j)` block is one contiguous slice of a field.

use crate::error::{Error, NodeIndex, Result};
use crate::model::{wealth, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SMeshKind {
    Uniform,
    /// Geometric nodes on [K/2, S⁺] with an extra node at S = 0.
    LogUniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub n_s: usize,
    /// Number of time steps N.
    pub n_time: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub s_max: f64,
    pub s_mesh: SMeshKind,
}

impl GridSpec {
    /// N_α = N_β = 6 on [0.2, 0.6] × [−100, 100], N_S = 100 on [0, 100], N = 10.
    pub fn baseline() -> Self {
        Self {
            n_alpha: 6,
            n_beta: 6,
            n_s: 100,
            n_time: 10,
            alpha_min: 0.2,
            alpha_max: 0.6,
            beta_min: -100.0,
            beta_max: 100.0,
            s_max: 100.0,
            s_mesh: SMeshKind::Uniform,
        }
    }

    pub fn h_alpha(&self) -> f64 {
        (self.alpha_max - self.alpha_min) / self.n_alpha as f64
    }

    pub fn h_beta(&self) -> f64 {
        (self.beta_max - self.beta_min) / self.n_beta as f64
    }

    pub fn dt(&self, params: &ModelParams) -> f64 {
        params.maturity / self.n_time as f64
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        for (name, n) in [
            ("N_alpha", self.n_alpha),
            ("N_beta", self.n_beta),
            ("N_S", self.n_s),
        ] {
            if n < 2 {
                return Err(Error::Config(format!("{name} must be >= 2, got {n}")));
            }
        }
        if self.n_time < 1 {
            return Err(Error::Config("N must be >= 1".into()));
        }
        let spans = [
            ("L_alpha", self.alpha_min, self.alpha_max),
            ("L_beta", self.beta_min, self.beta_max),
            ("S", 0.0, self.s_max),
        ];
        for (name, lo, hi) in spans {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "degenerate {name} span [{lo}, {hi}]"
                )));
            }
        }
        if self.s_mesh == SMeshKind::LogUniform && 0.5 * params.strike >= self.s_max {
            return Err(Error::Config(format!(
                "log-uniform price mesh needs K/2 < S_max, got K/2 = {} and S_max = {}",
                0.5 * params.strike,
                self.s_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Solvent, off the box edges, all six face neighbours solvent.
    Interior,
    /// Solvent, but on a box edge or next to an insolvent node.
    Boundary,
    /// Non-positive liquid wealth; outside the computational domain.
    Insolvent,
}

#[derive(Debug, Clone)]
pub struct Mesh3D {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub prices: Vec<f64>,
    pub h_alpha: f64,
    pub h_beta: f64,
    pub dt: f64,
    pub n_time: usize,
    kinds: Vec<NodeKind>,
}

impl Mesh3D {
    pub fn build(spec: &GridSpec, params: &ModelParams) -> Result<Self> {
        spec.validate(params)?;
        let h_alpha = spec.h_alpha();
        let h_beta = spec.h_beta();
        let alphas: Vec<f64> = (0..=spec.n_alpha)
            .map(|i| spec.alpha_min + i as f64 * h_alpha)
            .collect();
        let betas: Vec<f64> = (0..=spec.n_beta)
            .map(|j| spec.beta_min + j as f64 * h_beta)
            .collect();
        let prices = price_nodes(spec, params);

        let (na, nb, ns) = (alphas.len(), betas.len(), prices.len());
        let solvent: Vec<bool> = (0..na * nb * ns)
            .map(|idx| {
                let (i, j, k) = (idx / (nb * ns), (idx / ns) % nb, idx % ns);
                wealth(alphas[i], betas[j], prices[k], params.theta) > 0.0
            })
            .collect();
        let at = |i: usize, j: usize, k: usize| solvent[(i * nb + j) * ns + k];

        let mut kinds = Vec::with_capacity(solvent.len());
        for i in 0..na {
            for j in 0..nb {
                for k in 0..ns {
                    let kind = if !at(i, j, k) {
                        NodeKind::Insolvent
                    } else if i == 0
                        || i == na - 1
                        || j == 0
                        || j == nb - 1
                        || k == 0
                        || k == ns - 1
                        || !at(i - 1, j, k)
                        || !at(i + 1, j, k)
                        || !at(i, j - 1, k)
                        || !at(i, j + 1, k)
                        || !at(i, j, k - 1)
                        || !at(i, j, k + 1)
                    {
                        NodeKind::Boundary
                    } else {
                        NodeKind::Interior
                    };
                    kinds.push(kind);
                }
            }
        }

        Ok(Self {
            alphas,
            betas,
            prices,
            h_alpha,
            h_beta,
            dt: spec.dt(params),
            n_time: spec.n_time,
            kinds,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.alphas.len(), self.betas.len(), self.prices.len())
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    #[inline]
    pub fn n_price(&self) -> usize {
        self.prices.len()
    }

    /// Flat index of node (i, j, k); k is contiguous.
    pub fn stack_index(&self, i: usize, j: usize, k: usize) -> Result<usize> {
        let (na, nb, ns) = self.dims();
        if i >= na || j >= nb || k >= ns {
            return Err(Error::Index(format!(
                "node ({i}, {j}, {k}) outside {na}x{nb}x{ns} mesh"
            )));
        }
        Ok(self.idx(i, j, k))
    }

    pub fn unstack(&self, flat: usize) -> Result<(usize, usize, usize)> {
        if flat >= self.len() {
            return Err(Error::Index(format!(
                "flat index {flat} outside mesh of {} nodes",
                self.len()
            )));
        }
        let (_, nb, ns) = self.dims();
        Ok((flat / (nb * ns), (flat / ns) % nb, flat % ns))
    }

    /// Unchecked stacking for hot loops.
    #[inline(always)]
    pub(crate) fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.betas.len() + j) * self.prices.len() + k
    }

    #[inline]
    pub fn kind(&self, i: usize, j: usize, k: usize) -> NodeKind {
        self.kinds[self.idx(i, j, k)]
    }

    #[inline]
    pub fn kind_at(&self, flat: usize) -> NodeKind {
        self.kinds[flat]
    }

    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }

    pub fn node_index(&self, flat: usize) -> NodeIndex {
        let (_, nb, ns) = self.dims();
        NodeIndex {
            i: flat / (nb * ns),
            j: (flat / ns) % nb,
            k: flat % ns,
        }
    }

    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let n = self.node_index(flat);
        [self.alphas[n.i], self.betas[n.j], self.prices[n.k]]
    }

    pub fn wealth_at(&self, flat: usize, theta: f64) -> f64 {
        let [a, b, s] = self.coords(flat);
        wealth(a, b, s, theta)
    }

    /// Step to the next price node, S_{k+1} − S_k.
    #[inline]
    pub fn h_s_up(&self, k: usize) -> f64 {
        self.prices[k + 1] - self.prices[k]
    }

    #[inline]
    pub fn h_s_down(&self, k: usize) -> f64 {
        self.prices[k] - self.prices[k - 1]
    }

    /// Number of nodes carrying an unknown.
    pub fn interior_count(&self) -> usize {
        self.kinds.iter().filter(|&&k| k == NodeKind::Interior).count()
    }

    pub fn nearest_alpha(&self, alpha: f64) -> usize {
        nearest(&self.alphas, alpha)
    }

    pub fn nearest_beta(&self, beta: f64) -> usize {
        nearest(&self.betas, beta)
    }

    pub fn nearest_price(&self, s: f64) -> usize {
        nearest(&self.prices, s)
    }
}

fn nearest(xs: &[f64], x: f64) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn price_nodes(spec: &GridSpec, params: &ModelParams) -> Vec<f64> {
    let n = spec.n_s;
    match spec.s_mesh {
        SMeshKind::Uniform => {
            let h = spec.s_max / n as f64;
            (0..=n).map(|k| k as f64 * h).collect()
        }
        SMeshKind::LogUniform => {
            let s_min = 0.5 * params.strike;
            let ratio = (spec.s_max / s_min).ln();
            let mut s = Vec::with_capacity(n + 1);
            s.push(0.0);
            for k in 1..=n {
                let x = (k - 1) as f64 / (n - 1) as f64;
                s.push(s_min * (ratio * x).exp());
            }
            s[n] = spec.s_max;
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline_mesh() -> Mesh3D {
        Mesh3D::build(&GridSpec::baseline(), &ModelParams::baseline()).unwrap()
    }

    #[test]
    fn uniform_price_step_is_one() {
        let m = baseline_mesh();
        assert_eq!(m.prices.len(), 101);
        for (k, s) in m.prices.iter().enumerate() {
            assert!((s - k as f64).abs() < 1e-12);
        }
        assert!((m.h_alpha - 0.4 / 6.0).abs() < 1e-15);
        assert!((m.h_beta - 200.0 / 6.0).abs() < 1e-12);
        assert!((m.dt - 0.1).abs() < 1e-15);
    }

    #[test]
    fn solvency_examples() {
        let m = baseline_mesh();
        // α = 0.4 is i = 3; β = −100 is j = 0; β = 100 is j = 6.
        assert!((m.alphas[3] - 0.4).abs() < 1e-12);
        assert_eq!(m.kind(3, 0, 100), NodeKind::Insolvent);
        assert_ne!(m.kind(3, 6, 50), NodeKind::Insolvent);
        assert!(wealth(0.4, -100.0, 100.0, 0.01) < 0.0);
        assert!(wealth(0.4, 100.0, 50.0, 0.01) > 0.0);
    }

    #[test]
    fn stacking_examples() {
        let m = baseline_mesh();
        assert_eq!(m.stack_index(0, 0, 0).unwrap(), 0);
        for k in 0..m.n_price() {
            assert_eq!(m.stack_index(0, 0, k).unwrap(), k);
        }
        let (na, nb, ns) = m.dims();
        for i in 0..na {
            for j in 0..nb {
                for k in 0..ns {
                    let f = m.stack_index(i, j, k).unwrap();
                    assert_eq!(m.unstack(f).unwrap(), (i, j, k));
                }
            }
        }
        assert!(matches!(m.stack_index(na, 0, 0), Err(Error::Index(_))));
        assert!(matches!(m.unstack(m.len()), Err(Error::Index(_))));
    }

    #[test]
    fn interior_nodes_have_solvent_neighbours() {
        let m = baseline_mesh();
        let (na, nb, ns) = m.dims();
        let mut interior = 0;
        for i in 0..na {
            for j in 0..nb {
                for k in 0..ns {
                    if m.kind(i, j, k) != NodeKind::Interior {
                        continue;
                    }
                    interior += 1;
                    assert!(i > 0 && i + 1 < na && j > 0 && j + 1 < nb && k > 0 && k + 1 < ns);
                    for (a, b, c) in [
                        (i - 1, j, k),
                        (i + 1, j, k),
                        (i, j - 1, k),
                        (i, j + 1, k),
                        (i, j, k - 1),
                        (i, j, k + 1),
                    ] {
                        assert_ne!(m.kind(a, b, c), NodeKind::Insolvent);
                    }
                }
            }
        }
        assert_eq!(interior, m.interior_count());
        assert!(interior > 0);
    }

    #[test]
    fn classification_matches_solvency_expression() {
        let p = ModelParams::baseline();
        let m = baseline_mesh();
        for f in 0..m.len() {
            let solvent = m.wealth_at(f, p.theta) > 0.0;
            assert_eq!(solvent, m.kind_at(f) != NodeKind::Insolvent);
        }
    }

    #[test]
    fn log_mesh_shares_endpoints() {
        let p = ModelParams::baseline();
        let mut spec = GridSpec::baseline();
        let uni = Mesh3D::build(&spec, &p).unwrap();
        spec.s_mesh = SMeshKind::LogUniform;
        let log = Mesh3D::build(&spec, &p).unwrap();
        assert_eq!(uni.prices.len(), log.prices.len());
        assert_eq!(log.prices[0], 0.0);
        assert_eq!(log.prices[1], 25.0);
        assert_eq!(*log.prices.last().unwrap(), spec.s_max);
        assert!(log.prices.windows(2).all(|w| w[0] < w[1]));
        // geometric spacing: constant ratio after the S = 0 node
        let r0 = log.prices[2] / log.prices[1];
        let r1 = log.prices[51] / log.prices[50];
        assert!((r0 - r1).abs() < 1e-12);
    }

    #[test]
    fn coordinates_strictly_increasing() {
        let m = baseline_mesh();
        for xs in [&m.alphas, &m.betas, &m.prices] {
            assert!(xs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn degenerate_spans_rejected() {
        let p = ModelParams::baseline();
        let mut spec = GridSpec::baseline();
        spec.alpha_max = spec.alpha_min;
        assert!(matches!(Mesh3D::build(&spec, &p), Err(Error::Config(_))));
        let mut spec = GridSpec::baseline();
        spec.n_s = 1;
        assert!(matches!(Mesh3D::build(&spec, &p), Err(Error::Config(_))));
        let mut spec = GridSpec::baseline();
        spec.s_mesh = SMeshKind::LogUniform;
        spec.s_max = 20.0;
        assert!(matches!(Mesh3D::build(&spec, &p), Err(Error::Config(_))));
    }

    #[test]
    fn nearest_slice_hits_figure_node() {
        let m = baseline_mesh();
        let i = m.nearest_alpha(0.467);
        let j = m.nearest_beta(33.3);
        assert_eq!((i, j), (4, 4));
        assert_eq!(m.nearest_price(50.2), 50);
    }
}
