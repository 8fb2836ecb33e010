//! Convex multi-label segmentation.
//!
//! Minimizes, over fields `u` whose rows lie on the unit simplex,
//!
//! ```text
//! E(u) = sum_x sum_l u(x, l) * cost(x, l) + lambda * TV(u)
//! ```
//!
//! where `TV` is the anisotropic total variation of every label channel and
//! `cost = -log(posterior)` (or its prior-blended variant). The saddle-point
//! form `min_u max_{|p| <= lambda} <u, cost> + <grad u, p>` is solved with
//! the first-order primal-dual iteration
//!
//! ```text
//! p    <- clamp(p + sigma * grad(u_bar), -lambda, lambda)
//! u'   <- proj_simplex(u - tau * (cost - div p))
//! u_bar <- u' + theta * (u' - u)
//! ```
//!
//! The dual objective is `D(p) = sum_x min_l (cost - div p)(x, l)`, so every
//! iteration yields the certificate `E(u) - D(p) >= 0`.

mod ops;

use serde::{Deserialize, Serialize};

pub use ops::{
    divergence, gradient, project_dual, project_simplex, project_simplex_in_place, total_variation,
    TvMode,
};

use crate::volume::{GridShape, LabelField, PosteriorField, SimplexField};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITERS: usize = 2000;
pub const KNN_LAMBDA: f64 = 1.0;
pub const PARZEN_LAMBDA: f64 = 5.0;

/// Per-voxel, per-label unary costs.
#[derive(Clone, Debug, PartialEq)]
pub struct DataTerm {
    shape: GridShape,
    num_labels: usize,
    costs: Vec<f64>,
}

impl DataTerm {
    pub fn new(shape: GridShape, num_labels: usize, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != shape.len() * num_labels {
            return Err(Error::shape("cost array does not match grid x labels"));
        }
        if let Some(index) = costs.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(if costs[index].is_finite() {
                Error::invalid(format!("negative cost at {index}"))
            } else {
                Error::NonFinite { index }
            });
        }
        Ok(Self {
            shape,
            num_labels,
            costs,
        })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!(
            "epsilon clamp must be in (0, 1), got {eps}"
        )));
    }
    Ok(())
}

/// `cost = -log(max(p, eps))`.
pub fn build_data_term(p: &PosteriorField, eps: f64) -> Result<DataTerm> {
    check_epsilon(eps)?;
    let costs = p.values().iter().map(|&v| -v.max(eps).ln()).collect();
    DataTerm::new(p.shape(), p.num_labels(), costs)
}

/// `cost = -log(max((1 - w) p + w prior, eps))`.
pub fn build_weighted_data_term(
    p: &PosteriorField,
    prior: &SimplexField,
    w: f64,
    eps: f64,
) -> Result<DataTerm> {
    check_epsilon(eps)?;
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!(
            "prior weight must be in [0, 1], got {w}"
        )));
    }
    if p.shape() != prior.shape() || p.num_labels() != prior.num_labels() {
        return Err(Error::shape(
            "posterior and prior disagree in shape or label count",
        ));
    }
    let costs = p
        .values()
        .iter()
        .zip(prior.values())
        .map(|(&pv, &nv)| -((1.0 - w) * pv + w * nv).max(eps).ln())
        .collect();
    DataTerm::new(p.shape(), p.num_labels(), costs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the relative primal-dual gap falls to this value.
    pub tol: f64,
    /// Primal step; `None` means `1 / sqrt(L^2)` for the TV mode.
    pub tau: Option<f64>,
    /// Dual step; `None` means `1 / sqrt(L^2)` for the TV mode.
    pub sigma: Option<f64>,
    pub theta: f64,
    pub tv_mode: TvMode,
    pub epsilon_clamp: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: KNN_LAMBDA,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            tau: None,
            sigma: None,
            theta: 1.0,
            tv_mode: TvMode::Full3d,
            epsilon_clamp: DEFAULT_EPSILON,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn step_sizes(&self) -> (f64, f64) {
        let default = 1.0 / self.tv_mode.norm_bound_sq().sqrt();
        (self.tau.unwrap_or(default), self.sigma.unwrap_or(default))
    }

    pub fn validate(&self) -> Result<()> {
        let (tau, sigma) = self.step_sizes();
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if !(tau > 0.0 && sigma > 0.0) {
            return Err(Error::invalid("step sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::invalid("theta must be in [0, 1]"));
        }
        check_epsilon(self.epsilon_clamp)?;
        let product = tau * sigma * self.tv_mode.norm_bound_sq();
        if product > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "tau * sigma * L^2 = {product} exceeds 1"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub iteration: usize,
    /// Primal energy of the iterate.
    pub energy: f64,
    /// Dual objective of the current dual variable.
    pub dual: f64,
    /// `(energy - dual) / max(|energy|, |dual|)`.
    pub rel_gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

impl Diagnostics {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.history.last().map(|r| r.rel_gap)
    }

    /// CSV with header `iteration,energy,dual,gap`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,energy,dual,gap\n");
        for r in &self.history {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e}\n",
                r.iteration, r.energy, r.dual, r.rel_gap
            ));
        }
        s
    }
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn check_field(u: &LabelField, dt: &DataTerm) -> Result<()> {
    if u.shape() != dt.shape || u.num_labels() != dt.num_labels {
        return Err(Error::shape(
            "labeling and data term disagree in shape or label count",
        ));
    }
    Ok(())
}

/// Primal energy: linear data term plus `lambda` times anisotropic TV.
pub fn energy(u: &LabelField, dt: &DataTerm, lambda: f64, mode: TvMode) -> Result<f64> {
    check_field(u, dt)?;
    let mut data = CompensatedSum::default();
    for (a, b) in u.values().iter().zip(&dt.costs) {
        data.add(a * b);
    }
    Ok(data.value() + lambda * total_variation(u.values(), dt.shape, dt.num_labels, mode))
}

fn dual_objective(costs: &[f64], div: &[f64], num_labels: usize) -> f64 {
    let mut acc = CompensatedSum::default();
    for (c, d) in costs
        .chunks_exact(num_labels)
        .zip(div.chunks_exact(num_labels))
    {
        let mut m = f64::INFINITY;
        for (a, b) in c.iter().zip(d) {
            m = m.min(a - b);
        }
        acc.add(m);
    }
    acc.value()
}

fn relative_gap(energy: f64, dual: f64) -> f64 {
    let gap = energy - dual;
    let scale = energy.abs().max(dual.abs());
    if scale == 0.0 {
        gap.max(0.0)
    } else {
        gap / scale
    }
}

pub fn solve(
    dt: &DataTerm,
    cfg: &SolverConfig,
    init: Option<&SimplexField>,
) -> Result<(SimplexField, Diagnostics)> {
    solve_observed(dt, cfg, init, |_, _| {})
}

/// Runs the primal-dual iteration. `observe` sees every primal iterate
/// after its simplex projection.
pub fn solve_observed<F>(
    dt: &DataTerm,
    cfg: &SolverConfig,
    init: Option<&SimplexField>,
    mut observe: F,
) -> Result<(SimplexField, Diagnostics)>
where
    F: FnMut(usize, &[f64]),
{
    cfg.validate()?;
    let shape = dt.shape;
    let l = dt.num_labels;
    let mode = cfg.tv_mode;
    let (tau, sigma) = cfg.step_sizes();
    let lambda = cfg.lambda;
    let theta = cfg.theta;
    let len = shape.len() * l;

    let mut u = match init {
        Some(f) => {
            check_field(f, dt)?;
            let mut v = f.values().to_vec();
            let mut scratch = vec![0.0; l];
            for row in v.chunks_exact_mut(l) {
                project_simplex_in_place(row, &mut scratch);
            }
            v
        }
        None => vec![1.0 / l as f64; len],
    };
    let mut u_bar = u.clone();
    let mut u_prev = vec![0.0; len];
    let mut p = vec![0.0; len * mode.axes()];
    let mut div = vec![0.0; len];
    let mut scratch = vec![0.0; l];
    let layouts = ops::axis_layouts(shape, l, mode);
    let mut diag = Diagnostics::default();

    for iteration in 1..=cfg.max_iters {
        // Dual ascent on grad(u_bar), then the box projection.
        for (a, lay) in layouts.iter().enumerate() {
            let pa = &mut p[a * len..(a + 1) * len];
            for (src, dst) in u_bar
                .chunks_exact(lay.block)
                .zip(pa.chunks_exact_mut(lay.block))
            {
                let inner = lay.block - lay.step;
                for j in 0..inner {
                    dst[j] = (dst[j] + sigma * (src[j + lay.step] - src[j])).clamp(-lambda, lambda);
                }
            }
        }
        ops::divergence_into(&p, shape, l, mode, &mut div);

        // Primal descent and simplex projection.
        u_prev.copy_from_slice(&u);
        for ((row, c), d) in u
            .chunks_exact_mut(l)
            .zip(dt.costs.chunks_exact(l))
            .zip(div.chunks_exact(l))
        {
            for ((x, &cv), &dv) in row.iter_mut().zip(c).zip(d) {
                *x -= tau * (cv - dv);
            }
            project_simplex_in_place(row, &mut scratch);
        }
        for ((b, &x), &x0) in u_bar.iter_mut().zip(&u).zip(&u_prev) {
            *b = x + theta * (x - x0);
        }
        observe(iteration, &u);

        let mut data = CompensatedSum::default();
        for (a, b) in u.iter().zip(&dt.costs) {
            data.add(a * b);
        }
        let e = data.value() + lambda * total_variation(&u, shape, l, mode);
        let d = dual_objective(&dt.costs, &div, l);
        if !e.is_finite() || !d.is_finite() {
            return Err(Error::Diverged { iteration });
        }
        let rel_gap = relative_gap(e, d);
        diag.history.push(IterationRecord {
            iteration,
            energy: e,
            dual: d,
            rel_gap,
        });
        if rel_gap <= cfg.tol {
            diag.converged = true;
            break;
        }
    }
    Ok((LabelField::from_raw(shape, l, u)?, diag))
}
