//! Adam and L-BFGS (two-loop recursion, strong-Wolfe line search) over the
//! flat parameter vector of a [`Network`].

use serde::{Deserialize, Serialize};

use crate::loss::LossBreakdown;
use crate::nn::Network;
use crate::{Error, Result};

/// Window over which the loss must improve by at least `tol`.
pub const STALL_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 20,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Lbfgs(LbfgsConfig),
}

/// Supplies the loss and its parameter gradient.
pub trait LossProvider {
    fn evaluate(&mut self, params: &[f64], iteration: usize) -> Result<(LossBreakdown, Vec<f64>)>;
}

impl<F> LossProvider for F
where
    F: FnMut(&[f64], usize) -> Result<(LossBreakdown, Vec<f64>)>,
{
    fn evaluate(&mut self, params: &[f64], iteration: usize) -> Result<(LossBreakdown, Vec<f64>)> {
        self(params, iteration)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsState {
    pub config: LbfgsConfig,
    pub step: u64,
    /// `(s, y, 1 / yᵀs)` pairs, oldest first; never longer than `memory`.
    pub history: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl LbfgsState {
    pub fn new(config: LbfgsConfig) -> Self {
        LbfgsState {
            config,
            step: 0,
            history: Vec::new(),
        }
    }

    /// `-H g` by the two-loop recursion.
    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y, rho) in self.history.iter().rev() {
            let a = rho * dot(s, &q);
            axpy(&mut q, -a, y);
            alphas.push(a);
        }
        let gamma = match self.history.last() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / norm(grad).max(1e-300).max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in self.history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            axpy(&mut q, a - b, s);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-12 * norm(&s) * norm(&y) {
            return;
        }
        if self.history.len() == self.config.memory {
            self.history.remove(0);
        }
        self.history.push((s, y, 1.0 / sy));
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

fn check_finite(iteration: usize, loss: &LossBreakdown, grad: &[f64]) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            iteration,
            pde: loss.pde,
            data: loss.data,
            bc: loss.bc,
        });
    }
    Ok(())
}

/// True when the best loss has not improved by `tol` over the last
/// [`STALL_WINDOW`] records.
fn stalled(best: &[f64], tol: f64) -> bool {
    tol > 0.0 && best.len() > STALL_WINDOW && {
        let now = best[best.len() - 1];
        let then = best[best.len() - 1 - STALL_WINDOW];
        then - now < tol
    }
}

/// Train `net` in place for at most `budget` iterations. History rows are
/// numbered from `first_iteration`.
pub fn optimize(
    net: &mut Network,
    provider: &mut dyn LossProvider,
    config: &OptimizerConfig,
    budget: usize,
    tol: f64,
    first_iteration: usize,
) -> Result<Vec<HistoryRow>> {
    match config {
        OptimizerConfig::Adam(c) => run_adam(net, provider, *c, budget, tol, first_iteration),
        OptimizerConfig::Lbfgs(c) => run_lbfgs(net, provider, *c, budget, tol, first_iteration),
    }
}

fn run_adam(
    net: &mut Network,
    provider: &mut dyn LossProvider,
    config: AdamConfig,
    budget: usize,
    tol: f64,
    first: usize,
) -> Result<Vec<HistoryRow>> {
    let mut state = AdamState::new(config, net.n_params());
    let mut params = net.parameters().to_vec();
    let mut history = Vec::with_capacity(budget);
    let mut best = Vec::with_capacity(budget);
    for k in 0..budget {
        let iteration = first + k;
        let (loss, grad) = provider.evaluate(&params, iteration)?;
        check_finite(iteration, &loss, &grad)?;
        history.push(HistoryRow { iteration, loss });
        let b = best.last().map_or(loss.total, |&b: &f64| b.min(loss.total));
        best.push(b);
        state.update(&mut params, &grad);
        if stalled(&best, tol) {
            break;
        }
    }
    net.set_parameters(&params);
    Ok(history)
}

fn run_lbfgs(
    net: &mut Network,
    provider: &mut dyn LossProvider,
    config: LbfgsConfig,
    budget: usize,
    tol: f64,
    first: usize,
) -> Result<Vec<HistoryRow>> {
    let mut state = LbfgsState::new(config);
    let mut x = net.parameters().to_vec();
    let (mut f, mut g) = provider.evaluate(&x, first)?;
    check_finite(first, &f, &g)?;
    let mut history = vec![HistoryRow {
        iteration: first,
        loss: f,
    }];
    let mut best = vec![f.total];
    for k in 1..budget {
        let iteration = first + k;
        let mut d = state.direction(&g);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            state.history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                break;
            }
        }
        let alpha0 = if state.history.is_empty() {
            (1.0 / norm(&g)).min(1.0)
        } else {
            1.0
        };
        let Some((alpha, f_new, g_new)) =
            wolfe_search(provider, &x, f, &d, slope, alpha0, iteration, &config)?
        else {
            break;
        };
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        axpy(&mut x, 1.0, &s);
        state.push(s, y);
        state.step += 1;
        f = f_new;
        g = g_new;
        history.push(HistoryRow { iteration, loss: f });
        best.push(f.total);
        if stalled(&best, tol) {
            break;
        }
    }
    net.set_parameters(&x);
    Ok(history)
}

type Probe = (LossBreakdown, Vec<f64>);

/// Strong-Wolfe line search (bracketing then zoom with safeguarded cubic
/// interpolation). Returns `None` when no acceptable step is found.
#[allow(clippy::too_many_arguments)]
fn wolfe_search(
    provider: &mut dyn LossProvider,
    x: &[f64],
    f0: LossBreakdown,
    d: &[f64],
    slope0: f64,
    alpha0: f64,
    iteration: usize,
    c: &LbfgsConfig,
) -> Result<Option<(f64, LossBreakdown, Vec<f64>)>> {
    let mut probe = |alpha: f64| -> Result<(f64, f64, Probe)> {
        let xt: Vec<f64> = x.iter().zip(d).map(|(x, d)| x + alpha * d).collect();
        let (l, g) = provider.evaluate(&xt, iteration)?;
        let phi = if l.is_finite() { l.total } else { f64::INFINITY };
        let dphi = if g.iter().all(|v| v.is_finite()) {
            dot(&g, d)
        } else {
            f64::NAN
        };
        Ok((phi, dphi, (l, g)))
    };
    let phi0 = f0.total;
    let mut a_prev = 0.0;
    let mut phi_prev = phi0;
    let mut dphi_prev = slope0;
    let mut alpha = alpha0;
    let mut evals = 0;
    while evals < c.max_line_search {
        let (phi, dphi, p) = probe(alpha)?;
        evals += 1;
        if !phi.is_finite() {
            alpha = 0.5 * (a_prev + alpha);
            continue;
        }
        if phi > phi0 + c.c1 * alpha * slope0 || (evals > 1 && phi >= phi_prev) {
            return zoom(
                &mut probe,
                (a_prev, phi_prev, dphi_prev),
                (alpha, phi, dphi),
                phi0,
                slope0,
                c,
                c.max_line_search - evals,
            );
        }
        if dphi.abs() <= -c.c2 * slope0 {
            return Ok(Some((alpha, p.0, p.1)));
        }
        if dphi >= 0.0 {
            return zoom(
                &mut probe,
                (alpha, phi, dphi),
                (a_prev, phi_prev, dphi_prev),
                phi0,
                slope0,
                c,
                c.max_line_search - evals,
            );
        }
        a_prev = alpha;
        phi_prev = phi;
        dphi_prev = dphi;
        alpha *= 2.0;
    }
    Ok(None)
}

fn cubic_min(a: (f64, f64, f64), b: (f64, f64, f64)) -> Option<f64> {
    let (x1, f1, g1) = a;
    let (x2, f2, g2) = b;
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let disc = d1 * d1 - g1 * g2;
    if disc < 0.0 {
        return None;
    }
    let d2 = (x2 - x1).signum() * disc.sqrt();
    let x = x2 - (x2 - x1) * (g2 + d2 - d1) / (g2 - g1 + 2.0 * d2);
    x.is_finite().then_some(x)
}

fn zoom(
    probe: &mut dyn FnMut(f64) -> Result<(f64, f64, Probe)>,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    phi0: f64,
    slope0: f64,
    c: &LbfgsConfig,
    budget: usize,
) -> Result<Option<(f64, LossBreakdown, Vec<f64>)>> {
    let mut best: Option<(f64, f64, Probe)> = None;
    for _ in 0..budget.max(1) {
        let (a, b) = (lo.0.min(hi.0), lo.0.max(hi.0));
        let width = b - a;
        let mut t = cubic_min(lo, hi).unwrap_or(0.5 * (a + b));
        if !(t > a + 0.1 * width && t < b - 0.1 * width) {
            t = 0.5 * (a + b);
        }
        let (phi, dphi, p) = probe(t)?;
        if phi.is_finite() && phi <= phi0 + c.c1 * t * slope0 && best.as_ref().is_none_or(|b| phi < b.1) {
            best = Some((t, phi, (p.0, p.1.clone())));
        }
        if !phi.is_finite() || phi > phi0 + c.c1 * t * slope0 || phi >= lo.1 {
            hi = (t, phi, dphi);
        } else {
            if dphi.abs() <= -c.c2 * slope0 {
                return Ok(Some((t, p.0, p.1)));
            }
            if dphi * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (t, phi, dphi);
        }
        if width < 1e-14 * b.max(1e-300) {
            break;
        }
    }
    // Fall back to the best sufficient-decrease point seen.
    Ok(best.map(|(t, _, p)| (t, p.0, p.1)))
}
