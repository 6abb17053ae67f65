//! Dual solvers for `min_f lambda |f|^2 + (1/n) sum L(y_i, f(x_i))` over the
//! kernel's RKHS, without an offset term.
//!
//! With `C = 1 / (2 lambda n)` every supported loss has a dual of the form
//!
//! ```text
//! max_beta  sum beta_i y_i - 1/2 beta' K beta - sum q_i(beta_i),   lo_i <= beta_i <= hi_i
//! ```
//!
//! where `f = sum beta_i k(x_i, .)`. Hinge and pinball have `q = 0` and a
//! finite box and are solved by greedy two-coordinate steps with an exact
//! two-dimensional box QP. Least squares (`q` quadratic, no box) is solved by
//! conjugate gradients; expectile (`q` piecewise quadratic) by a semismooth
//! Newton iteration with conjugate-gradient inner solves.
//!
//! All objective values are reported on the scale of the primal problem above.
//! The duality gap is accumulated as a sum of per-sample Fenchel-Young terms,
//! each of which is non-negative, so it does not suffer from cancellation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hinge,
    LeastSquares,
    Pinball,
    Expectile,
}

/// A loss together with its weight parameter: the positive-class weight for
/// hinge, the level `tau` for pinball and expectile, unused for least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub weight: f64,
}

impl LossSpec {
    pub fn hinge(weight: f64) -> Self {
        Self {
            kind: LossKind::Hinge,
            weight,
        }
    }

    pub fn least_squares() -> Self {
        Self {
            kind: LossKind::LeastSquares,
            weight: 1.0,
        }
    }

    pub fn pinball(tau: f64) -> Self {
        Self {
            kind: LossKind::Pinball,
            weight: tau,
        }
    }

    pub fn expectile(tau: f64) -> Self {
        Self {
            kind: LossKind::Expectile,
            weight: tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            LossKind::Hinge if !(self.weight > 0.0 && self.weight.is_finite()) => Err(
                Error::Argument(format!("hinge weight must be positive, got {}", self.weight)),
            ),
            LossKind::Pinball | LossKind::Expectile if !(self.weight > 0.0 && self.weight < 1.0) => {
                Err(Error::Argument(format!(
                    "quantile/expectile level must lie in (0, 1), got {}",
                    self.weight
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn is_boxed(&self) -> bool {
        matches!(self.kind, LossKind::Hinge | LossKind::Pinball)
    }

    /// Loss value without argument checks; hinge treats `y > 0` as the positive class.
    #[inline]
    pub(crate) fn eval(&self, y: f64, t: f64) -> f64 {
        match self.kind {
            LossKind::Hinge => {
                if y > 0.0 {
                    self.weight * (1.0 - t).max(0.0)
                } else {
                    (1.0 + t).max(0.0)
                }
            }
            LossKind::LeastSquares => (y - t) * (y - t),
            LossKind::Pinball => {
                if y >= t {
                    self.weight * (y - t)
                } else {
                    (1.0 - self.weight) * (t - y)
                }
            }
            LossKind::Expectile => {
                let r = y - t;
                if r >= 0.0 {
                    self.weight * r * r
                } else {
                    (1.0 - self.weight) * r * r
                }
            }
        }
    }
}

pub fn loss_value(loss: &LossSpec, y: f64, t: f64) -> Result<f64> {
    loss.validate()?;
    if !y.is_finite() || !t.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss argument y={y} t={t}")));
    }
    if loss.kind == LossKind::Hinge && y != 1.0 && y != -1.0 {
        return Err(Error::Argument(format!(
            "hinge loss needs labels in {{-1, +1}}, got {y}"
        )));
    }
    Ok(loss.eval(y, t))
}

/// Which primal value certifies convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Hinge predictions are clipped to `[-1, 1]` in the primal loss term.
    #[default]
    Clipped,
    /// Always use the unclipped primal objective.
    Exact,
}

pub const CV_TOLERANCE: f64 = 1e-3;
pub const FINAL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SolverProblem<'a> {
    pub kernel: &'a KernelMatrix,
    pub labels: &'a [f64],
    pub lambda: f64,
    pub loss: LossSpec,
    pub tolerance: f64,
    /// `None` uses the default budget (see [`default_max_iterations`]).
    pub max_iterations: Option<u64>,
    pub init: Option<Vec<f64>>,
    pub stop_rule: StopRule,
}

impl<'a> SolverProblem<'a> {
    pub fn new(kernel: &'a KernelMatrix, labels: &'a [f64], lambda: f64, loss: LossSpec) -> Self {
        Self {
            kernel,
            labels,
            lambda,
            loss,
            tolerance: CV_TOLERANCE,
            max_iterations: None,
            init: None,
            stop_rule: StopRule::Clipped,
        }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// `C = 1 / (2 lambda n)`.
    pub fn cost(&self) -> f64 {
        1.0 / (2.0 * self.lambda * self.n() as f64)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Argument(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Argument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        self.loss.validate()?;
        if !self.kernel.is_square() || self.kernel.rows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.kernel.rows(),
            });
        }
        if self.loss.kind == LossKind::Hinge {
            if let Some(y) = self.labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
                return Err(Error::Argument(format!(
                    "hinge loss needs labels in {{-1, +1}}, got {y}"
                )));
            }
        }
        if let Some(init) = &self.init {
            if init.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: init.len(),
                });
            }
            if init.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite warm start".into()));
            }
        }
        Ok(())
    }
}

/// Iteration budget: `10^5 n` two-coordinate steps for hinge/pinball,
/// `10^5` conjugate-gradient steps (each costing `n` coordinate updates) otherwise.
pub fn default_max_iterations(loss: &LossSpec, n: usize) -> u64 {
    if loss.is_boxed() {
        100_000 * n as u64
    } else {
        100_000
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    /// Best certified primal value so far (clipped for hinge under [`StopRule::Clipped`]).
    pub primal: f64,
    pub dual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    /// Expansion coefficients: `f(x) = sum beta_i k(x_i, x)`.
    pub beta: Vec<f64>,
    pub primal_objective: f64,
    pub clipped_primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: u64,
    pub converged: bool,
    #[serde(skip)]
    pub trace: Vec<Checkpoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub primal: f64,
    pub clipped_primal: f64,
    pub dual: f64,
    /// `primal - dual`, summed from non-negative per-sample terms rather than
    /// subtracted, so it stays accurate far below the objective's rounding.
    pub gap_sum: f64,
    pub clipped_gap_sum: f64,
}

impl GapReport {
    pub fn gap(&self) -> f64 {
        self.gap_sum
    }

    pub fn clipped_gap(&self) -> f64 {
        self.clipped_gap_sum
    }
}

/// Dual box and quadratic penalty `q(b) = a_pos b^2 (b >= 0), a_neg b^2 (b < 0)`.
struct DualForm {
    cost: f64,
    lambda: f64,
    a_pos: f64,
    a_neg: f64,
}

impl DualForm {
    fn new(problem: &SolverProblem<'_>) -> Self {
        let cost = problem.cost();
        let (a_pos, a_neg) = match problem.loss.kind {
            LossKind::Hinge | LossKind::Pinball => (0.0, 0.0),
            LossKind::LeastSquares => (0.25 / cost, 0.25 / cost),
            LossKind::Expectile => {
                let tau = problem.loss.weight;
                (0.25 / (cost * tau), 0.25 / (cost * (1.0 - tau)))
            }
        };
        Self {
            cost,
            lambda: problem.lambda,
            a_pos,
            a_neg,
        }
    }

    fn bounds(&self, loss: &LossSpec, y: f64) -> (f64, f64) {
        match loss.kind {
            LossKind::Hinge => {
                if y > 0.0 {
                    (0.0, self.cost * loss.weight)
                } else {
                    (-self.cost, 0.0)
                }
            }
            LossKind::Pinball => (-self.cost * (1.0 - loss.weight), self.cost * loss.weight),
            LossKind::LeastSquares | LossKind::Expectile => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    #[inline]
    fn q(&self, b: f64) -> f64 {
        if b >= 0.0 {
            self.a_pos * b * b
        } else {
            self.a_neg * b * b
        }
    }
}

/// Per-sample Fenchel-Young term `C L(y, f) - beta (y - f) + q(beta)` written
/// so that every summand is non-negative.
#[inline]
fn gap_term(loss: &LossSpec, form: &DualForm, y: f64, f: f64, beta: f64, clipped: bool) -> f64 {
    let c = form.cost;
    match loss.kind {
        LossKind::Hinge => {
            let alpha = y * beta;
            let margin = 1.0 - y * f;
            if clipped {
                let t = f.clamp(-1.0, 1.0);
                c * loss.eval(y, t) - alpha * margin
            } else {
                let cap = if y > 0.0 { c * loss.weight } else { c };
                if margin > 0.0 {
                    (cap - alpha) * margin
                } else {
                    -alpha * margin
                }
            }
        }
        LossKind::Pinball => {
            let r = y - f;
            let tau = loss.weight;
            if r >= 0.0 {
                (c * tau - beta) * r
            } else {
                (c * (1.0 - tau) + beta) * (-r)
            }
        }
        LossKind::LeastSquares => {
            let s = (y - f) - beta / (2.0 * c);
            c * s * s
        }
        LossKind::Expectile => {
            let r = y - f;
            let tau = loss.weight;
            match (beta >= 0.0, r >= 0.0) {
                (true, true) => {
                    let s = r - beta / (2.0 * c * tau);
                    c * tau * s * s
                }
                (false, false) => {
                    let s = r - beta / (2.0 * c * (1.0 - tau));
                    c * (1.0 - tau) * s * s
                }
                _ => c * loss.eval(y, f) - beta * r + form.q(beta),
            }
        }
    }
}

fn gap_report(problem: &SolverProblem<'_>, form: &DualForm, beta: &[f64], f: &[f64]) -> GapReport {
    let n = problem.n();
    let loss = &problem.loss;
    let mut norm = 0.0;
    let mut risk = 0.0;
    let mut gap = 0.0;
    let mut gap_clipped = 0.0;
    let hinge = loss.kind == LossKind::Hinge;
    for i in 0..n {
        let y = problem.labels[i];
        norm += beta[i] * f[i];
        let l = loss.eval(y, f[i]);
        risk += l;
        let t = gap_term(loss, form, y, f[i], beta[i], false);
        gap += t;
        if hinge {
            gap_clipped += gap_term(loss, form, y, f[i], beta[i], true);
        }
    }
    let scale = 2.0 * form.lambda;
    let primal = form.lambda * norm + risk / n as f64;
    let dual = primal - scale * gap;
    let clipped_primal = if hinge {
        dual + scale * gap_clipped
    } else {
        primal
    };
    GapReport {
        primal,
        clipped_primal,
        dual,
        gap_sum: scale * gap,
        clipped_gap_sum: if hinge { scale * gap_clipped } else { scale * gap },
    }
}

fn project_into_box(problem: &SolverProblem<'_>, form: &DualForm, beta: &mut [f64]) {
    if !problem.loss.is_boxed() {
        return;
    }
    for (b, &y) in beta.iter_mut().zip(problem.labels) {
        let (lo, hi) = form.bounds(&problem.loss, y);
        *b = b.clamp(lo, hi);
    }
}

/// Primal and dual objective values at `beta` (hinge coefficients outside the
/// dual box are projected first).
pub fn duality_gap(problem: &SolverProblem<'_>, beta: &[f64]) -> Result<GapReport> {
    problem.validate()?;
    if beta.len() != problem.n() {
        return Err(Error::DimensionMismatch {
            expected: problem.n(),
            found: beta.len(),
        });
    }
    let form = DualForm::new(problem);
    let mut b = beta.to_vec();
    project_into_box(problem, &form, &mut b);
    let mut f = vec![0.0; b.len()];
    problem.kernel.mul_vec(&b, &mut f);
    Ok(gap_report(problem, &form, &b, &f))
}

/// Maps coefficients from a solve at `prev_lambda` to a feasible start at `new_lambda`.
pub fn warm_start_transform(prev_beta: &[f64], prev_lambda: f64, new_lambda: f64, loss: &LossSpec) -> Vec<f64> {
    if loss.is_boxed() {
        // The dual box scales with C = 1/(2 lambda n).
        let factor = (prev_lambda / new_lambda).min(1.0);
        prev_beta.iter().map(|b| b * factor).collect()
    } else {
        prev_beta.to_vec()
    }
}

const TRACE_STRIDE: u64 = 100;

/// Keeps the iterate with the best certified primal and the best dual bound.
struct Tracker {
    threshold: f64,
    clipped: bool,
    best_primal: f64,
    best_dual: f64,
    best_beta: Vec<f64>,
    best_report: Option<GapReport>,
    /// Iterate with the smallest gap of its own. The primal can be nearly flat
    /// where the dual is not, so this one is preferred whenever it certifies.
    own_gap: f64,
    own_beta: Vec<f64>,
    own_report: Option<GapReport>,
    use_own: bool,
    trace: Vec<Checkpoint>,
    next_trace: u64,
}

impl Tracker {
    fn new(problem: &SolverProblem<'_>) -> Self {
        let n = problem.n();
        let scale = match problem.loss.kind {
            LossKind::Hinge => 1.0,
            _ => problem.labels.iter().map(|&y| problem.loss.eval(y, 0.0)).sum::<f64>() / n as f64,
        };
        Self {
            threshold: problem.tolerance * scale,
            clipped: problem.loss.kind == LossKind::Hinge && problem.stop_rule == StopRule::Clipped,
            best_primal: f64::INFINITY,
            best_dual: f64::NEG_INFINITY,
            best_beta: vec![0.0; n],
            best_report: None,
            own_gap: f64::INFINITY,
            own_beta: vec![0.0; n],
            own_report: None,
            use_own: false,
            trace: Vec::new(),
            next_trace: 0,
        }
    }

    fn certified_primal(&self, r: &GapReport) -> f64 {
        if self.clipped {
            r.clipped_primal
        } else {
            r.primal
        }
    }

    /// Records the state and returns whether the gap criterion holds.
    fn observe(&mut self, iteration: u64, report: GapReport, beta: &[f64]) -> bool {
        let p = self.certified_primal(&report);
        if p < self.best_primal || self.best_report.is_none() {
            self.best_primal = p;
            self.best_beta.copy_from_slice(beta);
            self.best_report = Some(report);
        }
        if report.dual > self.best_dual {
            self.best_dual = report.dual;
        }
        let own = if self.clipped { report.clipped_gap() } else { report.gap() };
        if own < self.own_gap || self.own_report.is_none() {
            self.own_gap = own;
            self.own_beta.copy_from_slice(beta);
            self.own_report = Some(report);
        }
        if iteration >= self.next_trace {
            self.push_trace(iteration);
            self.next_trace = (iteration / TRACE_STRIDE + 1) * TRACE_STRIDE;
        }
        if self.own_gap <= self.threshold {
            self.use_own = true;
            return true;
        }
        self.use_own = false;
        // Values from different iterates only compare above their rounding level.
        let noise = 64.0 * f64::EPSILON * (self.best_primal.abs() + self.best_dual.abs());
        self.threshold > noise && self.best_primal - self.best_dual <= self.threshold
    }

    /// Forgets all incumbents, e.g. before re-certifying with exact predictions.
    fn reset(&mut self) {
        self.best_primal = f64::INFINITY;
        self.best_dual = f64::NEG_INFINITY;
        self.best_report = None;
        self.own_gap = f64::INFINITY;
        self.own_report = None;
        self.use_own = false;
    }

    /// Coefficients [`finish`](Self::finish) would return.
    fn chosen(&self, converged: bool) -> &[f64] {
        if self.use_own || !converged {
            &self.own_beta
        } else {
            &self.best_beta
        }
    }

    fn push_trace(&mut self, iteration: u64) {
        self.trace.push(Checkpoint {
            iteration,
            primal: self.best_primal,
            dual: self.best_dual,
        });
    }

    fn gap(&self) -> f64 {
        self.best_primal - self.best_dual
    }

    fn finish(mut self, iterations: u64, converged: bool) -> Result<SolverResult> {
        if self.trace.last().map(|c| c.iteration) != Some(iterations) {
            self.push_trace(iterations);
        }
        let (beta, report) = if self.use_own || !converged {
            (self.own_beta, self.own_report)
        } else {
            (self.best_beta, self.best_report)
        };
        let report = report.ok_or_else(|| Error::Numeric("solver produced no iterate".into()))?;
        if beta.iter().any(|b| !b.is_finite()) || !report.primal.is_finite() {
            return Err(Error::Numeric("non-finite coefficients".into()));
        }
        Ok(SolverResult {
            beta,
            primal_objective: report.primal,
            clipped_primal_objective: report.clipped_primal,
            dual_objective: self.best_dual.min(report.primal),
            iterations,
            converged,
            trace: self.trace,
        })
    }
}

/// Solves the regularized risk problem; hitting the iteration budget yields `converged = false`.
pub fn solve(problem: &SolverProblem<'_>) -> Result<SolverResult> {
    problem.validate()?;
    let form = DualForm::new(problem);
    let n = problem.n();
    let mut beta = problem.init.clone().unwrap_or_else(|| vec![0.0; n]);
    project_into_box(problem, &form, &mut beta);
    let max_iter = problem
        .max_iterations
        .unwrap_or_else(|| default_max_iterations(&problem.loss, n));
    match problem.loss.kind {
        LossKind::Hinge | LossKind::Pinball => solve_boxed(problem, &form, beta, max_iter),
        LossKind::LeastSquares => solve_least_squares(problem, &form, beta, max_iter),
        LossKind::Expectile => solve_expectile(problem, &form, beta, max_iter),
    }
}

fn exact_f(k: &KernelMatrix, beta: &[f64]) -> Vec<f64> {
    let mut f = vec![0.0; beta.len()];
    k.mul_vec(beta, &mut f);
    f
}

/// Maximizes `g.d - 1/2 d'Hd` over a box, `H = [[a, b], [b, c]]` positive semi-definite.
fn solve_2d(g: (f64, f64), a: f64, b: f64, c: f64, bi: (f64, f64), bj: (f64, f64)) -> (f64, f64) {
    let obj = |di: f64, dj: f64| g.0 * di + g.1 * dj - 0.5 * (a * di * di + 2.0 * b * di * dj + c * dj * dj);
    let det = a * c - b * b;
    if det <= 1e-8 * a * c && a > 0.0 && c > 0.0 {
        return solve_2d_degenerate(g, a, b, c, bi, bj);
    }
    if det > 0.0 {
        let di = (c * g.0 - b * g.1) / det;
        let dj = (a * g.1 - b * g.0) / det;
        if di >= bi.0 && di <= bi.1 && dj >= bj.0 && dj <= bj.1 {
            return (di, dj);
        }
    }
    // Otherwise a maximizer lies on an edge of the box.
    let mut best = (0.0, 0.0);
    let mut best_val = 0.0;
    for di in [bi.0, bi.1] {
        let dj = if c > 0.0 { ((g.1 - b * di) / c).clamp(bj.0, bj.1) } else { 0.0 };
        let v = obj(di, dj);
        if v > best_val {
            best_val = v;
            best = (di, dj);
        }
    }
    for dj in [bj.0, bj.1] {
        let di = if a > 0.0 { ((g.0 - b * dj) / a).clamp(bi.0, bi.1) } else { 0.0 };
        let v = obj(di, dj);
        if v > best_val {
            best_val = v;
            best = (di, dj);
        }
    }
    best
}

/// Rank-one block: exact coordinate steps, then a move along the flat direction.
fn solve_2d_degenerate(g: (f64, f64), a: f64, b: f64, c: f64, bi: (f64, f64), bj: (f64, f64)) -> (f64, f64) {
    let d1 = (g.0 / a).clamp(bi.0, bi.1);
    let d2 = ((g.1 - b * d1) / c).clamp(bj.0, bj.1);
    let r0 = g.0 - a * d1 - b * d2;
    let r1 = g.1 - b * d1 - c * d2;
    let u = (c.sqrt(), -b.signum() * a.sqrt());
    let slope = r0 * u.0 + r1 * u.1;
    let reach = |d: f64, u: f64, lo: f64, hi: f64, dir: f64| {
        let v = u * dir;
        if v > 0.0 {
            (hi - d) / v
        } else if v < 0.0 {
            (lo - d) / v
        } else {
            f64::INFINITY
        }
    };
    if slope == 0.0 {
        return (d1, d2);
    }
    let dir = slope.signum();
    let t = reach(d1, u.0, bi.0, bi.1, dir).min(reach(d2, u.1, bj.0, bj.1, dir)).max(0.0);
    if !t.is_finite() {
        return (d1, d2);
    }
    (
        (d1 + dir * t * u.0).clamp(bi.0, bi.1),
        (d2 + dir * t * u.1).clamp(bj.0, bj.1),
    )
}

const PARTNER_CANDIDATES: usize = 4;

/// The few largest violations seen, in decreasing order (lowest index first on ties).
struct TopK {
    idx: [usize; PARTNER_CANDIDATES],
    val: [f64; PARTNER_CANDIDATES],
    len: usize,
}

impl TopK {
    fn new() -> Self {
        Self {
            idx: [0; PARTNER_CANDIDATES],
            val: [0.0; PARTNER_CANDIDATES],
            len: 0,
        }
    }

    #[inline]
    fn offer(&mut self, i: usize, v: f64) {
        if self.len == PARTNER_CANDIDATES && v <= self.val[self.len - 1] {
            return;
        }
        let mut pos = self.len.min(PARTNER_CANDIDATES - 1);
        if self.len < PARTNER_CANDIDATES {
            self.len += 1;
        }
        while pos > 0 && self.val[pos - 1] < v {
            self.idx[pos] = self.idx[pos - 1];
            self.val[pos] = self.val[pos - 1];
            pos -= 1;
        }
        self.idx[pos] = i;
        self.val[pos] = v;
    }

    fn best(&self) -> Option<(usize, f64)> {
        (self.len > 0).then(|| (self.idx[0], self.val[0]))
    }

    fn items(&self) -> &[usize] {
        &self.idx[..self.len]
    }
}

/// Clamps into the box and snaps values within rounding distance onto a bound.
#[inline]
fn snap(v: f64, (lo, hi): (f64, f64)) -> f64 {
    let e = 1e-12 * (hi - lo);
    if v >= hi - e {
        hi
    } else if v <= lo + e {
        lo
    } else {
        v
    }
}

/// Greedy maximal-violator pairs with exact two-dimensional steps.
fn solve_boxed(problem: &SolverProblem<'_>, form: &DualForm, mut beta: Vec<f64>, max_iter: u64) -> Result<SolverResult> {
    let n = problem.n();
    let k = problem.kernel;
    let y = problem.labels;
    let bounds: Vec<(f64, f64)> = y.iter().map(|&yi| form.bounds(&problem.loss, yi)).collect();
    for (b, bd) in beta.iter_mut().zip(&bounds) {
        *b = snap(*b, *bd);
    }
    let mut f = exact_f(k, &beta);
    let mut tracker = Tracker::new(problem);
    let check_every = 10u64;
    let mut iter = 0u64;
    let mut converged = false;
    loop {
        if iter % check_every == 0 {
            let report = gap_report(problem, form, &beta, &f);
            if tracker.observe(iter, report, &beta) {
                // Confirm against freshly computed predictions.
                f = exact_f(k, &beta);
                let report = gap_report(problem, form, &beta, &f);
                tracker.reset();
                if tracker.observe(iter, report, &beta) {
                    converged = true;
                    break;
                }
            }
        }
        if iter >= max_iter {
            break;
        }
        // Largest violator plus the best partner among the top violators of each sign.
        let mut top_pos = TopK::new();
        let mut top_neg = TopK::new();
        for i in 0..n {
            let g = y[i] - f[i];
            if g > 0.0 && beta[i] < bounds[i].1 {
                top_pos.offer(i, g);
            } else if g < 0.0 && beta[i] > bounds[i].0 {
                top_neg.offer(i, -g);
            }
        }
        let i1 = match (top_pos.best(), top_neg.best()) {
            (Some((ip, vp)), Some((ineg, vn))) => {
                if vp > vn || (vp == vn && ip < ineg) {
                    ip
                } else {
                    ineg
                }
            }
            (Some((ip, _)), None) => ip,
            (None, Some((ineg, _))) => ineg,
            (None, None) => usize::MAX,
        };
        if i1 == usize::MAX {
            // KKT conditions hold exactly.
            f = exact_f(k, &beta);
            let report = gap_report(problem, form, &beta, &f);
            converged = tracker.observe(iter, report, &beta) || tracker.gap() <= tracker.threshold;
            if !converged {
                // Rounding in f can hide a violator; one exact refresh is enough to continue.
                let again = (0..n).any(|i| {
                    let g = y[i] - f[i];
                    (g > 0.0 && beta[i] < bounds[i].1) || (g < 0.0 && beta[i] > bounds[i].0)
                });
                if again {
                    iter += 1;
                    continue;
                }
                converged = true;
            }
            break;
        }
        let gi = y[i1] - f[i1];
        let di_box = (bounds[i1].0 - beta[i1], bounds[i1].1 - beta[i1]);
        let a = k.get(i1, i1);
        let single = (gi / a).clamp(di_box.0, di_box.1);
        let mut best_gain = single * gi - 0.5 * a * single * single;
        let (mut d1, mut d2, mut i2) = (single, 0.0, usize::MAX);
        let row = k.row(i1);
        for &j in top_pos.items().iter().chain(top_neg.items()) {
            if j == i1 {
                continue;
            }
            let gj = y[j] - f[j];
            let dj_box = (bounds[j].0 - beta[j], bounds[j].1 - beta[j]);
            let (b, c) = (row[j], k.get(j, j));
            let (e1, e2) = solve_2d((gi, gj), a, b, c, di_box, dj_box);
            let gain = gi * e1 + gj * e2 - 0.5 * (a * e1 * e1 + 2.0 * b * e1 * e2 + c * e2 * e2);
            if gain > best_gain || (gain == best_gain && i2 != usize::MAX && j < i2) {
                best_gain = gain;
                d1 = e1;
                d2 = e2;
                i2 = j;
            }
        }
        iter += 1;
        if d1 == 0.0 && d2 == 0.0 {
            continue;
        }
        if d1 != 0.0 {
            let old = beta[i1];
            beta[i1] = snap(old + d1, bounds[i1]);
            let delta = beta[i1] - old;
            for (fj, kj) in f.iter_mut().zip(k.row(i1)) {
                *fj += delta * kj;
            }
        }
        if d2 != 0.0 {
            let old = beta[i2];
            beta[i2] = snap(old + d2, bounds[i2]);
            let delta = beta[i2] - old;
            for (fj, kj) in f.iter_mut().zip(k.row(i2)) {
                *fj += delta * kj;
            }
        }
    }
    tracker.finish(iter, converged)
}

/// Conjugate gradients for `(K + diag(shift)) x = y`, starting from `x` with `f = K x`.
///
/// `stop(iter, x, f)` is consulted after every step; iteration ends when it
/// returns true, when the budget is spent, or when the residual stagnates.
fn conjugate_gradient<S>(
    k: &KernelMatrix,
    shift: &[f64],
    y: &[f64],
    x: &mut [f64],
    f: &mut Vec<f64>,
    budget: u64,
    mut stop: S,
) -> (u64, bool)
where
    S: FnMut(u64, &[f64], &[f64]) -> bool,
{
    let n = y.len();
    let residual = |x: &[f64], f: &[f64], r: &mut [f64]| {
        for i in 0..n {
            r[i] = y[i] - f[i] - shift[i] * x[i];
        }
    };
    let mut r = vec![0.0; n];
    residual(x, f, &mut r);
    if stop(0, x, f) {
        return (0, true);
    }
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let mut kp = vec![0.0; n];
    let mut best_rr = rr;
    let mut since_best = 0u64;
    let patience = 2 * n as u64 + 50;
    // Restarts from the exact residual after breakdown or stagnation; gives up
    // after a few that bring no progress.
    let mut fruitless_restarts = 0;
    let mut iter = 0u64;
    while iter < budget {
        let mut restart = rr == 0.0;
        if !restart {
            k.mul_vec(&p, &mut kp);
            let pap: f64 = (0..n).map(|i| p[i] * (kp[i] + shift[i] * p[i])).sum();
            if pap > 0.0 {
                let step = rr / pap;
                for i in 0..n {
                    x[i] += step * p[i];
                    f[i] += step * kp[i];
                }
                iter += 1;
                if iter % 50 == 0 {
                    k.mul_vec(x, f);
                }
                residual(x, f, &mut r);
                if stop(iter, x, f) {
                    return (iter, true);
                }
                let rr_new: f64 = r.iter().map(|v| v * v).sum();
                if rr_new < best_rr * (1.0 - 1e-12) {
                    best_rr = rr_new;
                    since_best = 0;
                    fruitless_restarts = 0;
                } else {
                    since_best += 1;
                }
                let ratio = rr_new / rr;
                for i in 0..n {
                    p[i] = r[i] + ratio * p[i];
                }
                rr = rr_new;
                restart = since_best > patience;
            } else {
                restart = true;
            }
        }
        if restart {
            fruitless_restarts += 1;
            if fruitless_restarts > 3 {
                break;
            }
            k.mul_vec(x, f);
            residual(x, f, &mut r);
            if stop(iter, x, f) {
                return (iter, true);
            }
            rr = r.iter().map(|v| v * v).sum();
            if rr == 0.0 {
                break;
            }
            p.copy_from_slice(&r);
            since_best = 0;
        }
    }
    (iter, false)
}

fn solve_least_squares(problem: &SolverProblem<'_>, form: &DualForm, mut beta: Vec<f64>, max_iter: u64) -> Result<SolverResult> {
    let n = problem.n();
    let shift = vec![2.0 * form.a_pos; n];
    let mut f = exact_f(problem.kernel, &beta);
    let mut tracker = Tracker::new(problem);
    let (iters, certified) = conjugate_gradient(problem.kernel, &shift, problem.labels, &mut beta, &mut f, max_iter, |it, x, f| {
        let report = gap_report(problem, form, x, f);
        tracker.observe(it, report, x)
    });
    // Certify with exact predictions.
    let best = tracker.chosen(certified).to_vec();
    let f_best = exact_f(problem.kernel, &best);
    let report = gap_report(problem, form, &best, &f_best);
    tracker.reset();
    let converged = tracker.observe(iters, report, &best);
    tracker.finish(iters, converged)
}

fn dual_value(problem: &SolverProblem<'_>, form: &DualForm, beta: &[f64], f: &[f64]) -> f64 {
    let mut v = 0.0;
    for i in 0..beta.len() {
        v += beta[i] * problem.labels[i] - 0.5 * beta[i] * f[i] - form.q(beta[i]);
    }
    v
}

fn solve_expectile(problem: &SolverProblem<'_>, form: &DualForm, mut beta: Vec<f64>, max_iter: u64) -> Result<SolverResult> {
    let n = problem.n();
    let k = problem.kernel;
    let y = problem.labels;
    let mut f = exact_f(k, &beta);
    let mut tracker = Tracker::new(problem);
    let mut iters = 0u64;
    let mut converged = false;
    let mut shift = vec![0.0; n];
    loop {
        let report = gap_report(problem, form, &beta, &f);
        if tracker.observe(iters, report, &beta) {
            converged = true;
            break;
        }
        if iters >= max_iter {
            break;
        }
        // Active quadratic piece: sign(beta_i) agrees with sign(y_i - f_i) at the optimum.
        for i in 0..n {
            let positive = beta[i] > 0.0 || (beta[i] == 0.0 && y[i] - f[i] >= 0.0);
            shift[i] = 2.0 * if positive { form.a_pos } else { form.a_neg };
        }
        let inner_threshold = 0.1 * tracker.threshold;
        let mut z = beta.clone();
        let mut kz = f.clone();
        let scale = 2.0 * form.lambda;
        let (used, _) = conjugate_gradient(k, &shift, y, &mut z, &mut kz, max_iter - iters, |_, x, fx| {
            let mut g = 0.0;
            for i in 0..n {
                let s = y[i] - fx[i] - shift[i] * x[i];
                g += s * s / (2.0 * shift[i]);
            }
            scale * g <= inner_threshold
        });
        iters += used.max(1);
        k.mul_vec(&z, &mut kz);
        let d0 = dual_value(problem, form, &beta, &f);
        let mut t = 1.0;
        let mut accepted = false;
        let mut cand_b = vec![0.0; n];
        let mut cand_f = vec![0.0; n];
        for _ in 0..40 {
            for i in 0..n {
                cand_b[i] = beta[i] + t * (z[i] - beta[i]);
                cand_f[i] = f[i] + t * (kz[i] - f[i]);
            }
            if dual_value(problem, form, &cand_b, &cand_f) >= d0 {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || cand_b == beta {
            let report = gap_report(problem, form, &beta, &f);
            converged = tracker.observe(iters, report, &beta);
            break;
        }
        std::mem::swap(&mut beta, &mut cand_b);
        f = exact_f(k, &beta);
    }
    tracker.finish(iters, converged)
}
