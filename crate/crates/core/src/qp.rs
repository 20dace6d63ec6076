//! Small dense programs over the probability simplex.
//!
//! ```text
//!     minimize    ½ xᵀ H x + cᵀ x
//!     subject to  A x = b,  x >= 0
//! ```
//!
//! `A` normally has two rows (all-ones and the SNR levels). The quadratic
//! solver is a primal active-set method on the nonnegativity bounds. Each
//! step works on the face of currently free variables through a null-space
//! basis of `A_F`. When the reduced Hessian has negative curvature the step
//! follows that direction to the nearest bound, so the method also
//! terminates on indefinite problems; the returned point is then only a local
//! minimizer and the report says so.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::scenario::PowerLevelGrid;

/// Feasibility tolerance on equality rows (after row scaling).
pub const FEAS_TOL: f64 = 1e-10;
/// Multi-start count used when the problem is not convex.
pub const DEFAULT_MULTI_START: usize = 8;
/// Faces are enumerated exhaustively for nonconvex problems up to this many variables.
pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// KKT point of a problem that is convex on the feasible set.
    Optimal,
    /// KKT point of a nonconvex problem (best over the multi-start runs).
    LocalOptimal,
    Infeasible,
    IterationLimit,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::LocalOptimal => "local-optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::IterationLimit => "iteration-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    /// Indices held at their lower bound.
    pub active_set: Vec<usize>,
    /// Multipliers of the equality rows, in the caller's row scaling.
    pub eq_multipliers: Vec<f64>,
    /// Bound multipliers (zero for free variables).
    pub bound_multipliers: Vec<f64>,
    pub iterations: usize,
    /// Set when faces were enumerated exhaustively, so the objective is the global minimum.
    pub certified_global: bool,
    /// Size of the uniform correction applied to restore `Σx = 1` after clamping.
    pub clamp_correction: f64,
}

impl SolveReport {
    fn infeasible(n: usize) -> Self {
        Self {
            solution: vec![f64::NAN; n],
            objective: f64::NAN,
            status: SolveStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            active_set: Vec::new(),
            eq_multipliers: Vec::new(),
            bound_multipliers: Vec::new(),
            iterations: 0,
            certified_global: false,
            clamp_correction: 0.0,
        }
    }

    pub fn is_solved(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::LocalOptimal)
    }

    /// Plain-text dump of the solution and multipliers.
    pub fn dump(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.15e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "status {}\nobjective {:.15e}\nkkt_residual {:.3e}\niterations {}\nsolution {}\neq_multipliers {}\nbound_multipliers {}\nactive {:?}\n",
            self.status,
            self.objective,
            self.kkt_residual,
            self.iterations,
            join(&self.solution),
            join(&self.eq_multipliers),
            join(&self.bound_multipliers),
            self.active_set
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    eq_matrix: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    // rows scaled to unit max-norm
    a_scaled: DMatrix<f64>,
    b_scaled: DVector<f64>,
    row_scale: Vec<f64>,
}

impl QpProblem {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        eq_matrix: DMatrix<f64>,
        eq_rhs: DVector<f64>,
    ) -> Result<Self> {
        let n = linear.len();
        if n == 0 {
            return Err(invalid("QP needs at least one variable"));
        }
        if hessian.nrows() != n || hessian.ncols() != n {
            return Err(invalid("Hessian must be n × n"));
        }
        if eq_matrix.ncols() != n || eq_matrix.nrows() != eq_rhs.len() {
            return Err(invalid("equality matrix/rhs dimensions mismatch"));
        }
        let scale = hessian.amax().max(1.0);
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(invalid(format!("Hessian not symmetric (max asymmetry {asym:e})")));
        }
        if hessian.iter().chain(linear.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("QP data must be finite"));
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let row_scale: Vec<f64> = eq_matrix
            .row_iter()
            .map(|r| {
                let m = r.amax();
                if m > 0.0 {
                    1.0 / m
                } else {
                    1.0
                }
            })
            .collect();
        let mut a_scaled = eq_matrix.clone();
        let mut b_scaled = eq_rhs.clone();
        for (i, s) in row_scale.iter().enumerate() {
            a_scaled.row_mut(i).scale_mut(*s);
            b_scaled[i] *= s;
        }
        Ok(Self {
            hessian,
            linear,
            eq_matrix,
            eq_rhs,
            a_scaled,
            b_scaled,
            row_scale,
        })
    }

    /// Simplex and mean-SNR rows of `grid`.
    pub fn on_grid(hessian: DMatrix<f64>, linear: DVector<f64>, grid: &PowerLevelGrid) -> Result<Self> {
        let (a, b) = grid_constraints(grid);
        Self::new(hessian, linear, a, b)
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn eq_matrix(&self) -> &DMatrix<f64> {
        &self.eq_matrix
    }

    pub fn eq_rhs(&self) -> &DVector<f64> {
        &self.eq_rhs
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        0.5 * v.dot(&(&self.hessian * &v)) + self.linear.dot(&v)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.hessian * x + &self.linear
    }

    /// Max scaled equality residual and max bound violation.
    pub fn feasibility_residual(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        let eq = (&self.a_scaled * &v - &self.b_scaled).amax();
        let neg = x.iter().fold(0.0f64, |m, &xi| m.max(-xi));
        eq.max(neg)
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().all(|v| v.is_finite()) && self.feasibility_residual(x) <= 1e-9
    }

    fn curvature_tol(&self) -> f64 {
        1e-11 * self.hessian.amax().max(1.0)
    }

    /// Whether `H` is positive semidefinite on the null space of `A`.
    pub fn is_convex_on_constraints(&self) -> bool {
        let z = null_basis(&self.a_scaled);
        if z.ncols() == 0 {
            return true;
        }
        let reduced = z.transpose() * &self.hessian * &z;
        min_eigenvalue(&reduced) >= -self.curvature_tol()
    }
}

/// `[1ᵀ; γᵀ] x = [1; γ̄]`.
pub fn grid_constraints(grid: &PowerLevelGrid) -> (DMatrix<f64>, DVector<f64>) {
    let q = grid.q_count();
    let mut a = DMatrix::from_element(2, q, 1.0);
    for (j, g) in grid.snr_linear().iter().enumerate() {
        a[(1, j)] = *g;
    }
    (a, DVector::from_vec(vec![1.0, grid.target_mean_snr()]))
}

fn rank_tol(s: &DVector<f64>) -> f64 {
    let smax = s.iter().fold(0.0f64, |m, &v| m.max(v));
    1e-12 * smax.max(1e-300) * (s.len().max(1) as f64)
}

/// Orthonormal basis (columns) of the null space of `a`.
fn null_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let tol = rank_tol(&svd.singular_values);
    let mut proj = DMatrix::identity(n, n);
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > tol {
            let v = vt.row(i).transpose();
            proj -= &v * v.transpose();
        }
    }
    let eig = SymmetricEigen::new(proj);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn matrix_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let s = a.clone().svd(false, false).singular_values;
    let tol = rank_tol(&s);
    s.iter().filter(|&&v| v > tol).count()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Least-squares solution of `m y = rhs`.
fn lstsq(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if m.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = m.clone().svd(true, true);
    let tol = rank_tol(&svd.singular_values);
    svd.solve(rhs, tol).unwrap_or_else(|_| DVector::zeros(m.ncols()))
}

fn select_cols(a: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

fn select_sym(h: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| h[(idx[i], idx[j])])
}

#[derive(Debug, Clone)]
struct LocalRun {
    x: Vec<f64>,
    active: Vec<bool>,
    nu: DVector<f64>,
    mu: Vec<f64>,
    iterations: usize,
    converged: bool,
}

enum Step {
    /// Stationary on the current face.
    None,
    /// Direction and maximum useful step length.
    Move(DVector<f64>, f64),
}

impl QpProblem {
    fn free_indices(active: &[bool]) -> Vec<usize> {
        active
            .iter()
            .enumerate()
            .filter(|(_, a)| !**a)
            .map(|(i, _)| i)
            .collect()
    }

    /// Releases bounds (lowest index first) until `A_F` regains the rank of `A`.
    fn repair_rank(&self, active: &mut [bool]) {
        let full = matrix_rank(&self.a_scaled);
        loop {
            let free = Self::free_indices(active);
            if matrix_rank(&select_cols(&self.a_scaled, &free)) >= full {
                return;
            }
            let best = (0..active.len())
                .filter(|&i| active[i])
                .find(|&i| {
                    let mut trial = free.clone();
                    trial.push(i);
                    trial.sort_unstable();
                    matrix_rank(&select_cols(&self.a_scaled, &trial))
                        > matrix_rank(&select_cols(&self.a_scaled, &free))
                });
            match best {
                Some(i) => active[i] = false,
                None => return,
            }
        }
    }

    fn direction(
        &self,
        x: &DVector<f64>,
        free: &[usize],
        released: Option<usize>,
    ) -> Step {
        let a_f = select_cols(&self.a_scaled, free);
        let z = null_basis(&a_f);
        if z.ncols() == 0 {
            return Step::None;
        }
        let g = self.gradient(x);
        let g_f = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
        let h_ff = select_sym(&self.hessian, free);
        let reduced = z.transpose() * &h_ff * &z;
        let r = z.transpose() * &g_f;
        let eig = SymmetricEigen::new(reduced.clone());
        let tol = self.curvature_tol();
        let grad_tol = 1e-14 * g.amax().max(1.0);

        let lift = |d_f: DVector<f64>| {
            let mut d = DVector::zeros(self.dim());
            for (k, &i) in free.iter().enumerate() {
                d[i] = d_f[k];
            }
            d
        };

        let (imin, lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });

        if lmin < -tol {
            let u = eig.eigenvectors.column(imin).into_owned();
            let mut d = lift(&z * &u);
            let slope = g.dot(&d);
            if slope > grad_tol
                || (slope.abs() <= grad_tol && released.is_some_and(|j| d[j] < 0.0))
            {
                d = -d;
            }
            if self.max_step(x, &d).0 > 0.0 {
                return Step::Move(d, f64::INFINITY);
            }
            // the curvature direction is blocked at once; use the projected gradient
            if r.amax() > grad_tol {
                let d = lift(&z * (-&r));
                let curv = d.dot(&(&self.hessian * &d));
                let cap = if curv > tol { -g.dot(&d) / curv } else { f64::INFINITY };
                return Step::Move(d, cap);
            }
            return Step::Move(-d, f64::INFINITY);
        }

        // positive semidefinite on the face
        let mut r_zero = DVector::zeros(r.len());
        let mut newton = DVector::zeros(r.len());
        for i in 0..r.len() {
            let v = eig.eigenvectors.column(i);
            let c = v.dot(&r);
            if eig.eigenvalues[i] <= tol {
                r_zero += v * c;
            } else {
                newton -= v * (c / eig.eigenvalues[i]);
            }
        }
        if r_zero.amax() > grad_tol {
            return Step::Move(lift(&z * (-r_zero)), f64::INFINITY);
        }
        let d = lift(&z * newton);
        if d.amax() <= 1e-13 {
            Step::None
        } else {
            Step::Move(d, 1.0)
        }
    }

    /// Largest feasible step along `d` and the blocking index, if any.
    fn max_step(&self, x: &DVector<f64>, d: &DVector<f64>) -> (f64, Option<usize>) {
        let mut alpha = f64::INFINITY;
        let mut block = None;
        for i in 0..self.dim() {
            if d[i] < -1e-15 {
                let a = (x[i] / -d[i]).max(0.0);
                if a < alpha {
                    alpha = a;
                    block = Some(i);
                }
            }
        }
        (alpha, block)
    }

    fn multipliers(&self, x: &DVector<f64>, active: &[bool]) -> (DVector<f64>, Vec<f64>) {
        let free = Self::free_indices(active);
        let g = self.gradient(x);
        let a_f = select_cols(&self.a_scaled, &free);
        let g_f = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
        let nu = if free.is_empty() {
            DVector::zeros(self.a_scaled.nrows())
        } else {
            lstsq(&a_f.transpose(), &g_f)
        };
        let atnu = self.a_scaled.transpose() * &nu;
        let mu = (0..self.dim())
            .map(|i| if active[i] { g[i] - atnu[i] } else { 0.0 })
            .collect();
        (nu, mu)
    }

    fn local_solve(&self, start: &[f64], max_iter: usize) -> LocalRun {
        let n = self.dim();
        let mut x = DVector::from_iterator(n, start.iter().map(|&v| v.max(0.0)));
        let mut active: Vec<bool> = x.iter().map(|&v| v <= 0.0).collect();
        self.repair_rank(&mut active);
        let mut released: Option<usize> = None;
        let dual_tol = 1e-12 * self.gradient(&x).amax().max(1.0);

        for it in 0..max_iter {
            let free = Self::free_indices(&active);
            match self.direction(&x, &free, released) {
                Step::None => {
                    let (nu, mu) = self.multipliers(&x, &active);
                    let worst = (0..n)
                        .filter(|&i| active[i] && mu[i] < -dual_tol)
                        .fold(None, |best: Option<usize>, i| match best {
                            Some(b) if mu[b] <= mu[i] => Some(b),
                            _ => Some(i),
                        });
                    match worst {
                        None => {
                            return LocalRun {
                                x: x.iter().copied().collect(),
                                active,
                                nu,
                                mu,
                                iterations: it + 1,
                                converged: true,
                            }
                        }
                        Some(j) => {
                            active[j] = false;
                            released = Some(j);
                        }
                    }
                }
                Step::Move(d, cap) => {
                    let (alpha_block, block) = self.max_step(&x, &d);
                    let (alpha, hit) = if alpha_block <= cap {
                        (alpha_block, block)
                    } else {
                        (cap, None)
                    };
                    if !alpha.is_finite() {
                        // unbounded face: cannot happen with a simplex row
                        break;
                    }
                    x += &d * alpha;
                    if let Some(i) = hit {
                        x[i] = 0.0;
                        active[i] = true;
                    }
                    for v in x.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    released = None;
                }
            }
        }
        let (nu, mu) = self.multipliers(&x, &active);
        LocalRun {
            x: x.iter().copied().collect(),
            active,
            nu,
            mu,
            iterations: max_iter,
            converged: false,
        }
    }

    fn kkt_residual(&self, x: &[f64], active: &[bool], nu: &DVector<f64>, mu: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let g = self.gradient(&xv);
        let atnu = self.a_scaled.transpose() * nu;
        let mut res = self.feasibility_residual(x);
        for i in 0..self.dim() {
            if active[i] {
                res = res.max(-mu[i]).max((x[i] * mu[i]).abs());
            } else {
                res = res.max((g[i] - atnu[i]).abs());
            }
        }
        res
    }

    fn report(&self, run: LocalRun, status: SolveStatus) -> SolveReport {
        let mut x = run.x;
        for v in x.iter_mut() {
            if *v < 0.0 && *v >= -1e-12 {
                *v = 0.0;
            }
        }
        let excess = 1.0 - x.iter().sum::<f64>();
        let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0).collect();
        if excess != 0.0 && !support.is_empty() && self.eq_matrix.row(0).iter().all(|&v| v == 1.0) {
            let share = excess / support.len() as f64;
            for &i in &support {
                x[i] += share;
            }
            log::debug!("simplex renormalization correction {excess:e}");
        }
        let kkt = self.kkt_residual(&x, &run.active, &run.nu, &run.mu);
        let eq_multipliers = run
            .nu
            .iter()
            .zip(&self.row_scale)
            .map(|(n, s)| n * s)
            .collect();
        SolveReport {
            objective: self.objective(&x),
            solution: x,
            status,
            kkt_residual: kkt,
            active_set: (0..run.active.len()).filter(|&i| run.active[i]).collect(),
            eq_multipliers,
            bound_multipliers: run.mu,
            iterations: run.iterations,
            certified_global: false,
            clamp_correction: excess.abs(),
        }
    }
}

/// Options for [`solve_qp_with`].
#[derive(Debug, Clone)]
pub struct QpOptions<'a> {
    pub start: Option<&'a [f64]>,
    pub max_iter: usize,
    pub multi_start: usize,
    pub exhaustive_limit: usize,
}

impl Default for QpOptions<'_> {
    fn default() -> Self {
        Self {
            start: None,
            max_iter: 500,
            multi_start: DEFAULT_MULTI_START,
            exhaustive_limit: DEFAULT_EXHAUSTIVE_LIMIT,
        }
    }
}

/// Active-set solve from `start` (or the uniform point), with multi-start on nonconvex problems.
pub fn solve_qp(problem: &QpProblem, start: Option<&[f64]>, max_iter: usize) -> Result<SolveReport> {
    solve_qp_with(
        problem,
        &QpOptions {
            start,
            max_iter,
            ..QpOptions::default()
        },
    )
}

pub fn solve_qp_with(problem: &QpProblem, opts: &QpOptions<'_>) -> Result<SolveReport> {
    let n = problem.dim();
    let vertices = feasible_vertices(problem)?;
    if vertices.is_empty() {
        return Ok(SolveReport::infeasible(n));
    }
    let uniform = vec![1.0 / n as f64; n];
    let mut starts: Vec<Vec<f64>> = Vec::new();
    match opts.start {
        Some(s) if problem.is_feasible(s) => starts.push(s.to_vec()),
        Some(_) => log::debug!("QP start point infeasible; ignored"),
        None => {}
    }
    if problem.is_feasible(&uniform) {
        starts.push(uniform);
    }
    starts.extend(vertices.iter().cloned());
    starts.dedup();

    let first = problem.local_solve(&starts[0], opts.max_iter);
    if problem.is_convex_on_constraints() {
        let status = if first.converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::IterationLimit
        };
        return Ok(problem.report(first, status));
    }

    let mut best = first;
    let mut best_obj = problem.objective(&best.x);
    for s in starts.iter().skip(1).take(opts.multi_start.saturating_sub(1)) {
        let run = problem.local_solve(s, opts.max_iter);
        let obj = problem.objective(&run.x);
        if run.converged && (obj < best_obj || !best.converged) {
            best_obj = obj;
            best = run;
        }
    }
    let mut certified = false;
    if n <= opts.exhaustive_limit {
        if let Some(x) = enumerate_faces(problem) {
            certified = true;
            if problem.objective(&x) < best_obj - 1e-14 * best_obj.abs().max(1.0) {
                let run = problem.local_solve(&x, opts.max_iter);
                let obj = problem.objective(&run.x);
                if obj <= best_obj {
                    best = run;
                }
            }
        }
    }
    let status = if best.converged {
        SolveStatus::LocalOptimal
    } else {
        SolveStatus::IterationLimit
    };
    let mut report = problem.report(best, status);
    report.certified_global = certified;
    Ok(report)
}

/// Global minimizer by scanning every face of the polytope for its interior stationary point.
fn enumerate_faces(problem: &QpProblem) -> Option<Vec<f64>> {
    let n = problem.dim();
    let tol = problem.curvature_tol();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u64..(1u64 << n) {
        let support: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let a_s = select_cols(&problem.a_scaled, &support);
        let xp = lstsq(&a_s, &problem.b_scaled);
        if (&a_s * &xp - &problem.b_scaled).amax() > FEAS_TOL {
            continue;
        }
        let z = null_basis(&a_s);
        let x_s = if z.ncols() == 0 {
            xp
        } else {
            let h_ss = select_sym(&problem.hessian, &support);
            let reduced = z.transpose() * &h_ss * &z;
            if min_eigenvalue(&reduced) <= tol {
                continue;
            }
            let c_s = DVector::from_iterator(support.len(), support.iter().map(|&i| problem.linear[i]));
            let rhs = z.transpose() * (&h_ss * &xp + c_s);
            match reduced.cholesky() {
                Some(ch) => &xp - &z * ch.solve(&rhs),
                None => continue,
            }
        };
        if x_s.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut x = vec![0.0; n];
        for (k, &i) in support.iter().enumerate() {
            x[i] = x_s[k].max(0.0);
        }
        let obj = problem.objective(&x);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    }
    best.map(|(_, x)| x)
}

/// Lexicographic `m`-subsets of `0..n`.
fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if m > n {
        return out;
    }
    let mut c: Vec<usize> = (0..m).collect();
    loop {
        out.push(c.clone());
        let mut i = m;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if c[i] < n - m + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        c[i] += 1;
        for j in i + 1..m {
            c[j] = c[j - 1] + 1;
        }
    }
}

struct Vertex {
    basis: Vec<usize>,
    x: Vec<f64>,
}

fn basic_feasible_solutions(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<Vertex> {
    let n = a.ncols();
    let m = matrix_rank(a);
    if m == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for basis in combinations(n, m) {
        let a_b = select_cols(a, &basis);
        if matrix_rank(&a_b) < m {
            continue;
        }
        let sol = lstsq(&a_b, b);
        if (&a_b * &sol - b).amax() > FEAS_TOL {
            continue;
        }
        if sol.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut x = vec![0.0; n];
        for (k, &i) in basis.iter().enumerate() {
            x[i] = sol[k].max(0.0);
        }
        out.push(Vertex { basis, x });
    }
    out
}

/// Distinct vertices of `{A x = b, x >= 0}`, in lexicographic basis order.
pub fn feasible_vertices(problem: &QpProblem) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in basic_feasible_solutions(&problem.a_scaled, &problem.b_scaled) {
        if !out
            .iter()
            .any(|w| w.iter().zip(&v.x).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            out.push(v.x);
        }
    }
    Ok(out)
}

/// Minimum of `costᵀx` over `{A x = b, x >= lower}` by enumerating basic feasible solutions.
///
/// Ties go to the lexicographically smallest basis.
pub fn solve_lp(
    cost: &[f64],
    eq_matrix: &DMatrix<f64>,
    eq_rhs: &DVector<f64>,
    lower_bounds: &[f64],
) -> Result<SolveReport> {
    let n = cost.len();
    if eq_matrix.ncols() != n || lower_bounds.len() != n || eq_matrix.nrows() != eq_rhs.len() {
        return Err(invalid("LP dimensions mismatch"));
    }
    if cost.iter().chain(lower_bounds).any(|v| !v.is_finite()) {
        return Err(invalid("LP data must be finite"));
    }
    let lb = DVector::from_column_slice(lower_bounds);
    let shifted_rhs = eq_rhs - eq_matrix * &lb;

    let mut a = eq_matrix.clone();
    let mut b = shifted_rhs;
    let mut scales = Vec::with_capacity(a.nrows());
    for i in 0..a.nrows() {
        let m = a.row(i).amax();
        let s = if m > 0.0 { 1.0 / m } else { 1.0 };
        a.row_mut(i).scale_mut(s);
        b[i] *= s;
        scales.push(s);
    }

    let c = DVector::from_column_slice(cost);
    let mut best: Option<(f64, Vertex)> = None;
    for v in basic_feasible_solutions(&a, &b) {
        let obj: f64 = v.x.iter().zip(cost).map(|(x, c)| x * c).sum();
        let better = match &best {
            None => true,
            Some((bo, _)) => obj < bo - 1e-12 * bo.abs().max(1.0),
        };
        if better {
            best = Some((obj, v));
        }
    }
    let Some((_, vertex)) = best else {
        return Ok(SolveReport::infeasible(n));
    };

    // duals from the chosen basis
    let a_b = select_cols(&a, &vertex.basis);
    let c_b = DVector::from_iterator(vertex.basis.len(), vertex.basis.iter().map(|&i| c[i]));
    let y = lstsq(&a_b.transpose(), &c_b);
    let reduced = &c - a.transpose() * &y;
    let x: Vec<f64> = vertex.x.iter().zip(lower_bounds).map(|(y, l)| y + l).collect();
    let active: Vec<usize> = (0..n).filter(|i| !vertex.basis.contains(i)).collect();
    let mut kkt = 0.0f64;
    for &i in &active {
        kkt = kkt.max(-reduced[i]);
    }
    let xs = DVector::from_iterator(n, vertex.x.iter().copied());
    kkt = kkt.max((&a * xs - &b).amax());
    let objective = x.iter().zip(cost).map(|(x, c)| x * c).sum();
    Ok(SolveReport {
        solution: x,
        objective,
        status: SolveStatus::Optimal,
        kkt_residual: kkt,
        bound_multipliers: (0..n)
            .map(|i| if vertex.basis.contains(&i) { 0.0 } else { reduced[i] })
            .collect(),
        active_set: active,
        eq_multipliers: y.iter().zip(&scales).map(|(y, s)| y * s).collect(),
        iterations: 1,
        certified_global: true,
        clamp_correction: 0.0,
    })
}

/// Upper bound on objective evaluations performed by [`brute_force_simplex_search`].
pub const BRUTE_FORCE_BUDGET: u64 = 50_000_000;

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Exhaustive minimizer of `objective` over the feasible set of `grid`.
///
/// For every choice of two dependent coordinates the remaining ones range
/// over all multiples of `resolution` with sum at most one, and the dependent
/// pair is solved exactly from the simplex and mean-SNR rows. Every candidate
/// is exactly feasible and every face of the polytope is sampled on a lattice
/// aligned with it. Test-only oracle.
pub fn brute_force_simplex_search(
    objective: &dyn Fn(&[f64]) -> f64,
    grid: &PowerLevelGrid,
    resolution: f64,
) -> Result<Vec<f64>> {
    let q = grid.q_count();
    if q > 5 {
        return Err(Error::ResourceLimit(format!("brute force supports Q <= 5, got {q}")));
    }
    if !(resolution >= 1e-3) || resolution > 1.0 {
        return Err(Error::ResourceLimit(format!(
            "resolution must be in [1e-3, 1], got {resolution}"
        )));
    }
    let steps = (1.0 / resolution).round() as u64;
    let free_dims = q as u64 - 2;
    let per_pair = binomial(steps + free_dims, free_dims);
    let total = per_pair.saturating_mul(binomial(q as u64, 2));
    if total > BRUTE_FORCE_BUDGET {
        return Err(Error::ResourceLimit(format!(
            "brute force would evaluate {total} points (budget {BRUTE_FORCE_BUDGET})"
        )));
    }

    let g = grid.snr_linear();
    let target = grid.target_mean_snr();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut x = vec![0.0; q];
    for pair in combinations(q, 2) {
        let (a, b) = (pair[0], pair[1]);
        let frees: Vec<usize> = (0..q).filter(|i| *i != a && *i != b).collect();
        let mut counts = vec![0u64; frees.len()];
        loop {
            let used: u64 = counts.iter().sum();
            if used <= steps {
                let mut mass = 0.0;
                let mut mean = 0.0;
                for (c, &i) in counts.iter().zip(&frees) {
                    x[i] = *c as f64 / steps as f64;
                    mass += x[i];
                    mean += x[i] * g[i];
                }
                // x_a + x_b = 1 - mass,  g_a x_a + g_b x_b = target - mean
                let rem = 1.0 - mass;
                let xb = (target - mean - g[a] * rem) / (g[b] - g[a]);
                let xa = rem - xb;
                let scale_tol = 1e-12;
                if xa >= -scale_tol && xb >= -scale_tol {
                    x[a] = xa.max(0.0);
                    x[b] = xb.max(0.0);
                    let v = objective(&x);
                    if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                        best = Some((v, x.clone()));
                    }
                }
            }
            // next composition
            let mut pos = 0;
            loop {
                if pos == counts.len() {
                    break;
                }
                counts[pos] += 1;
                if counts.iter().sum::<u64>() <= steps {
                    break;
                }
                counts[pos] = 0;
                pos += 1;
            }
            if pos == counts.len() {
                break;
            }
        }
    }
    best.map(|(_, x)| x)
        .ok_or_else(|| Error::Infeasible("no feasible lattice point".into()))
}
