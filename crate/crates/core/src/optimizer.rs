//! Level-distribution optimization: the single-collision QP, the iterative
//! conditioned QP for larger detectors, and the two constrained-user variants.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::objective::{condition_tensor, tagged_cost, truncated_blep, ObjectiveBundle};
use crate::qp::{solve_lp, solve_qp_with, QpOptions, QpProblem, SolveReport, SolveStatus};
use crate::scenario::{LevelDistribution, PowerLevelGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Detector capability `K`; `None` uses every order in the bundle.
    pub k_cap: Option<usize>,
    /// Stop when successive iterates differ by less than this in max-norm.
    pub convergence_tol: f64,
    pub max_iterations: usize,
    pub multi_start: usize,
    /// Exhaustive face search for nonconvex QPs up to this many levels.
    pub exhaustive_limit: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            k_cap: None,
            convergence_tol: 1e-8,
            max_iterations: 50,
            multi_start: crate::qp::DEFAULT_MULTI_START,
            exhaustive_limit: crate::qp::DEFAULT_EXHAUSTIVE_LIMIT,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_tol > 0.0) {
            return Err(invalid("convergence tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        if self.multi_start == 0 {
            return Err(invalid("multi_start must be at least 1"));
        }
        Ok(())
    }

    fn qp_options<'a>(&self, start: Option<&'a [f64]>) -> QpOptions<'a> {
        QpOptions {
            start,
            max_iter: 500,
            multi_start: self.multi_start,
            exhaustive_limit: self.exhaustive_limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintReason {
    MaxPowerCap,
    MinPowerFloor,
}

/// Levels a power-limited terminal is allowed to use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserPowerConstraint {
    allowed: Vec<usize>,
    reason: ConstraintReason,
}

impl UserPowerConstraint {
    pub fn new(mut allowed: Vec<usize>, reason: ConstraintReason, q_count: usize) -> Result<Self> {
        allowed.sort_unstable();
        allowed.dedup();
        if allowed.is_empty() {
            return Err(invalid("allowed level set is empty"));
        }
        if let Some(&bad) = allowed.iter().find(|&&i| i >= q_count) {
            return Err(invalid(format!("level index {bad} out of range for Q = {q_count}")));
        }
        Ok(Self { allowed, reason })
    }

    /// Levels with SNR at most `gamma_max_db`.
    pub fn max_snr_db(grid: &PowerLevelGrid, gamma_max_db: f64) -> Result<Self> {
        let allowed = (0..grid.q_count())
            .filter(|&i| grid.snr_db()[i] <= gamma_max_db + 1e-9)
            .collect();
        Self::new(allowed, ConstraintReason::MaxPowerCap, grid.q_count())
    }

    /// Levels with SNR at least `gamma_min_db`.
    pub fn min_snr_db(grid: &PowerLevelGrid, gamma_min_db: f64) -> Result<Self> {
        let allowed = (0..grid.q_count())
            .filter(|&i| grid.snr_db()[i] >= gamma_min_db - 1e-9)
            .collect();
        Self::new(allowed, ConstraintReason::MinPowerFloor, grid.q_count())
    }

    pub fn allowed(&self) -> &[usize] {
        &self.allowed
    }

    pub fn reason(&self) -> ConstraintReason {
        self.reason
    }

    pub fn contains(&self, level: usize) -> bool {
        self.allowed.binary_search(&level).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub distribution: Vec<f64>,
    /// Value of the QP actually solved (conditioned surrogate).
    pub surrogate_objective: f64,
    /// Full truncated BLEP of the iterate.
    pub true_objective: f64,
    pub status: SolveStatus,
    /// Max-norm change from the previous iterate (zero for iteration 0).
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Index of the returned iterate.
    pub best: usize,
    /// Set when the uniform distribution beat every iterate and was returned.
    pub uniform_fallback: bool,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn fixed_point_residual(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.step)
    }

    pub fn status(&self) -> SolveStatus {
        if self.converged {
            self.records[self.best].status
        } else {
            SolveStatus::IterationLimit
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,true_objective,surrogate_objective,step,status,distribution\n");
        for (i, r) in self.records.iter().enumerate() {
            let p: Vec<String> = r.distribution.iter().map(|v| crate::experiments::fmt12(*v)).collect();
            out.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                crate::experiments::fmt12(r.true_objective),
                crate::experiments::fmt12(r.surrogate_objective),
                crate::experiments::fmt12(r.step),
                r.status,
                p.join(" ")
            ));
        }
        out
    }
}

impl fmt::Display for IterationTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} iterations, converged {}, best {} (residual {:.3e})",
            self.iterations(),
            self.converged,
            self.best,
            self.fixed_point_residual()
        )
    }
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn linear_term(bundle: &ObjectiveBundle) -> DVector<f64> {
    DVector::from_vec(bundle.m0()) * bundle.traffic().weight(0)
}

fn k1_hessian(bundle: &ObjectiveBundle) -> Result<DMatrix<f64>> {
    let q = bundle.q_count();
    if bundle.k_max() == 0 {
        return Ok(DMatrix::zeros(q, q));
    }
    Ok(sym(&bundle.tensor(1).as_matrix()?) * (2.0 * bundle.traffic().weight(1)))
}

fn solve_on_grid(
    bundle: &ObjectiveBundle,
    h: DMatrix<f64>,
    c: DVector<f64>,
    start: Option<&[f64]>,
    config: &OptimizerConfig,
) -> Result<SolveReport> {
    let problem = QpProblem::on_grid(h, c, bundle.grid())?;
    let report = solve_qp_with(&problem, &config.qp_options(start))?;
    if report.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible(format!(
            "mean SNR {} outside the level range",
            bundle.grid().target_mean_snr()
        )));
    }
    Ok(report)
}

fn uniform_if_feasible(grid: &PowerLevelGrid) -> Option<LevelDistribution> {
    let u = LevelDistribution::uniform(grid.q_count());
    (u.mean_residual(grid) <= 1e-9 * grid.target_mean_snr().max(1.0)).then_some(u)
}

/// Minimizes `e^{-λ}PᵀM0 + λe^{-λ}PᵀM1P` under the simplex and mean-SNR constraints.
pub fn optimize_k1(bundle: &ObjectiveBundle) -> Result<(LevelDistribution, SolveReport)> {
    optimize_k1_with(bundle, &OptimizerConfig::default())
}

pub fn optimize_k1_with(
    bundle: &ObjectiveBundle,
    config: &OptimizerConfig,
) -> Result<(LevelDistribution, SolveReport)> {
    config.validate()?;
    let k1 = bundle.truncated_to(bundle.k_max().min(1))?;
    let uniform = uniform_if_feasible(bundle.grid());
    let start = uniform.as_ref().map(|u| u.probs().to_vec());
    let report = solve_on_grid(&k1, k1_hessian(&k1)?, linear_term(&k1), start.as_deref(), config)?;
    let dist = LevelDistribution::new(report.solution.clone())?;
    if let Some(u) = uniform {
        if truncated_blep(&u, &k1)? < truncated_blep(&dist, &k1)? {
            log::warn!("QP result worse than uniform; returning uniform");
            let u = u.mean_constrained(bundle.grid())?;
            return Ok((u, report));
        }
    }
    Ok((dist.mean_constrained(bundle.grid())?, report))
}

/// Iterative scheme for detectors handling `K >= 2` extra users.
///
/// Iteration 0 is [`optimize_k1`]. Each later iteration conditions the
/// order-3-and-up tensors on the previous iterate, which leaves a quadratic
/// in `P`, and solves that QP warm-started at the previous iterate. The
/// iterate with the smallest full truncated BLEP is returned.
pub fn optimize_iterative(
    bundle: &ObjectiveBundle,
    config: &OptimizerConfig,
) -> Result<(LevelDistribution, IterationTrace)> {
    config.validate()?;
    let k = config.k_cap.unwrap_or(bundle.k_max()).min(bundle.k_max());
    let bundle = bundle.truncated_to(k)?;
    let (p0, rep0) = optimize_k1_with(&bundle, config)?;
    let k1 = bundle.truncated_to(k.min(1))?;
    let mut records = vec![IterationRecord {
        distribution: p0.probs().to_vec(),
        surrogate_objective: truncated_blep(&p0, &k1)?,
        true_objective: truncated_blep(&p0, &bundle)?,
        status: rep0.status,
        step: 0.0,
    }];
    let mut converged = k < 2;
    let h1 = k1_hessian(&bundle)?;
    let c = linear_term(&bundle);
    let mut prev = p0;
    for _ in 0..config.max_iterations {
        if converged {
            break;
        }
        let mut h = h1.clone();
        for order in 2..=k {
            let m = condition_tensor(bundle.tensor(order), &prev)?;
            h += sym(&m) * (2.0 * bundle.traffic().weight(order));
        }
        let report = solve_on_grid(&bundle, h, c.clone(), Some(prev.probs()), config)?;
        let next = LevelDistribution::new(report.solution.clone())?.mean_constrained(bundle.grid())?;
        let step = next.linf_distance(&prev);
        records.push(IterationRecord {
            distribution: next.probs().to_vec(),
            surrogate_objective: report.objective,
            true_objective: truncated_blep(&next, &bundle)?,
            status: report.status,
            step,
        });
        prev = next;
        converged = step < config.convergence_tol;
    }

    let best = records
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.true_objective < records[b].true_objective { i } else { b });
    let mut dist = LevelDistribution::new(records[best].distribution.clone())?.mean_constrained(bundle.grid())?;
    let mut uniform_fallback = false;
    if let Some(u) = uniform_if_feasible(bundle.grid()) {
        if truncated_blep(&u, &bundle)? < records[best].true_objective {
            log::warn!("uniform distribution beats every iterate; returning uniform");
            dist = u.mean_constrained(bundle.grid())?;
            uniform_fallback = true;
        }
    }
    if !converged {
        log::warn!("iterative scheme stopped after {} iterations", records.len());
    }
    Ok((
        dist,
        IterationTrace {
            records,
            converged,
            best,
            uniform_fallback,
        },
    ))
}

/// What to do with the mean-SNR row when a terminal loses some levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum C2Policy {
    /// Keep `Σ γ_q x_q = γ̄` over the allowed levels whenever `γ̄` lies in their range.
    #[default]
    ImposeWhenFeasible,
    /// Only the simplex row.
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSolution {
    /// Full-length distribution, zero on excluded levels.
    pub distribution: LevelDistribution,
    /// The constrained user's BLEP with everyone else at `others`.
    pub blep: f64,
    pub c2_imposed: bool,
}

/// BLEP of a tagged user drawing from `dist` while every other user draws from `others`.
pub fn tagged_blep(
    dist: &LevelDistribution,
    others: &LevelDistribution,
    bundle: &ObjectiveBundle,
) -> Result<f64> {
    let cost = tagged_cost(others, bundle)?;
    if dist.q_count() != cost.len() {
        return Err(invalid("distribution length does not match the grid"));
    }
    Ok(dist.probs().iter().zip(&cost).map(|(p, c)| p * c).sum())
}

/// The constrained terminal's own LP with interferers held at `others`.
pub fn optimize_constrained_user_lp(
    allowed: &UserPowerConstraint,
    others: &LevelDistribution,
    bundle: &ObjectiveBundle,
) -> Result<ConstrainedSolution> {
    optimize_constrained_user_lp_with(allowed, others, bundle, C2Policy::default())
}

pub fn optimize_constrained_user_lp_with(
    allowed: &UserPowerConstraint,
    others: &LevelDistribution,
    bundle: &ObjectiveBundle,
    policy: C2Policy,
) -> Result<ConstrainedSolution> {
    let q = bundle.q_count();
    if allowed.allowed().iter().any(|&i| i >= q) {
        return Err(invalid("allowed levels out of range for the bundle"));
    }
    let cost = tagged_cost(others, bundle)?;
    let idx = allowed.allowed();
    let grid = bundle.grid();
    let g = grid.snr_linear();
    let target = grid.target_mean_snr();

    if idx.len() == 1 {
        let dist = LevelDistribution::unit_mass(q, idx[0])?;
        return Ok(ConstrainedSolution {
            blep: cost[idx[0]],
            distribution: dist,
            c2_imposed: (g[idx[0]] - target).abs() <= 1e-9 * target,
        });
    }

    let lo = idx.iter().map(|&i| g[i]).fold(f64::INFINITY, f64::min);
    let hi = idx.iter().map(|&i| g[i]).fold(f64::NEG_INFINITY, f64::max);
    let impose = policy == C2Policy::ImposeWhenFeasible && target >= lo && target <= hi;
    if policy == C2Policy::ImposeWhenFeasible && !impose {
        log::warn!("mean SNR {target} outside allowed range [{lo}, {hi}]; dropping the mean constraint");
    }
    let rows = if impose { 2 } else { 1 };
    let a = DMatrix::from_fn(rows, idx.len(), |r, j| if r == 0 { 1.0 } else { g[idx[j]] });
    let b = if impose {
        DVector::from_vec(vec![1.0, target])
    } else {
        DVector::from_vec(vec![1.0])
    };
    let sub_cost: Vec<f64> = idx.iter().map(|&i| cost[i]).collect();
    let report = solve_lp(&sub_cost, &a, &b, &vec![0.0; idx.len()])?;
    if report.status == SolveStatus::Infeasible {
        return Err(Error::Infeasible("restricted LP has no feasible vertex".into()));
    }
    let mut full = vec![0.0; q];
    for (k, &i) in idx.iter().enumerate() {
        full[i] = report.solution[k];
    }
    let dist = LevelDistribution::new(full)?;
    Ok(ConstrainedSolution {
        blep: tagged_blep(&dist, others, bundle)?,
        distribution: dist,
        c2_imposed: impose,
    })
}

/// Moves the mass of excluded levels onto the allowed ones, proportionally.
///
/// Falls back to uniform over the allowed levels when they carry no mass.
/// The mean-SNR constraint is generally lost.
pub fn redistribute(
    optimum: &LevelDistribution,
    allowed: &UserPowerConstraint,
) -> Result<LevelDistribution> {
    let q = optimum.q_count();
    if allowed.allowed().iter().any(|&i| i >= q) {
        return Err(invalid("allowed levels out of range"));
    }
    let p = optimum.probs();
    let kept: f64 = allowed.allowed().iter().map(|&i| p[i]).sum();
    let mut out = vec![0.0; q];
    if kept > 0.0 {
        for &i in allowed.allowed() {
            out[i] = p[i] / kept;
        }
    } else {
        let share = 1.0 / allowed.allowed().len() as f64;
        for &i in allowed.allowed() {
            out[i] = share;
        }
    }
    LevelDistribution::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{CollisionErrorTensor, ModelSettings};
    use crate::scenario::{build_snr_grid, BlockConfig, Modulation, TrafficModel};
    use approx::assert_relative_eq;

    fn bundle(q: usize, gamma_q_db: f64, lambda: f64, k: usize) -> ObjectiveBundle {
        let grid = PowerLevelGrid::from_endpoints(15.0, gamma_q_db, q).unwrap();
        let traffic = TrafficModel::new(lambda, k).unwrap();
        let block = BlockConfig::new(100, Modulation::Bpsk).unwrap();
        let settings = ModelSettings::new(Modulation::Bpsk, 20_000, 11);
        ObjectiveBundle::build(&grid, &traffic, &block, &settings).unwrap()
    }

    fn check_constraints(p: &LevelDistribution, grid: &PowerLevelGrid) {
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.mean_residual(grid) < 1e-9 * grid.target_mean_snr());
        assert!(p.probs().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn two_levels_give_uniform() {
        let b = bundle(2, 25.0, 0.5, 1);
        let (p, _) = optimize_k1(&b).unwrap();
        assert_relative_eq!(p.probs()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(p.probs()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn k1_beats_uniform_on_thirteen_levels() {
        let b = bundle(13, 33.0, 0.5, 1);
        let (p, rep) = optimize_k1(&b).unwrap();
        check_constraints(&p, b.grid());
        assert!(rep.kkt_residual < 1e-8);
        let u = LevelDistribution::uniform(13);
        let opt = truncated_blep(&p, &b).unwrap();
        let uni = truncated_blep(&u, &b).unwrap();
        assert!(opt < uni, "{opt} vs {uni}");
        assert!(p.linf_distance(&u) > 1e-3);
    }

    #[test]
    fn zero_rate_is_lp_on_m0() {
        let b = bundle(5, 27.0, 0.0, 1);
        let (p, _) = optimize_k1(&b).unwrap();
        let (a, rhs) = crate::qp::grid_constraints(b.grid());
        let lp = solve_lp(&b.m0(), &a, &rhs, &[0.0; 5]).unwrap();
        let x = truncated_blep(&p, &b).unwrap();
        assert!((x - lp.objective).abs() < 1e-12);
        check_constraints(&p, b.grid());
    }

    #[test]
    fn constant_third_order_tensor_keeps_k1_solution() {
        let b = bundle(4, 27.0, 0.5, 1);
        let mut tensors = b.tensors().to_vec();
        tensors.push(CollisionErrorTensor::constant(3, 4, 0.3).unwrap());
        let b2 = ObjectiveBundle::from_tensors(
            b.grid().clone(),
            TrafficModel::new(0.5, 2).unwrap(),
            *b.block(),
            tensors,
        )
        .unwrap();
        let (p1, _) = optimize_k1(&b).unwrap();
        let (p, trace) = optimize_iterative(&b2, &OptimizerConfig::default()).unwrap();
        assert!(trace.converged);
        assert!(p.linf_distance(&p1) < 1e-9);
        assert!(trace.records[1].distribution.iter().zip(p1.probs()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn iterative_q4_k2_converges_and_improves() {
        let b = bundle(4, 27.0, 0.5, 2);
        let (p, trace) = optimize_iterative(&b, &OptimizerConfig::default()).unwrap();
        assert!(trace.converged, "{trace}");
        assert!(trace.fixed_point_residual() < 1e-6);
        assert!(trace.iterations() <= 51);
        let best = truncated_blep(&p, &b).unwrap();
        assert!(best <= trace.records[0].true_objective);
        check_constraints(&p, b.grid());
    }

    #[test]
    fn k_cap_truncates() {
        let b = bundle(4, 27.0, 0.5, 2);
        let cfg = OptimizerConfig {
            k_cap: Some(1),
            ..OptimizerConfig::default()
        };
        let (p, trace) = optimize_iterative(&b, &cfg).unwrap();
        assert_eq!(trace.iterations(), 1);
        let (p1, _) = optimize_k1(&b).unwrap();
        assert_eq!(p, p1);
    }

    #[test]
    fn redistribution_arithmetic() {
        let p = LevelDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
        let all = UserPowerConstraint::new(vec![0, 1, 2], ConstraintReason::MaxPowerCap, 3).unwrap();
        assert_eq!(redistribute(&p, &all).unwrap(), p);
        let two = UserPowerConstraint::new(vec![0, 1], ConstraintReason::MaxPowerCap, 3).unwrap();
        let r = redistribute(&p, &two).unwrap();
        assert_relative_eq!(r.probs()[0], 0.625, epsilon = 1e-15);
        assert_relative_eq!(r.probs()[1], 0.375, epsilon = 1e-15);
        assert_eq!(r.probs()[2], 0.0);
        let p = LevelDistribution::new(vec![0.0, 0.0, 1.0]).unwrap();
        let r = redistribute(&p, &two).unwrap();
        assert_eq!(r.probs(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn empty_allowed_set_rejected() {
        assert!(UserPowerConstraint::new(vec![], ConstraintReason::MaxPowerCap, 3).is_err());
        assert!(UserPowerConstraint::new(vec![3], ConstraintReason::MaxPowerCap, 3).is_err());
        let grid = build_snr_grid(15.0, 1.5, 13).unwrap();
        assert!(UserPowerConstraint::max_snr_db(&grid, 10.0).is_err());
        assert_eq!(UserPowerConstraint::max_snr_db(&grid, 15.0).unwrap().allowed(), &[0]);
        assert_eq!(UserPowerConstraint::min_snr_db(&grid, 33.0).unwrap().allowed(), &[12]);
    }

    #[test]
    fn single_allowed_level_is_unit_mass() {
        let b = bundle(5, 27.0, 0.5, 1);
        let (opt, _) = optimize_k1(&b).unwrap();
        let c = UserPowerConstraint::new(vec![0], ConstraintReason::MaxPowerCap, 5).unwrap();
        let s = optimize_constrained_user_lp(&c, &opt, &b).unwrap();
        assert_eq!(s.distribution.probs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unconstrained_lp_improves_on_optimum() {
        let b = bundle(6, 30.0, 0.5, 1);
        let (opt, _) = optimize_k1(&b).unwrap();
        let all = UserPowerConstraint::new((0..6).collect(), ConstraintReason::MaxPowerCap, 6).unwrap();
        let s = optimize_constrained_user_lp(&all, &opt, &b).unwrap();
        assert!(s.c2_imposed);
        check_constraints(&s.distribution, b.grid());
        let base = tagged_blep(&opt, &opt, &b).unwrap();
        assert!(s.blep <= base * (1.0 + 1e-12), "{} vs {base}", s.blep);
    }

    #[test]
    fn lp_cost_is_gradient_slice() {
        let b = bundle(4, 27.0, 0.5, 2);
        let others = LevelDistribution::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let o = others.probs();
        // tagged user on `x`, everyone else on `others`, by explicit enumeration
        let f = |x: &[f64]| {
            let mut total = 0.0;
            for (k, t) in b.tensors().iter().enumerate() {
                let mut idx = vec![0usize; k + 1];
                loop {
                    let w: f64 = idx[1..].iter().map(|&i| o[i]).product();
                    total += b.traffic().weight(k) * x[idx[0]] * w * t.get(&idx);
                    let mut pos = 0;
                    while pos <= k {
                        idx[pos] += 1;
                        if idx[pos] < 4 {
                            break;
                        }
                        idx[pos] = 0;
                        pos += 1;
                    }
                    if pos > k {
                        break;
                    }
                }
            }
            total
        };
        let cost = tagged_cost(&others, &b).unwrap();
        let h = 1e-6;
        for q in 0..4 {
            let mut up = o.to_vec();
            let mut down = o.to_vec();
            up[q] += h;
            down[q] -= h;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            assert!((fd - cost[q]).abs() < 1e-8, "{q}: {fd} vs {}", cost[q]);
        }
        assert_relative_eq!(f(o), tagged_blep(&others, &others, &b).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn policy_drop_relaxes() {
        let b = bundle(8, 33.0, 0.5, 1);
        let (opt, _) = optimize_k1(&b).unwrap();
        let c = UserPowerConstraint::max_snr_db(b.grid(), 28.0).unwrap();
        let imposed = optimize_constrained_user_lp_with(&c, &opt, &b, C2Policy::ImposeWhenFeasible).unwrap();
        let dropped = optimize_constrained_user_lp_with(&c, &opt, &b, C2Policy::Drop).unwrap();
        assert!(!dropped.c2_imposed);
        assert!(dropped.blep <= imposed.blep + 1e-15);
        let red = redistribute(&opt, &c).unwrap();
        assert!(dropped.blep <= tagged_blep(&red, &opt, &b).unwrap() + 1e-15);
    }
}
