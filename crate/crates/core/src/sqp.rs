//! Dense sequential quadratic programming.
//!
//! Each iteration solves a strictly convex QP (damped-BFGS model of the
//! Lagrangian, linearized constraints, box bounds) and takes a backtracking
//! step on the L1 exact-penalty merit function. When the linearization is
//! inconsistent the QP is relaxed with one elastic variable that scales the
//! violated constraints, so a step always exists. Termination follows the
//! SLSQP rule: constraint violation below `feas_tol` and the optimality
//! measure `|∇fᵀd| + Σ|λ c|` below `opt_tol`.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Smooth constrained program `min f(x)` s.t. `c_eq(x) = 0`, `c_in(x) <= 0`,
/// `lb <= x <= ub`. Jacobians are dense row-major and zero-initialized by the
/// caller.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;
    fn lower_bounds(&self) -> Vec<f64>;
    fn upper_bounds(&self) -> Vec<f64>;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn eq_constraints(&self, x: &[f64], out: &mut [f64]);
    fn eq_jacobian(&self, x: &[f64], jac: &mut [f64]);
    fn ineq_constraints(&self, x: &[f64], out: &mut [f64]);
    fn ineq_jacobian(&self, x: &[f64], jac: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterLimit,
    LineSearchFail,
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    pub opt_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Per-iteration CSV trace destination.
    #[serde(skip)]
    pub trace_path: Option<PathBuf>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            opt_tol: 1e-8,
            feas_tol: 1e-8,
            max_iter: 500,
            trace_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub violation: f64,
    pub kkt: f64,
    pub step_inf: f64,
    pub alpha: f64,
    /// Merit before and after the accepted step, at the same penalty weights.
    pub merit_before: f64,
    pub merit_after: f64,
    pub elastic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub x_opt: Vec<f64>,
    pub objective: f64,
    pub max_constraint_violation: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub status: SolveStatus,
    pub eq_multipliers: Vec<f64>,
    /// Non-negative multipliers of the `c_in <= 0` constraints.
    pub ineq_multipliers: Vec<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    /// Final quasi-Newton matrix (row-major), usable as a warm start.
    #[serde(skip)]
    pub hessian: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn write_trace_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "iteration",
            "objective",
            "violation",
            "kkt",
            "step_inf",
            "alpha",
            "merit_before",
            "merit_after",
            "elastic",
        ])?;
        for r in &self.trace {
            w.write_record(&[
                r.iteration.to_string(),
                format!("{:e}", r.objective),
                format!("{:e}", r.violation),
                format!("{:e}", r.kkt),
                format!("{:e}", r.step_inf),
                format!("{:e}", r.alpha),
                format!("{:e}", r.merit_before),
                format!("{:e}", r.merit_after),
                r.elastic.to_string(),
            ])?;
        }
        w.flush()
    }
}

struct Eval {
    f: f64,
    g: Vec<f64>,
    ce: Vec<f64>,
    je: Vec<f64>,
    ci: Vec<f64>,
    ji: Vec<f64>,
}

impl Eval {
    fn new<P: NlpProblem + ?Sized>(p: &P, x: &[f64]) -> Option<Eval> {
        let (n, me, mi) = (p.num_vars(), p.num_eq(), p.num_ineq());
        let f = p.objective(x);
        let mut ce = vec![0.0; me];
        let mut ci = vec![0.0; mi];
        p.eq_constraints(x, &mut ce);
        p.ineq_constraints(x, &mut ci);
        if !f.is_finite() || ce.iter().chain(&ci).any(|v| !v.is_finite()) {
            return None;
        }
        let mut g = vec![0.0; n];
        let mut je = vec![0.0; me * n];
        let mut ji = vec![0.0; mi * n];
        p.gradient(x, &mut g);
        p.eq_jacobian(x, &mut je);
        p.ineq_jacobian(x, &mut ji);
        if g.iter().chain(&je).chain(&ji).any(|v| !v.is_finite()) {
            return None;
        }
        Some(Eval { f, g, ce, je, ci, ji })
    }

    fn violation(&self) -> f64 {
        let e = self.ce.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        self.ci.iter().fold(e, |m, v| m.max(*v))
    }

    fn merit(&self, rho_e: &[f64], rho_i: &[f64]) -> f64 {
        self.f + penalty(&self.ce, &self.ci, rho_e, rho_i)
    }

    /// Gradient of the Lagrangian `∇f + J_eᵀλ + J_iᵀμ`.
    fn lagrangian_gradient(&self, lam_e: &[f64], lam_i: &[f64]) -> Vec<f64> {
        let n = self.g.len();
        let mut out = self.g.clone();
        for (r, l) in lam_e.iter().enumerate() {
            if *l != 0.0 {
                axpy(*l, &self.je[r * n..(r + 1) * n], &mut out);
            }
        }
        for (r, l) in lam_i.iter().enumerate() {
            if *l != 0.0 {
                axpy(*l, &self.ji[r * n..(r + 1) * n], &mut out);
            }
        }
        out
    }
}

fn penalty(ce: &[f64], ci: &[f64], rho_e: &[f64], rho_i: &[f64]) -> f64 {
    ce.iter().zip(rho_e).map(|(c, r)| r * c.abs()).sum::<f64>()
        + ci.iter().zip(rho_i).map(|(c, r)| r * c.max(0.0)).sum::<f64>()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

struct QpStep {
    d: Vec<f64>,
    lam_e: Vec<f64>,
    lam_i: Vec<f64>,
    /// Elastic relaxation level in [0, 1]; zero for a plain QP step.
    relax: f64,
}

/// Solves the SQP subproblem; falls back to the elastic form when the
/// linearized constraints are inconsistent.
fn subproblem(b: &[f64], ev: &Eval, x: &[f64], lb: &[f64], ub: &[f64]) -> Option<QpStep> {
    plain_qp(b, ev, x, lb, ub).or_else(|| elastic_qp(b, ev, x, lb, ub))
}

struct QpRows {
    amat: Vec<f64>,
    bvec: Vec<f64>,
    meq: usize,
}

fn bound_rows(rows: &mut QpRows, x: &[f64], lb: &[f64], ub: &[f64], width: usize) {
    let n = x.len();
    for j in 0..n {
        if ub[j].is_finite() {
            let mut row = vec![0.0; width];
            row[j] = 1.0;
            rows.amat.extend(row);
            rows.bvec.push(ub[j] - x[j]);
        }
        if lb[j].is_finite() {
            let mut row = vec![0.0; width];
            row[j] = -1.0;
            rows.amat.extend(row);
            rows.bvec.push(x[j] - lb[j]);
        }
    }
}

fn plain_qp(b: &[f64], ev: &Eval, x: &[f64], lb: &[f64], ub: &[f64]) -> Option<QpStep> {
    let n = x.len();
    let (me, mi) = (ev.ce.len(), ev.ci.len());
    let mut rows = QpRows {
        amat: Vec::with_capacity((me + mi + 2 * n) * n),
        bvec: Vec::with_capacity(me + mi + 2 * n),
        meq: me,
    };
    rows.amat.extend_from_slice(&ev.je);
    rows.bvec.extend(ev.ce.iter().map(|c| -c));
    rows.amat.extend_from_slice(&ev.ji);
    rows.bvec.extend(ev.ci.iter().map(|c| -c));
    bound_rows(&mut rows, x, lb, ub, n);

    let mut q = b.to_vec();
    let sol = quadprog::solve_qp(&mut q, &ev.g, &rows.amat, &rows.bvec, rows.meq, false).ok()?;
    if sol.sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let lam = recover_multipliers(b, &ev.g, &rows, &sol.sol, &sol.iact, n);
    Some(QpStep {
        lam_e: lam[..me].to_vec(),
        lam_i: lam[me..me + mi].to_vec(),
        d: sol.sol,
        relax: 0.0,
    })
}

fn elastic_qp(b: &[f64], ev: &Eval, x: &[f64], lb: &[f64], ub: &[f64]) -> Option<QpStep> {
    let n = x.len();
    let w = n + 1;
    let (me, mi) = (ev.ce.len(), ev.ci.len());
    let mut rows = QpRows {
        amat: Vec::with_capacity((me + mi + 2 * w) * w),
        bvec: Vec::new(),
        meq: me,
    };
    // J d + (1 - t) c = 0
    for r in 0..me {
        rows.amat.extend_from_slice(&ev.je[r * n..(r + 1) * n]);
        rows.amat.push(-ev.ce[r]);
        rows.bvec.push(-ev.ce[r]);
    }
    // violated rows relax with t, satisfied rows keep their linearization
    for r in 0..mi {
        rows.amat.extend_from_slice(&ev.ji[r * n..(r + 1) * n]);
        rows.amat.push(if ev.ci[r] > 0.0 { -ev.ci[r] } else { 0.0 });
        rows.bvec.push(-ev.ci[r]);
    }
    let mut xl = x.to_vec();
    xl.push(0.0);
    let mut l2 = lb.to_vec();
    l2.push(0.0);
    let mut u2 = ub.to_vec();
    u2.push(1.0);
    bound_rows(&mut rows, &xl, &l2, &u2, w);

    let mut q = vec![0.0; w * w];
    for i in 0..n {
        q[i * w..i * w + n].copy_from_slice(&b[i * n..(i + 1) * n]);
    }
    q[w * w - 1] = 1.0;
    let mut c = ev.g.clone();
    c.push(1e4 * (1.0 + inf_norm(&ev.g)));
    let qcopy = q.clone();
    let sol = quadprog::solve_qp(&mut q, &c, &rows.amat, &rows.bvec, rows.meq, false).ok()?;
    let lam = recover_multipliers(&qcopy, &c, &rows, &sol.sol, &sol.iact, w);
    let relax = sol.sol[n].clamp(0.0, 1.0);
    Some(QpStep {
        d: sol.sol[..n].to_vec(),
        lam_e: lam[..me].to_vec(),
        lam_i: lam[me..me + mi].to_vec(),
        relax,
    })
}

/// Least-squares multipliers on the QP active set from stationarity
/// `Q d + c + Σ λ_i a_i = 0`; inequality multipliers clamped at zero.
fn recover_multipliers(q: &[f64], c: &[f64], rows: &QpRows, d: &[f64], active: &[usize], n: usize) -> Vec<f64> {
    let total = rows.bvec.len();
    let mut lam = vec![0.0; total];
    if active.is_empty() {
        return lam;
    }
    let mut resid = DVector::from_column_slice(c);
    for i in 0..n {
        resid[i] += dot(&q[i * n..(i + 1) * n], d);
    }
    let k = active.len();
    let a_act = DMatrix::from_fn(n, k, |r, col| rows.amat[active[col] * n + r]);
    let rhs = -resid;
    let normal = a_act.transpose() * &a_act;
    let atb = a_act.transpose() * rhs;
    let sol = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&atb),
        None => match normal.svd(true, true).solve(&atb, 1e-12) {
            Ok(s) => s,
            Err(_) => return lam,
        },
    };
    for (col, &row) in active.iter().enumerate() {
        let v = sol[col];
        lam[row] = if row < rows.meq { v } else { v.max(0.0) };
    }
    lam
}

fn identity(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        b[i * n + i] = 1.0;
    }
    b
}

/// Damped BFGS update (Powell) of a row-major matrix.
fn bfgs_update(b: &mut [f64], s: &[f64], y: &[f64]) {
    let n = s.len();
    let bs: Vec<f64> = (0..n).map(|i| dot(&b[i * n..(i + 1) * n], s)).collect();
    let sbs = dot(s, &bs);
    if !(sbs > 1e-300) {
        return;
    }
    let sy = dot(s, y);
    let theta = if sy >= 0.2 * sbs {
        1.0
    } else {
        0.8 * sbs / (sbs - sy)
    };
    let r: Vec<f64> = y.iter().zip(&bs).map(|(yi, bi)| theta * yi + (1.0 - theta) * bi).collect();
    let sr = dot(s, &r);
    if !(sr > 1e-300) {
        return;
    }
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] += r[i] * r[j] / sr - bs[i] * bs[j] / sbs;
        }
    }
}

fn clamp_into(x: &mut [f64], lb: &[f64], ub: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lb).zip(ub) {
        *v = v.clamp(*l, *u);
    }
}

pub fn solve<P: NlpProblem + ?Sized>(problem: &P, x0: &[f64], opts: &SolverOptions) -> SolveReport {
    solve_warm(problem, x0, opts, None)
}

/// As [`solve`], optionally seeding the quasi-Newton matrix.
pub fn solve_warm<P: NlpProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    opts: &SolverOptions,
    hessian: Option<&[f64]>,
) -> SolveReport {
    let start = Instant::now();
    let n = problem.num_vars();
    let (me, mi) = (problem.num_eq(), problem.num_ineq());
    let lb = problem.lower_bounds();
    let ub = problem.upper_bounds();
    let mut x = x0.to_vec();
    clamp_into(&mut x, &lb, &ub);

    let mut report = SolveReport {
        x_opt: x.clone(),
        objective: f64::NAN,
        max_constraint_violation: f64::INFINITY,
        kkt_residual: f64::INFINITY,
        iterations: 0,
        wall_time_s: 0.0,
        status: SolveStatus::IterLimit,
        eq_multipliers: vec![0.0; me],
        ineq_multipliers: vec![0.0; mi],
        trace: Vec::new(),
        hessian: Vec::new(),
    };

    let Some(mut ev) = Eval::new(problem, &x) else {
        report.status = SolveStatus::LineSearchFail;
        report.wall_time_s = start.elapsed().as_secs_f64();
        return report;
    };
    let warm = hessian.filter(|h| h.len() == n * n);
    let mut b = warm.map(|h| h.to_vec()).unwrap_or_else(|| identity(n));
    let mut fresh_b = warm.is_none();
    let mut scaled = warm.is_some();
    let mut rho_e = vec![0.0; me];
    let mut rho_i = vec![0.0; mi];

    let mut iter = 0;
    while iter < opts.max_iter {
        iter += 1;
        let Some(qp) = subproblem(&b, &ev, &x, &lb, &ub) else {
            if !fresh_b {
                b = identity(n);
                fresh_b = true;
                continue;
            }
            report.status = SolveStatus::Infeasible;
            break;
        };
        let viol = ev.violation();
        let kkt = dot(&ev.g, &qp.d).abs()
            + qp.lam_e.iter().zip(&ev.ce).map(|(l, c)| (l * c).abs()).sum::<f64>()
            + qp.lam_i.iter().zip(&ev.ci).map(|(l, c)| (l * c).abs()).sum::<f64>();
        report.eq_multipliers = qp.lam_e.clone();
        report.ineq_multipliers = qp.lam_i.clone();
        report.kkt_residual = kkt;

        if qp.relax == 0.0 && viol <= opts.feas_tol && kkt <= opts.opt_tol {
            report.status = SolveStatus::Converged;
            report.trace.push(TraceRow {
                iteration: iter,
                objective: ev.f,
                violation: viol,
                kkt,
                step_inf: inf_norm(&qp.d),
                alpha: 0.0,
                merit_before: ev.merit(&rho_e, &rho_i),
                merit_after: ev.merit(&rho_e, &rho_i),
                elastic: false,
            });
            break;
        }
        if qp.relax > 1.0 - 1e-9 && inf_norm(&qp.d) <= 1e-14 * (1.0 + inf_norm(&x)) {
            report.status = SolveStatus::Infeasible;
            break;
        }

        for (r, l) in rho_e.iter_mut().zip(&qp.lam_e) {
            *r = l.abs().max(0.5 * (*r + l.abs()));
        }
        for (r, l) in rho_i.iter_mut().zip(&qp.lam_i) {
            *r = l.abs().max(0.5 * (*r + l.abs()));
        }
        let merit0 = ev.merit(&rho_e, &rho_i);
        let pen0 = penalty(&ev.ce, &ev.ci, &rho_e, &rho_i);
        let mut dphi = dot(&ev.g, &qp.d) - (1.0 - qp.relax) * pen0;
        if dphi >= 0.0 {
            if !fresh_b {
                b = identity(n);
                fresh_b = true;
                continue;
            }
            dphi = -dphi.abs().max(1e-16);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xt: Vec<f64> = x.iter().zip(&qp.d).map(|(xi, di)| xi + alpha * di).collect();
            clamp_into(&mut xt, &lb, &ub);
            match Eval::new(problem, &xt) {
                Some(evt) => {
                    let m = evt.merit(&rho_e, &rho_i);
                    if m <= merit0 + 1e-4 * alpha * dphi {
                        accepted = Some((xt, evt, m));
                        break;
                    }
                    let denom = 2.0 * (m - merit0 - alpha * dphi);
                    let interp = if denom > 0.0 {
                        -dphi * alpha * alpha / denom
                    } else {
                        0.5 * alpha
                    };
                    alpha = interp.clamp(0.1 * alpha, 0.5 * alpha);
                }
                None => alpha *= 0.1,
            }
            if alpha < 1e-12 {
                break;
            }
        }
        let Some((xt, evt, merit1)) = accepted else {
            if !fresh_b {
                b = identity(n);
                fresh_b = true;
                continue;
            }
            report.status = SolveStatus::LineSearchFail;
            break;
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, c)| a - c).collect();
        report.trace.push(TraceRow {
            iteration: iter,
            objective: ev.f,
            violation: viol,
            kkt,
            step_inf: inf_norm(&s),
            alpha,
            merit_before: merit0,
            merit_after: merit1,
            elastic: qp.relax > 0.0,
        });

        let g_old = ev.lagrangian_gradient(&qp.lam_e, &qp.lam_i);
        let g_new = evt.lagrangian_gradient(&qp.lam_e, &qp.lam_i);
        let y: Vec<f64> = g_new.iter().zip(&g_old).map(|(a, c)| a - c).collect();
        if !scaled {
            let sy = dot(&s, &y);
            let yy = dot(&y, &y);
            if sy > 1e-300 && yy > 0.0 {
                let k = yy / sy;
                b.iter_mut().for_each(|v| *v *= k);
                scaled = true;
            }
        }
        bfgs_update(&mut b, &s, &y);
        fresh_b = false;
        x = xt;
        ev = evt;
    }

    report.iterations = iter;
    report.objective = ev.f;
    report.max_constraint_violation = ev.violation();
    report.x_opt = x;
    report.hessian = b;
    report.wall_time_s = start.elapsed().as_secs_f64();
    if let Some(path) = &opts.trace_path {
        if let Err(e) = report.write_trace_csv(path) {
            log::warn!("could not write solver trace to {}: {e}", path.display());
        }
    }
    report
}
