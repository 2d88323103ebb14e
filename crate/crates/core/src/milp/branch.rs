//! Depth-first branch and bound over LP relaxations.
//!
//! Relaxations are solved with `microlp`; children are created by fixing a
//! binary on a clone of the parent's optimal basis, so each child starts
//! from a warm dual simplex. Before the search, big-M rows are tightened
//! against the variable box (coefficient strengthening), which preserves the
//! integer feasible set while making the relaxation much stronger.

use std::time::{Duration, Instant};

use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

use super::{MilpError, MilpModel, MilpSolution, MilpSolver, Sense, SolveOptions, SolveStatus, VarKind, INT_TOL};

#[derive(Debug, Clone, Copy)]
pub struct BranchAndBound {
    /// Hard cap on explored nodes.
    pub node_limit: usize,
    pub tighten: bool,
}

impl Default for BranchAndBound {
    fn default() -> Self {
        Self {
            node_limit: 2_000_000,
            tighten: true,
        }
    }
}

struct Row {
    terms: Vec<(usize, f64)>,
    sense: Sense,
    rhs: f64,
}

struct Presolved {
    lo: Vec<f64>,
    hi: Vec<f64>,
    rows: Vec<Row>,
    infeasible: bool,
}

fn presolve(model: &MilpModel, tighten: bool) -> Presolved {
    let lo: Vec<f64> = model.vars().iter().map(|v| v.lo).collect();
    let hi: Vec<f64> = model.vars().iter().map(|v| v.hi).collect();
    let is_free_binary = |k: usize| model.vars()[k].kind == VarKind::Binary && lo[k] < hi[k];
    let mut rows = Vec::with_capacity(model.constraints().len());
    let mut infeasible = false;
    for c in model.constraints() {
        let mut terms: Vec<(usize, f64)> = c.expr.terms().iter().map(|&(v, a)| (v.index(), a)).collect();
        let (mut sense, mut rhs) = (c.sense, c.rhs);
        // Fold fixed columns into the right-hand side.
        terms.retain(|&(k, a)| {
            if lo[k] == hi[k] {
                rhs -= a * lo[k];
                false
            } else {
                true
            }
        });
        if sense == Sense::Ge {
            for t in &mut terms {
                t.1 = -t.1;
            }
            rhs = -rhs;
            sense = Sense::Le;
        }
        let tol = 1e-9 * rhs.abs().max(1.0);
        if terms.is_empty() {
            let ok = match sense {
                Sense::Le => 0.0 <= rhs + tol,
                _ => rhs.abs() <= tol,
            };
            infeasible |= !ok;
            continue;
        }
        if sense == Sense::Le {
            let act = |t: &(usize, f64)| if t.1 > 0.0 { t.1 * hi[t.0] } else { t.1 * lo[t.0] };
            let mut maxact: f64 = terms.iter().map(act).sum();
            if maxact <= rhs + tol {
                continue;
            }
            if tighten && maxact.is_finite() {
                for idx in 0..terms.len() {
                    let (k, a) = terms[idx];
                    if !is_free_binary(k) {
                        continue;
                    }
                    let rest = maxact - a.max(0.0);
                    if a > 0.0 {
                        let d = rhs - rest;
                        if d > tol && d < a {
                            terms[idx].1 = a - d;
                            rhs -= d;
                            maxact = rest + (a - d);
                        }
                    } else if a < 0.0 && rest > rhs {
                        let new_a = rhs - rest;
                        if new_a > a + tol {
                            terms[idx].1 = new_a;
                        }
                    }
                }
            }
        }
        rows.push(Row { terms, sense, rhs });
    }
    Presolved {
        lo,
        hi,
        rows,
        infeasible,
    }
}

struct Pending {
    parent: microlp::Solution,
    /// Fixings on the path to the parent.
    fixes: Vec<(usize, f64)>,
    var: usize,
    value: f64,
    bound: f64,
}

/// Outcome of a child relaxation; numerical failures of the warm start are
/// retried on a freshly built LP with the path fixings applied.
fn solve_child(
    bb: &BranchAndBound,
    model: &MilpModel,
    pre: &Presolved,
    parent: microlp::Solution,
    var: microlp::Variable,
    fixes: &[(usize, f64)],
    value: f64,
) -> Result<Option<microlp::Solution>, MilpError> {
    match parent.fix_var(var, value) {
        Ok(outcome) => Ok(outcome.into_solution().ok()),
        Err(microlp::Error::Infeasible) => Ok(None),
        Err(e) => {
            log::debug!("warm child solve failed ({e}); rebuilding");
            let mut lo = pre.lo.clone();
            let mut hi = pre.hi.clone();
            for &(k, v) in fixes {
                lo[k] = v;
                hi[k] = v;
            }
            let (lp, _) = bb.build_lp_with(model, &lo, &hi, &pre.rows);
            match lp.solve() {
                Ok(outcome) => Ok(outcome.into_solution().ok()),
                Err(microlp::Error::Infeasible) => Ok(None),
                Err(e) => {
                    log::warn!("node relaxation failed twice ({e}); node dropped");
                    Ok(None)
                }
            }
        }
    }
}

impl BranchAndBound {
    fn build_lp(&self, model: &MilpModel, pre: &Presolved) -> (Problem, Vec<microlp::Variable>) {
        self.build_lp_with(model, &pre.lo, &pre.hi, &pre.rows)
    }

    fn build_lp_with(&self, model: &MilpModel, lo: &[f64], hi: &[f64], rows: &[Row]) -> (Problem, Vec<microlp::Variable>) {
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let mut cost = vec![0.0; model.var_count()];
        for &(v, c) in model.objective().terms() {
            cost[v.index()] += c;
        }
        let vars: Vec<microlp::Variable> = (0..model.var_count())
            .map(|k| lp.add_var(cost[k], (lo[k], hi[k])))
            .collect();
        for row in rows {
            let mut e = LinearExpr::empty();
            for &(k, a) in &row.terms {
                e.add(vars[k], a);
            }
            let op = match row.sense {
                Sense::Le => ComparisonOp::Le,
                Sense::Ge => ComparisonOp::Ge,
                Sense::Eq => ComparisonOp::Eq,
            };
            lp.add_constraint(e, op, row.rhs);
        }
        (lp, vars)
    }
}

/// Highest-priority fractional binary, most fractional within the class.
fn select_branch(
    sol: &microlp::Solution,
    vars: &[microlp::Variable],
    binaries: &[(usize, i32)],
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64, i32, f64)> = None;
    for &(k, prio) in binaries {
        let x = sol.var_value_raw(vars[k]);
        let frac = (x - x.round()).abs();
        if frac <= INT_TOL {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, _, bp, bf)) => prio > bp || (prio == bp && frac > bf + 1e-12),
        };
        if better {
            best = Some((k, x, prio, frac));
        }
    }
    best.map(|(k, x, _, _)| (k, x))
}

impl MilpSolver for BranchAndBound {
    fn name(&self) -> &'static str {
        "fallback"
    }

    fn solve(&self, model: &MilpModel, options: &SolveOptions) -> Result<MilpSolution, MilpError> {
        model.validate()?;
        let start = Instant::now();
        let deadline = options.time_limit.map(|t| start + t);
        let out_of_time = || deadline.is_some_and(|d| Instant::now() >= d);
        let pre = presolve(model, self.tighten);
        if pre.infeasible {
            return Ok(MilpSolution::infeasible(0, start.elapsed()));
        }
        let (lp, vars) = self.build_lp(model, &pre);
        let binaries: Vec<(usize, i32)> = (0..model.var_count())
            .filter(|&k| model.vars()[k].kind == VarKind::Binary && pre.lo[k] < pre.hi[k])
            .map(|k| (k, model.vars()[k].priority))
            .collect();

        let root = match lp.solve() {
            Ok(outcome) => match outcome.into_solution() {
                Ok(s) => s,
                Err(_) => {
                    return Ok(finish(model, None, SolveStatus::TimeLimit, 1, start.elapsed()));
                }
            },
            Err(microlp::Error::Infeasible) => return Ok(MilpSolution::infeasible(1, start.elapsed())),
            Err(microlp::Error::Unbounded) => {
                return Ok(MilpSolution {
                    status: SolveStatus::Unbounded,
                    values: Vec::new(),
                    objective: f64::NEG_INFINITY,
                    nodes: 1,
                    elapsed: start.elapsed(),
                })
            }
            Err(e) => return Err(MilpError::Solver(e.to_string())),
        };

        let mut incumbent: Option<(f64, Vec<f64>)> = None;
        let mut nodes = 1usize;
        let mut stack: Vec<Pending> = Vec::new();
        let mut current = Some((root, Vec::new()));
        let mut timed_out = false;

        let cutoff = |inc: &Option<(f64, Vec<f64>)>| -> f64 {
            match inc {
                Some((z, _)) => z - (options.rel_gap * z.abs()).max(1e-9),
                None => f64::INFINITY,
            }
        };

        loop {
            let sol = match current.take() {
                Some(s) => s,
                None => {
                    let Some(p) = stack.pop() else { break };
                    if p.bound >= cutoff(&incumbent) {
                        continue;
                    }
                    if out_of_time() || nodes >= self.node_limit {
                        timed_out = true;
                        break;
                    }
                    nodes += 1;
                    let mut fixes = p.fixes;
                    fixes.push((p.var, p.value));
                    match solve_child(self, model, &pre, p.parent, vars[p.var], &fixes, p.value)? {
                        Some(s) => (s, fixes),
                        None => continue,
                    }
                }
            };
            let (sol, fixes) = sol;
            let obj = sol.objective();
            if obj >= cutoff(&incumbent) {
                continue;
            }
            match select_branch(&sol, &vars, &binaries) {
                None => {
                    let values: Vec<f64> = vars.iter().map(|&v| sol.var_value_raw(v)).collect();
                    log::debug!("incumbent {obj:.6} after {nodes} nodes, {:?}", start.elapsed());
                    incumbent = Some((obj, values));
                }
                Some((k, x)) => {
                    let near = x.round().clamp(0.0, 1.0);
                    let far = 1.0 - near;
                    stack.push(Pending {
                        parent: sol.clone(),
                        fixes: fixes.clone(),
                        var: k,
                        value: far,
                        bound: obj,
                    });
                    if out_of_time() || nodes >= self.node_limit {
                        timed_out = true;
                        break;
                    }
                    nodes += 1;
                    let mut fixes = fixes;
                    fixes.push((k, near));
                    current = solve_child(self, model, &pre, sol, vars[k], &fixes, near)?.map(|s| (s, fixes));
                }
            }
        }

        let status = if timed_out {
            SolveStatus::TimeLimit
        } else if incumbent.is_some() {
            SolveStatus::Optimal
        } else {
            SolveStatus::Infeasible
        };
        Ok(finish(model, incumbent.map(|i| i.1), status, nodes, start.elapsed()))
    }
}

fn finish(
    model: &MilpModel,
    values: Option<Vec<f64>>,
    status: SolveStatus,
    nodes: usize,
    elapsed: Duration,
) -> MilpSolution {
    match values {
        Some(mut values) => {
            for (k, info) in model.vars().iter().enumerate() {
                values[k] = values[k].clamp(info.lo, info.hi);
                if info.kind == VarKind::Binary {
                    values[k] = values[k].round();
                }
            }
            let objective = model.objective().eval(&values);
            MilpSolution {
                status,
                values,
                objective,
                nodes,
                elapsed,
            }
        }
        None if status == SolveStatus::TimeLimit => MilpSolution {
            status,
            values: Vec::new(),
            objective: f64::INFINITY,
            nodes,
            elapsed,
        },
        None => MilpSolution::infeasible(nodes, elapsed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{LinExpr, Var};

    #[test]
    fn tightening_keeps_integer_solutions() {
        // x ≤ 2 + M(1 - b) with x ∈ [0, 5]: tightened coefficient is 3.
        let mut m = MilpModel::new(1e4);
        let x = m.add_continuous("x", 0.0, 5.0);
        let b = m.add_binary("b");
        m.add_le("bigm", x + b * 1e4, 2.0 + 1e4);
        let pre = presolve(&m, true);
        let row = &pre.rows[0];
        let coef = row.terms.iter().find(|t| t.0 == b.index()).unwrap().1;
        assert!((coef - 3.0).abs() < 1e-9, "{coef}");
        assert!((row.rhs - 5.0).abs() < 1e-9);
        // maximize x: b = 0 gives 5
        m.set_objective(LinExpr::from(x) * -1.0);
        let s = BranchAndBound::default().solve(&m, &SolveOptions::default()).unwrap();
        assert!((s.value(x) - 5.0).abs() < 1e-9);
        assert_eq!(s.value(b), 0.0);
    }

    #[test]
    fn negative_coefficient_tightening() {
        // x ≥ 4 - M b  ⇔  -x - M b ≤ -4, x ∈ [0, 5]; valid coefficient is -4.
        let mut m = MilpModel::new(1e4);
        let x = m.add_continuous("x", 0.0, 5.0);
        let b = m.add_binary("b");
        m.add_ge("lb", x + b * 1e4, 4.0);
        let pre = presolve(&m, true);
        let coef = pre.rows[0].terms.iter().find(|t| t.0 == b.index()).unwrap().1;
        assert!((coef + 4.0).abs() < 1e-9, "{coef}");
    }

    #[test]
    fn exhaustive_agreement_small() {
        // min Σ c_k b_k + y with pairwise covering rows
        let mut m = MilpModel::default();
        let b: Vec<Var> = (0..5).map(|k| m.add_binary(format!("b{k}"))).collect();
        let y = m.add_continuous("y", 0.0, 10.0);
        let costs = [3.0, 2.0, 4.0, 1.5, 2.5];
        for k in 0..4 {
            m.add_ge(format!("r{k}"), b[k] + b[k + 1], 1.0);
        }
        m.add_ge("y", LinExpr::from(y) + b[0] * 2.0, 2.5);
        let mut obj = LinExpr::from(y);
        for k in 0..5 {
            obj.add_term(b[k], costs[k]);
        }
        m.set_objective(obj);
        let s = BranchAndBound::default().solve(&m, &SolveOptions::default()).unwrap();
        let mut best = f64::INFINITY;
        for mask in 0..32u32 {
            let v: Vec<f64> = (0..5).map(|k| (mask >> k & 1) as f64).collect();
            if (0..4).all(|k| v[k] + v[k + 1] >= 1.0) {
                let yv = (2.5 - 2.0 * v[0]).max(0.0);
                best = best.min(yv + (0..5).map(|k| costs[k] * v[k]).sum::<f64>());
            }
        }
        assert!((s.objective - best).abs() < 1e-9, "{} vs {best}", s.objective);
    }

    #[test]
    fn time_limit_reports_status() {
        let mut m = MilpModel::default();
        let b: Vec<Var> = (0..30).map(|k| m.add_binary(format!("b{k}"))).collect();
        let mut w = LinExpr::new();
        let mut obj = LinExpr::new();
        for (k, &v) in b.iter().enumerate() {
            w.add_term(v, 1.0 + (k as f64 * 0.37).sin().abs());
            obj.add_term(v, -(1.0 + (k as f64 * 0.71).cos().abs()));
        }
        m.add_le("cap", w, 10.3);
        m.set_objective(obj);
        let s = BranchAndBound::default()
            .solve(&m, &SolveOptions { time_limit: Some(Duration::ZERO), rel_gap: 0.0 })
            .unwrap();
        assert_eq!(s.status, SolveStatus::TimeLimit);
    }
}
