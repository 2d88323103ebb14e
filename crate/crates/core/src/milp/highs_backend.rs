//! Adapter for the HiGHS MIP solver.

use std::time::Instant;

use highs::{HighsModelStatus, RowProblem, Sense as HighsSense};

use super::{MilpError, MilpModel, MilpSolution, MilpSolver, Sense, SolveOptions, SolveStatus, VarKind};

const TINY: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default)]
pub struct HighsSolver {
    pub verbose: bool,
}

impl MilpSolver for HighsSolver {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn solve(&self, model: &MilpModel, options: &SolveOptions) -> Result<MilpSolution, MilpError> {
        model.validate()?;
        let start = Instant::now();
        let mut pb = RowProblem::default();
        let mut cost = vec![0.0; model.var_count()];
        for &(v, c) in model.objective().terms() {
            cost[v.index()] += c;
        }
        let cols: Vec<_> = model
            .vars()
            .iter()
            .zip(&cost)
            .map(|(info, &c)| pb.add_column_with_integrality(c, info.lo..=info.hi, info.kind == VarKind::Binary))
            .collect();
        for c in model.constraints() {
            // HiGHS drops entries this small anyway, with a warning per model.
            let row: Vec<_> = c
                .expr
                .terms()
                .iter()
                .filter(|&&(_, a)| a.abs() > TINY)
                .map(|&(v, a)| (cols[v.index()], a))
                .collect();
            match c.sense {
                Sense::Le => pb.add_row(..=c.rhs, row),
                Sense::Ge => pb.add_row(c.rhs.., row),
                Sense::Eq => pb.add_row(c.rhs..=c.rhs, row),
            }
        }
        let mut hm = pb.optimise(HighsSense::Minimise);
        hm.set_option("output_flag", self.verbose);
        hm.set_option("threads", 1);
        hm.set_option("random_seed", 0);
        hm.set_option("mip_rel_gap", options.rel_gap.max(1e-9));
        if let Some(t) = options.time_limit {
            hm.set_option("time_limit", t.as_secs_f64());
        }
        let solved = hm.try_solve().map_err(|e| MilpError::Solver(format!("{e:?}")))?;
        let status = match solved.status() {
            HighsModelStatus::Optimal => SolveStatus::Optimal,
            HighsModelStatus::Infeasible => SolveStatus::Infeasible,
            HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => SolveStatus::Unbounded,
            HighsModelStatus::ReachedTimeLimit
            | HighsModelStatus::ReachedIterationLimit
            | HighsModelStatus::ReachedSolutionLimit
            | HighsModelStatus::ReachedInterrupt => SolveStatus::TimeLimit,
            HighsModelStatus::ModelEmpty => SolveStatus::Optimal,
            other => return Err(MilpError::Solver(format!("HiGHS status {other:?}"))),
        };
        let mut values = Vec::new();
        if matches!(status, SolveStatus::Optimal | SolveStatus::TimeLimit) {
            let cols = solved.get_solution().columns().to_vec();
            if cols.len() == model.var_count() && cols.iter().all(|v| v.is_finite()) {
                values = cols;
            }
        }
        if status == SolveStatus::TimeLimit && !values.is_empty() {
            let (viol, _) = model.check_assignment(&values);
            if viol > 1e-5 {
                values.clear();
            }
        }
        for (k, info) in model.vars().iter().enumerate() {
            if let Some(x) = values.get_mut(k) {
                *x = x.clamp(info.lo, info.hi);
                if info.kind == VarKind::Binary {
                    *x = x.round();
                }
            }
        }
        let objective = if values.is_empty() {
            f64::INFINITY
        } else {
            model.objective().eval(&values)
        };
        Ok(MilpSolution {
            status,
            values,
            objective,
            nodes: 0,
            elapsed: start.elapsed(),
        })
    }
}
