//! Solver-agnostic MILP model: continuous and binary variables, linear
//! constraints, a linear objective to minimize, and the big-M constant used by
//! the encoders.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod branch;
pub mod encode;
#[cfg(feature = "highs")]
mod highs_backend;
mod lp_format;

pub use branch::BranchAndBound;
pub use encode::*;
#[cfg(feature = "highs")]
pub use highs_backend::HighsSolver;
pub use lp_format::write_lp;

pub const DEFAULT_BIG_M: f64 = 1e4;
pub const FEAS_TOL: f64 = 1e-6;
pub const INT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("variable {0} is not registered in this model")]
    UnknownVar(u32),
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("variable {name} has empty bounds [{lo}, {hi}]")]
    EmptyBounds { name: String, lo: f64, hi: f64 },
    #[error("big-M {big_m} is smaller than the required {required} ({context})")]
    BigMTooSmall {
        big_m: f64,
        required: f64,
        context: String,
    },
    #[error("big-M constraint {0} involves an unbounded expression")]
    UnboundedBigM(String),
    #[error("solver backend {0} is not available in this build")]
    BackendUnavailable(&'static str),
    #[error("solver failure: {0}")]
    Solver(String),
}

/// Opaque variable handle; only meaningful for the model that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub kind: VarKind,
    pub lo: f64,
    pub hi: f64,
    /// Branching priority for the fallback search; higher branches first.
    pub priority: i32,
}

/// `Σ coeff·var + constant`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    terms: Vec<(Var, f64)>,
    constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(v: Var, c: f64) -> Self {
        Self {
            terms: vec![(v, c)],
            constant: 0.0,
        }
    }

    /// `Σ coeffs[k]·vars[k]`.
    pub fn weighted<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a LinExpr, f64)>,
    {
        let mut out = LinExpr::new();
        for (e, c) in pairs {
            out.add_scaled(e, c);
        }
        out
    }

    pub fn add_term(&mut self, v: Var, c: f64) -> &mut Self {
        self.terms.push((v, c));
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_scaled(&mut self, other: &LinExpr, c: f64) -> &mut Self {
        self.terms.extend(other.terms.iter().map(|&(v, k)| (v, k * c)));
        self.constant += other.constant * c;
        self
    }

    pub fn terms(&self) -> &[(Var, f64)] {
        &self.terms
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    /// Merge duplicate variables and drop zero coefficients.
    pub fn normalized(&self) -> LinExpr {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(Var, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|t| t.1 != 0.0);
        LinExpr {
            terms: merged,
            constant: self.constant,
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|&(v, c)| c * values[v.index()])
                .sum::<f64>()
    }
}

impl From<Var> for LinExpr {
    fn from(v: Var) -> Self {
        LinExpr::term(v, 1.0)
    }
}

impl From<f64> for LinExpr {
    fn from(c: f64) -> Self {
        LinExpr::constant(c)
    }
}

impl From<&LinExpr> for LinExpr {
    fn from(e: &LinExpr) -> Self {
        e.clone()
    }
}

impl<T: Into<LinExpr>> Add<T> for LinExpr {
    type Output = LinExpr;
    fn add(mut self, rhs: T) -> LinExpr {
        self += rhs;
        self
    }
}

impl<T: Into<LinExpr>> AddAssign<T> for LinExpr {
    fn add_assign(&mut self, rhs: T) {
        let rhs = rhs.into();
        self.terms.extend(rhs.terms);
        self.constant += rhs.constant;
    }
}

impl<T: Into<LinExpr>> Sub<T> for LinExpr {
    type Output = LinExpr;
    fn sub(mut self, rhs: T) -> LinExpr {
        self -= rhs;
        self
    }
}

impl<T: Into<LinExpr>> SubAssign<T> for LinExpr {
    fn sub_assign(&mut self, rhs: T) {
        let rhs = rhs.into();
        self.add_scaled(&rhs, -1.0);
    }
}

impl Mul<f64> for LinExpr {
    type Output = LinExpr;
    fn mul(mut self, rhs: f64) -> LinExpr {
        for t in &mut self.terms {
            t.1 *= rhs;
        }
        self.constant *= rhs;
        self
    }
}

impl Mul<f64> for Var {
    type Output = LinExpr;
    fn mul(self, rhs: f64) -> LinExpr {
        LinExpr::term(self, rhs)
    }
}

impl Neg for LinExpr {
    type Output = LinExpr;
    fn neg(self) -> LinExpr {
        self * -1.0
    }
}

impl<T: Into<LinExpr>> Add<T> for Var {
    type Output = LinExpr;
    fn add(self, rhs: T) -> LinExpr {
        LinExpr::from(self) + rhs
    }
}

impl<T: Into<LinExpr>> Sub<T> for Var {
    type Output = LinExpr;
    fn sub(self, rhs: T) -> LinExpr {
        LinExpr::from(self) - rhs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

/// `expr ⊲ rhs`, with `expr` holding no constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub expr: LinExpr,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.expr.eval(values);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MilpModel {
    vars: Vec<VarInfo>,
    constraints: Vec<Constraint>,
    objective: LinExpr,
    big_m: f64,
    required_big_m: f64,
    required_context: String,
    unbounded_big_m: Option<String>,
}

impl Default for MilpModel {
    fn default() -> Self {
        Self::new(DEFAULT_BIG_M)
    }
}

impl MilpModel {
    pub fn new(big_m: f64) -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
            objective: LinExpr::new(),
            big_m,
            required_big_m: 0.0,
            required_context: String::new(),
            unbounded_big_m: None,
        }
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    pub fn required_big_m(&self) -> f64 {
        self.required_big_m
    }

    pub fn vars(&self) -> &[VarInfo] {
        &self.vars
    }

    pub fn var_info(&self, v: Var) -> &VarInfo {
        &self.vars[v.index()]
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn binary_count(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lo: f64, hi: f64) -> Var {
        let (lo, hi) = match kind {
            VarKind::Binary => (lo.max(0.0), hi.min(1.0)),
            VarKind::Continuous => (lo, hi),
        };
        self.vars.push(VarInfo {
            name: name.into(),
            kind,
            lo,
            hi,
            priority: 0,
        });
        Var(self.vars.len() as u32 - 1)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lo: f64, hi: f64) -> Var {
        self.add_var(name, VarKind::Continuous, lo, hi)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> Var {
        self.add_var(name, VarKind::Binary, 0.0, 1.0)
    }

    pub fn add_fixed(&mut self, name: impl Into<String>, value: f64) -> Var {
        self.add_var(name, VarKind::Continuous, value, value)
    }

    pub fn set_bounds(&mut self, v: Var, lo: f64, hi: f64) {
        let info = &mut self.vars[v.index()];
        info.lo = lo;
        info.hi = hi;
    }

    pub fn set_priority(&mut self, v: Var, priority: i32) {
        self.vars[v.index()].priority = priority;
    }

    pub fn fix(&mut self, v: Var, value: f64) {
        self.set_bounds(v, value, value);
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        lhs: impl Into<LinExpr>,
        sense: Sense,
        rhs: impl Into<LinExpr>,
    ) {
        let mut expr = lhs.into() - rhs.into();
        let rhs = -expr.constant;
        expr.constant = 0.0;
        self.constraints.push(Constraint {
            name: name.into(),
            expr: expr.normalized(),
            sense,
            rhs,
        });
    }

    pub fn add_le(&mut self, name: impl Into<String>, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.add_constraint(name, lhs, Sense::Le, rhs);
    }

    pub fn add_ge(&mut self, name: impl Into<String>, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.add_constraint(name, lhs, Sense::Ge, rhs);
    }

    pub fn add_eq(&mut self, name: impl Into<String>, lhs: impl Into<LinExpr>, rhs: impl Into<LinExpr>) {
        self.add_constraint(name, lhs, Sense::Eq, rhs);
    }

    pub fn set_objective(&mut self, obj: impl Into<LinExpr>) {
        self.objective = obj.into().normalized();
    }

    pub fn add_objective(&mut self, obj: impl Into<LinExpr>) {
        let total = std::mem::take(&mut self.objective) + obj.into();
        self.objective = total.normalized();
    }

    /// Interval of `expr` over the variable box.
    pub fn expr_range(&self, expr: &LinExpr) -> (f64, f64) {
        let (mut lo, mut hi) = (expr.constant, expr.constant);
        for &(v, c) in &expr.terms {
            let info = &self.vars[v.index()];
            if c > 0.0 {
                lo += c * info.lo;
                hi += c * info.hi;
            } else if c < 0.0 {
                lo += c * info.hi;
                hi += c * info.lo;
            }
        }
        (lo, hi)
    }

    /// Record that a big-M row needs `M ≥ max(expr)` to be a pure relaxation.
    pub fn require_big_m(&mut self, expr: &LinExpr, context: &str) {
        let (_, hi) = self.expr_range(expr);
        if !hi.is_finite() {
            if self.unbounded_big_m.is_none() {
                self.unbounded_big_m = Some(context.to_string());
            }
            return;
        }
        if hi > self.required_big_m {
            self.required_big_m = hi;
            self.required_context = context.to_string();
        }
    }

    pub fn validate(&self) -> Result<(), MilpError> {
        if !(self.big_m.is_finite() && self.big_m > 0.0) {
            return Err(MilpError::NonFinite("big-M".into()));
        }
        for info in &self.vars {
            if info.lo.is_nan() || info.hi.is_nan() || info.lo > info.hi {
                return Err(MilpError::EmptyBounds {
                    name: info.name.clone(),
                    lo: info.lo,
                    hi: info.hi,
                });
            }
        }
        let n = self.vars.len() as u32;
        let check = |e: &LinExpr, what: &str| -> Result<(), MilpError> {
            for &(v, c) in &e.terms {
                if v.0 >= n {
                    return Err(MilpError::UnknownVar(v.0));
                }
                if !c.is_finite() {
                    return Err(MilpError::NonFinite(what.to_string()));
                }
            }
            if !e.constant.is_finite() {
                return Err(MilpError::NonFinite(what.to_string()));
            }
            Ok(())
        };
        for c in &self.constraints {
            check(&c.expr, &c.name)?;
            if !c.rhs.is_finite() {
                return Err(MilpError::NonFinite(c.name.clone()));
            }
        }
        check(&self.objective, "objective")?;
        if let Some(ctx) = &self.unbounded_big_m {
            return Err(MilpError::UnboundedBigM(ctx.clone()));
        }
        if self.required_big_m > self.big_m {
            return Err(MilpError::BigMTooSmall {
                big_m: self.big_m,
                required: self.required_big_m,
                context: self.required_context.clone(),
            });
        }
        Ok(())
    }

    /// Largest bound or constraint violation and largest integrality error
    /// of an assignment.
    pub fn check_assignment(&self, values: &[f64]) -> (f64, f64) {
        let mut viol: f64 = 0.0;
        let mut int_err: f64 = 0.0;
        for (k, info) in self.vars.iter().enumerate() {
            let x = values[k];
            viol = viol.max(info.lo - x).max(x - info.hi);
            if info.kind == VarKind::Binary {
                int_err = int_err.max((x - x.round()).abs());
            }
        }
        for c in &self.constraints {
            viol = viol.max(c.violation(values));
        }
        (viol, int_err)
    }

    /// Names of constraints violated by more than `tol`.
    pub fn violated(&self, values: &[f64], tol: f64) -> Vec<&str> {
        self.constraints
            .iter()
            .filter(|c| c.violation(values) > tol)
            .map(|c| c.name.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Stopped by the time limit; `values` holds the incumbent if one exists.
    TimeLimit,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: SolveStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub nodes: usize,
    pub elapsed: Duration,
}

impl MilpSolution {
    pub fn infeasible(nodes: usize, elapsed: Duration) -> Self {
        Self {
            status: SolveStatus::Infeasible,
            values: Vec::new(),
            objective: f64::INFINITY,
            nodes,
            elapsed,
        }
    }

    pub fn has_values(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    pub fn binary(&self, v: Var) -> bool {
        self.values[v.index()] > 0.5
    }

    pub fn eval(&self, e: &LinExpr) -> f64 {
        e.eval(&self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub time_limit: Option<Duration>,
    /// Relative optimality gap at which the search stops.
    pub rel_gap: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            time_limit: None,
            rel_gap: 1e-9,
        }
    }
}

impl SolveOptions {
    pub fn with_time_limit(secs: f64) -> Self {
        Self {
            time_limit: Some(Duration::from_secs_f64(secs)),
            ..Self::default()
        }
    }
}

pub trait MilpSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, model: &MilpModel, options: &SolveOptions) -> Result<MilpSolution, MilpError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverBackend {
    /// Built-in branch and bound.
    #[default]
    Fallback,
    /// HiGHS, when compiled in.
    External,
}

impl SolverBackend {
    pub fn instantiate(self) -> Result<Box<dyn MilpSolver>, MilpError> {
        match self {
            SolverBackend::Fallback => Ok(Box::new(BranchAndBound::default())),
            #[cfg(feature = "highs")]
            SolverBackend::External => Ok(Box::new(HighsSolver::default())),
            #[cfg(not(feature = "highs"))]
            SolverBackend::External => Err(MilpError::BackendUnavailable("highs")),
        }
    }

    pub fn is_available(self) -> bool {
        match self {
            SolverBackend::Fallback => true,
            SolverBackend::External => cfg!(feature = "highs"),
        }
    }
}

impl std::str::FromStr for SolverBackend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fallback" => Ok(SolverBackend::Fallback),
            "external" | "highs" => Ok(SolverBackend::External),
            other => Err(format!("unknown solver '{other}' (expected fallback or external)")),
        }
    }
}

/// Solve with the built-in fallback.
pub fn solve(model: &MilpModel, time_limit: Option<Duration>) -> Result<MilpSolution, MilpError> {
    BranchAndBound::default().solve(
        model,
        &SolveOptions {
            time_limit,
            ..SolveOptions::default()
        },
    )
}
