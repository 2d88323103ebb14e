//! Linear encodings of absolute values, approximated norm bounds and convex
//! hull containment/exclusion.

use crate::geometry::{AffineFace, ApproxSide, ConvexRegion, PolyApprox};

use super::{LinExpr, MilpModel, Var};

pub type Vec3Expr = [LinExpr; 3];

pub fn vec3(x: impl Into<LinExpr>, y: impl Into<LinExpr>, z: impl Into<LinExpr>) -> Vec3Expr {
    [x.into(), y.into(), z.into()]
}

/// `c_x·v_x + c_y·v_y + c_z·v_z + c0·offset_weight`.
fn face_expr(face: &AffineFace, v: &Vec3Expr, with_offset: bool) -> LinExpr {
    let mut e = LinExpr::new();
    e.add_scaled(&v[0], face.cx);
    e.add_scaled(&v[1], face.cy);
    e.add_scaled(&v[2], face.cz);
    if with_offset {
        e.add_constant(face.c0);
    }
    e
}

/// Slack `a_s ≥ |a|` via `-a_s ≤ a ≤ a_s`; bounded by the range of `a`.
pub fn encode_abs(model: &mut MilpModel, a: impl Into<LinExpr>, name: &str) -> Var {
    let a = a.into();
    let (lo, hi) = model.expr_range(&a);
    let cap = lo.abs().max(hi.abs());
    let s = model.add_continuous(format!("{name}.abs"), 0.0, cap);
    model.add_le(format!("{name}.abs+"), a.clone(), s);
    model.add_ge(format!("{name}.abs-"), a, LinExpr::from(s) * -1.0);
    s
}

/// Scale applied to a lower bound. The polygon's largest face value never
/// exceeds the true norm, so the unscaled bound is already conservative;
/// the `Outer` side admits points down to `bound·c_in_inner`.
pub fn lower_bound_scale(approx: &PolyApprox, side: ApproxSide) -> f64 {
    match side {
        ApproxSide::Inner => 1.0,
        ApproxSide::Outer => approx.c_in_inner(),
    }
}

/// `f_h(vec) ≤ bound·c_in` for every face, relaxed by `M·(1 - relax)` when a
/// relaxation expression is supplied (`relax = 1` keeps the bound active).
pub fn encode_norm_ub(
    model: &mut MilpModel,
    vec: &Vec3Expr,
    approx: &PolyApprox,
    side: ApproxSide,
    bound: impl Into<LinExpr>,
    relax: Option<LinExpr>,
    name: &str,
) {
    let bound = bound.into() * approx.c_in(side);
    let m = model.big_m();
    for (h, face) in approx.faces().iter().enumerate() {
        let lhs = face_expr(face, vec, false) - bound.clone();
        let row = format!("{name}.ub{h}");
        match &relax {
            None => model.add_le(row, lhs, 0.0),
            Some(r) => {
                model.require_big_m(&lhs, &row);
                model.add_le(row, lhs, (LinExpr::constant(1.0) - r.clone()) * m);
            }
        }
    }
}

/// `f_h(vec) ≥ bound·s - M·b_h` for every face with `Σ b_h ≤ N_f - 1`.
/// Returns the face binaries (`b_h = 0` marks an active face).
pub fn encode_norm_lb(
    model: &mut MilpModel,
    vec: &Vec3Expr,
    approx: &PolyApprox,
    side: ApproxSide,
    bound: impl Into<LinExpr>,
    name: &str,
) -> Vec<Var> {
    let bound = bound.into() * lower_bound_scale(approx, side);
    let m = model.big_m();
    let mut binaries = Vec::with_capacity(approx.face_count());
    let mut sum = LinExpr::new();
    for (h, face) in approx.faces().iter().enumerate() {
        let b = model.add_binary(format!("{name}.b{h}"));
        let gap = bound.clone() - face_expr(face, vec, false);
        let row = format!("{name}.lb{h}");
        model.require_big_m(&gap, &row);
        model.add_ge(row, face_expr(face, vec, false) + b * m, bound.clone());
        sum.add_term(b, 1.0);
        binaries.push(b);
    }
    model.add_le(format!("{name}.card"), sum, (approx.face_count() - 1) as f64);
    binaries
}

/// `d_h(p) ≤ δ` for every face of the region.
pub fn encode_hull_inside(model: &mut MilpModel, p: &Vec3Expr, region: &ConvexRegion, delta: f64, name: &str) {
    for (h, face) in region.faces().iter().enumerate() {
        model.add_le(format!("{name}.in{h}"), face_expr(face, p, true), delta);
    }
}

/// `d_h(p) ≥ δ - M·b_h` for every face with `Σ b_h ≤ N_f - 1`.
pub fn encode_hull_outside(
    model: &mut MilpModel,
    p: &Vec3Expr,
    region: &ConvexRegion,
    delta: f64,
    name: &str,
) -> Vec<Var> {
    let m = model.big_m();
    let mut binaries = Vec::with_capacity(region.face_count());
    let mut sum = LinExpr::new();
    for (h, face) in region.faces().iter().enumerate() {
        let b = model.add_binary(format!("{name}.b{h}"));
        let d = face_expr(face, p, true);
        let row = format!("{name}.out{h}");
        model.require_big_m(&(LinExpr::constant(delta) - d.clone()), &row);
        model.add_ge(row, d + b * m, delta);
        sum.add_term(b, 1.0);
        binaries.push(b);
    }
    model.add_le(format!("{name}.card"), sum, (region.face_count() - 1) as f64);
    binaries
}

/// Corner cutting between consecutive face encodings:
/// `b_now_h + b_next_h ≤ 2·c_h` and `Σ c_h ≤ N_f - 1`, so at least one face
/// separates both samples. Accepts constants for already-known binaries.
pub fn encode_corner_cutting(model: &mut MilpModel, b_now: &[LinExpr], b_next: &[LinExpr], name: &str) -> Vec<Var> {
    assert_eq!(b_now.len(), b_next.len(), "face counts differ");
    let mut cs = Vec::with_capacity(b_now.len());
    let mut sum = LinExpr::new();
    for h in 0..b_now.len() {
        let c = model.add_binary(format!("{name}.c{h}"));
        model.add_le(format!("{name}.cc{h}"), b_now[h].clone() + b_next[h].clone(), c * 2.0);
        sum.add_term(c, 1.0);
        cs.push(c);
    }
    model.add_le(format!("{name}.card"), sum, (b_now.len() - 1) as f64);
    cs
}
