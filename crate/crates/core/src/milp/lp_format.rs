//! CPLEX LP text export for debugging.

use std::fmt::Write;

use super::{LinExpr, MilpModel, VarKind};

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect()
}

fn var_name(model: &MilpModel, k: usize) -> String {
    format!("{}#{k}", sanitize(&model.vars()[k].name))
}

fn write_expr(out: &mut String, model: &MilpModel, e: &LinExpr) {
    if e.terms().is_empty() {
        out.push_str(" 0");
    }
    for &(v, c) in e.terms() {
        let sign = if c < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", c.abs(), var_name(model, v.index()));
    }
}

fn bound(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

/// Render the model in LP format, one constraint per line.
pub fn write_lp(model: &MilpModel) -> String {
    let mut out = String::new();
    out.push_str("\\ big-M ");
    let _ = writeln!(out, "{}", model.big_m());
    out.push_str("Minimize\n obj:");
    write_expr(&mut out, model, model.objective());
    if model.objective().constant_part() != 0.0 {
        let _ = write!(out, " + {}", model.objective().constant_part());
    }
    out.push_str("\nSubject To\n");
    for (k, c) in model.constraints().iter().enumerate() {
        let _ = write!(out, " {}#{k}:", sanitize(&c.name));
        write_expr(&mut out, model, &c.expr);
        let _ = writeln!(out, " {} {}", c.sense, c.rhs);
    }
    out.push_str("Bounds\n");
    for (k, info) in model.vars().iter().enumerate() {
        if info.kind == VarKind::Continuous {
            let _ = writeln!(out, " {} <= {} <= {}", bound(info.lo), var_name(model, k), bound(info.hi));
        }
    }
    let bins: Vec<String> = (0..model.var_count())
        .filter(|&k| model.vars()[k].kind == VarKind::Binary)
        .map(|k| var_name(model, k))
        .collect();
    if !bins.is_empty() {
        out.push_str("Binaries\n");
        for b in bins {
            let _ = writeln!(out, " {b}");
        }
    }
    out.push_str("End\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_sections() {
        let mut m = MilpModel::default();
        let x = m.add_continuous("x", 0.0, 2.0);
        let b = m.add_binary("b");
        m.add_le("cap", x + b * 3.0, 4.0);
        m.set_objective(x - b);
        let text = write_lp(&m);
        assert!(text.contains("Minimize\n obj: + 1 x#0 - 1 b#1"));
        assert!(text.contains(" cap#0: + 1 x#0 + 3 b#1 <= 4"));
        assert!(text.contains(" 0 <= x#0 <= 2"));
        assert!(text.contains("Binaries\n b#1"));
        assert!(text.ends_with("End\n"));
    }
}
