use std::fmt::Write as _;

use super::LinearProgram;

/// Renders the program in fixed-column MPS. The objective row is empty; free
/// variables get an `FR` bound and bounded ones an `LO` bound.
pub fn write_mps(lp: &LinearProgram, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "NAME          {name}");
    s.push_str("ROWS\n");
    s.push_str(" N  COST\n");
    for i in 0..lp.rows.len() {
        let _ = writeln!(s, " E  R{i}");
    }
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); lp.num_vars()];
    for (i, r) in lp.rows.iter().enumerate() {
        for &(j, a) in &r.coeffs {
            cols[j].push((i, a));
        }
    }
    s.push_str("COLUMNS\n");
    for (j, col) in cols.iter().enumerate() {
        let cname = col_name(lp, j);
        if col.is_empty() {
            let _ = writeln!(s, "    {cname:<8}  {:<8}  {:>12}", "COST", 0);
        }
        for &(i, a) in col {
            let _ = writeln!(s, "    {cname:<8}  {:<8}  {:>12}", format!("R{i}"), fmt_num(a));
        }
    }
    s.push_str("RHS\n");
    for (i, r) in lp.rows.iter().enumerate() {
        if r.rhs != 0.0 {
            let _ = writeln!(s, "    {:<8}  {:<8}  {:>12}", "RHS", format!("R{i}"), fmt_num(r.rhs));
        }
    }
    s.push_str("BOUNDS\n");
    for (j, lb) in lp.lower.iter().enumerate() {
        let cname = col_name(lp, j);
        match lb {
            None => {
                let _ = writeln!(s, " FR {:<8}  {cname:<8}", "BND");
            }
            Some(v) if *v != 0.0 => {
                let _ = writeln!(s, " LO {:<8}  {cname:<8}  {:>12}", "BND", fmt_num(*v));
            }
            Some(_) => {}
        }
    }
    s.push_str("ENDATA\n");
    s
}

fn col_name(lp: &LinearProgram, j: usize) -> String {
    match lp.names.get(j) {
        Some(n) if !n.is_empty() && !n.contains(' ') => n.clone(),
        _ => format!("X{j}"),
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v}");
    if s.len() <= 12 {
        s
    } else {
        format!("{v:.6e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::Row;

    #[test]
    fn small_program() {
        let mut lp = LinearProgram::new();
        lp.add_var("c0", None);
        lp.add_var("l0", Some(0.0));
        lp.rows.push(Row { coeffs: vec![(0, 1.0), (1, -1.0)], rhs: 1.0 });
        let text = write_mps(&lp, "demo");
        assert!(text.starts_with("NAME          demo\n"));
        assert!(text.contains(" E  R0\n"));
        assert!(text.contains("    c0        R0                   1\n"));
        assert!(text.contains(" FR BND       c0"));
        assert!(text.ends_with("ENDATA\n"));
    }
}
