//! A minimal sparse LP container with a HiGHS backend and CPLEX-LP export.

use std::fmt::Write as _;

use highs::{HighsModelStatus, RowProblem, Sense};

use crate::error::{Error, Result};

/// Primal and dual feasibility tolerance requested from the backend.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Column {
    name: String,
    cost: f64,
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone)]
struct Row {
    name: String,
    lo: f64,
    hi: f64,
    terms: Vec<(Var, f64)>,
}

/// Columns above which `Method::Auto` switches to interior point.
pub const IPM_THRESHOLD: usize = 20_000;

/// Backend algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Dual simplex for small models, interior point with crossover for large ones.
    #[default]
    Auto,
    DualSimplex,
    InteriorPoint,
}

/// A minimisation LP assembled column by column and row by row.
#[derive(Debug, Clone, Default)]
pub struct LpModel {
    columns: Vec<Column>,
    rows: Vec<Row>,
    method: Method,
}

/// Solver outcome for an optimal LP.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub objective: f64,
    pub values: Vec<f64>,
    pub iterations: i64,
}

impl LpSolution {
    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0]
    }
}

impl LpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_method(&mut self, method: Method) {
        self.method = method;
    }

    pub fn num_vars(&self) -> usize {
        self.columns.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, cost: f64, lo: f64, hi: f64) -> Var {
        self.columns.push(Column {
            name: name.into(),
            cost,
            lo,
            hi,
        });
        Var(self.columns.len() - 1)
    }

    /// Add `lo <= Σ coef·var <= hi`; use infinities for one-sided rows.
    pub fn add_row(&mut self, name: impl Into<String>, lo: f64, hi: f64, terms: Vec<(Var, f64)>) {
        self.rows.push(Row {
            name: name.into(),
            lo,
            hi,
            terms,
        });
    }

    pub fn add_eq(&mut self, name: impl Into<String>, rhs: f64, terms: Vec<(Var, f64)>) {
        self.add_row(name, rhs, rhs, terms);
    }

    pub fn add_ge(&mut self, name: impl Into<String>, rhs: f64, terms: Vec<(Var, f64)>) {
        self.add_row(name, rhs, f64::INFINITY, terms);
    }

    pub fn add_le(&mut self, name: impl Into<String>, rhs: f64, terms: Vec<(Var, f64)>) {
        self.add_row(name, f64::NEG_INFINITY, rhs, terms);
    }

    /// Objective value of an arbitrary point.
    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.columns.iter().zip(values).map(|(c, v)| c.cost * v).sum()
    }

    /// Largest bound or row violation of a point.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let col = self
            .columns
            .iter()
            .zip(values)
            .map(|(c, v)| (c.lo - v).max(v - c.hi).max(0.0));
        let row = self.rows.iter().map(|r| {
            let a: f64 = r.terms.iter().map(|(v, k)| k * values[v.0]).sum();
            (r.lo - a).max(a - r.hi).max(0.0)
        });
        col.chain(row).fold(0.0, f64::max)
    }

    /// Solve with HiGHS; see [`Method`].
    pub fn solve(&self) -> Result<LpSolution> {
        let mut pb = RowProblem::default();
        let cols: Vec<_> = self
            .columns
            .iter()
            .map(|c| pb.add_column(c.cost, c.lo..=c.hi))
            .collect();
        for r in &self.rows {
            let terms = r.terms.iter().map(|(v, k)| (cols[v.0], *k));
            match (r.lo.is_finite(), r.hi.is_finite()) {
                (true, true) => pb.add_row(r.lo..=r.hi, terms),
                (true, false) => pb.add_row(r.lo.., terms),
                (false, true) => pb.add_row(..=r.hi, terms),
                (false, false) => {}
            }
        }
        let mut model = pb.try_optimise(Sense::Minimise).map_err(|status| Error::Solver {
            status: format!("{status:?}"),
            iterations: 0,
            message: "model rejected by backend".into(),
        })?;
        model.make_quiet();
        let method = match self.method {
            Method::Auto if self.columns.len() >= IPM_THRESHOLD => Method::InteriorPoint,
            Method::Auto => Method::DualSimplex,
            m => m,
        };
        match method {
            Method::InteriorPoint => model.set_option("solver", "ipm"),
            _ => {
                model.set_option("solver", "simplex");
                model.set_option("simplex_strategy", 1);
            }
        }
        model.set_option("primal_feasibility_tolerance", FEASIBILITY_TOL);
        model.set_option("dual_feasibility_tolerance", FEASIBILITY_TOL);
        let solved = model.try_solve().map_err(|status| Error::Solver {
            status: format!("{status:?}"),
            iterations: 0,
            message: "backend failed to run".into(),
        })?;
        let iterations = solved.simplex_iteration_count();
        match solved.status() {
            HighsModelStatus::Optimal => {}
            HighsModelStatus::ModelEmpty => {
                return Ok(LpSolution {
                    objective: 0.0,
                    values: self.columns.iter().map(|c| c.lo.max(0.0).min(c.hi)).collect(),
                    iterations,
                })
            }
            status => {
                return Err(Error::Solver {
                    status: format!("{status:?}"),
                    iterations,
                    message: format!("{} columns, {} rows", self.num_vars(), self.num_rows()),
                })
            }
        }
        let values = solved.get_solution().columns().to_vec();
        Ok(LpSolution {
            objective: self.evaluate(&values),
            values,
            iterations,
        })
    }

    /// Render in CPLEX LP text format.
    pub fn to_lp_string(&self) -> String {
        let mut s = String::from("\\ district sizing LP\nMinimize\n obj:");
        let mut any = false;
        for c in self.columns.iter().filter(|c| c.cost != 0.0) {
            write_term(&mut s, c.cost, &c.name);
            any = true;
        }
        if !any {
            s.push_str(" 0 ");
            s.push_str(&self.columns.first().map_or("dummy".into(), |c| c.name.clone()));
        }
        s.push_str("\nSubject To\n");
        for r in &self.rows {
            let mut expr = String::new();
            for (v, k) in &r.terms {
                write_term(&mut expr, *k, &self.columns[v.0].name);
            }
            if expr.is_empty() {
                continue;
            }
            match (r.lo.is_finite(), r.hi.is_finite()) {
                (true, true) if r.lo == r.hi => {
                    let _ = writeln!(s, " {}:{expr} = {:?}", r.name, r.lo);
                }
                (true, true) => {
                    let _ = writeln!(s, " {}_lo:{expr} >= {:?}", r.name, r.lo);
                    let _ = writeln!(s, " {}_hi:{expr} <= {:?}", r.name, r.hi);
                }
                (true, false) => {
                    let _ = writeln!(s, " {}:{expr} >= {:?}", r.name, r.lo);
                }
                (false, true) => {
                    let _ = writeln!(s, " {}:{expr} <= {:?}", r.name, r.hi);
                }
                (false, false) => {}
            }
        }
        s.push_str("Bounds\n");
        for c in &self.columns {
            match (c.lo.is_finite(), c.hi.is_finite()) {
                (true, true) => {
                    let _ = writeln!(s, " {:?} <= {} <= {:?}", c.lo, c.name, c.hi);
                }
                (true, false) => {
                    let _ = writeln!(s, " {} >= {:?}", c.name, c.lo);
                }
                (false, true) => {
                    let _ = writeln!(s, " -inf <= {} <= {:?}", c.name, c.hi);
                }
                (false, false) => {
                    let _ = writeln!(s, " {} free", c.name);
                }
            }
        }
        s.push_str("End\n");
        s
    }
}

fn write_term(s: &mut String, coef: f64, name: &str) {
    if coef < 0.0 {
        let _ = write!(s, " - {:?} {name}", -coef);
    } else {
        let _ = write!(s, " + {coef:?} {name}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp_solves() {
        // min x + 2y  s.t.  x + y >= 3,  x <= 2
        let mut m = LpModel::new();
        let x = m.add_var("x", 1.0, 0.0, 2.0);
        let y = m.add_var("y", 2.0, 0.0, f64::INFINITY);
        m.add_ge("cover", 3.0, vec![(x, 1.0), (y, 1.0)]);
        let sol = m.solve().unwrap();
        assert!((sol.objective - 4.0).abs() < 1e-9);
        assert!((sol.value(x) - 2.0).abs() < 1e-9);
        assert!(m.max_violation(&sol.values) < 1e-9);
    }

    #[test]
    fn infeasible_lp_is_reported() {
        let mut m = LpModel::new();
        let x = m.add_var("x", 1.0, 0.0, 1.0);
        m.add_ge("c", 2.0, vec![(x, 1.0)]);
        match m.solve() {
            Err(Error::Solver { status, .. }) => assert!(status.contains("Infeasible"), "{status}"),
            other => panic!("expected solver error, got {other:?}"),
        }
    }

    #[test]
    fn lp_text_has_sections() {
        let mut m = LpModel::new();
        let x = m.add_var("x", 1.5, 0.0, f64::INFINITY);
        let y = m.add_var("y", -1.0, 0.0, 4.0);
        m.add_le("c1", 5.0, vec![(x, 1.0), (y, -2.0)]);
        m.add_eq("c2", 1.0, vec![(y, 1.0)]);
        let text = m.to_lp_string();
        assert!(text.contains("Minimize\n obj: + 1.5 x - 1.0 y"));
        assert!(text.contains(" c1: + 1.0 x - 2.0 y <= 5.0"));
        assert!(text.contains(" c2: + 1.0 y = 1.0"));
        assert!(text.contains(" 0.0 <= y <= 4.0"));
        assert!(text.trim_end().ends_with("End"));
    }
}
