use std::fmt::Write as _;

use crate::scalar::Real;

use super::ConicError;

/// Index of one real scalar variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub usize);

/// A named, contiguous run of variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VarBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl VarBlock {
    #[inline]
    pub fn at(&self, k: usize) -> Var {
        assert!(k < self.len, "index {k} out of block '{}'", self.name);
        Var(self.offset + k)
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.len).map(move |k| Var(self.offset + k))
    }
}

/// `sum_k coef_k x_k + constant`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineExpr<T> {
    pub terms: Vec<(Var, T)>,
    pub constant: T,
}

impl<T: Real> AffineExpr<T> {
    pub fn zero() -> Self {
        Self {
            terms: Vec::new(),
            constant: T::zero(),
        }
    }

    pub fn constant(c: T) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: Var) -> Self {
        Self::term(v, T::one())
    }

    pub fn term(v: Var, coef: T) -> Self {
        Self {
            terms: vec![(v, coef)],
            constant: T::zero(),
        }
    }

    /// Adds `coef * v`; zero coefficients are dropped.
    pub fn plus(mut self, v: Var, coef: T) -> Self {
        if coef != T::zero() {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn plus_const(mut self, c: T) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: T) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn add(mut self, other: &Self) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(v, c)| acc + c * x[v.0])
    }

    pub(crate) fn dense_coefficients(&self, n: usize) -> Vec<T> {
        let mut d = vec![T::zero(); n];
        for &(v, c) in &self.terms {
            d[v.0] += c;
        }
        d
    }
}

/// One constraint of a [`ConicProgram`].
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint<T> {
    /// `expr == 0`
    Equal(AffineExpr<T>),
    /// `expr >= 0`
    NonNeg(AffineExpr<T>),
    /// `||rows|| <= bound`
    Soc {
        bound: AffineExpr<T>,
        rows: Vec<AffineExpr<T>>,
    },
    /// `||rows||^2 <= 2 v w` with `v, w >= 0`
    RotatedSoc {
        v: AffineExpr<T>,
        w: AffineExpr<T>,
        rows: Vec<AffineExpr<T>>,
    },
}

impl<T: Real> Constraint<T> {
    fn exprs(&self) -> Vec<&AffineExpr<T>> {
        match self {
            Constraint::Equal(e) | Constraint::NonNeg(e) => vec![e],
            Constraint::Soc { bound, rows } => std::iter::once(bound).chain(rows).collect(),
            Constraint::RotatedSoc { v, w, rows } => [v, w].into_iter().chain(rows).collect(),
        }
    }

    /// Amount by which `x` violates the constraint (0 when satisfied).
    pub fn violation(&self, x: &[T]) -> T {
        match self {
            Constraint::Equal(e) => e.eval(x).abs(),
            Constraint::NonNeg(e) => (-e.eval(x)).max(T::zero()),
            Constraint::Soc { bound, rows } => {
                let n = rows.iter().map(|r| r.eval(x).powi(2)).sum::<T>().sqrt();
                (n - bound.eval(x)).max(T::zero())
            }
            Constraint::RotatedSoc { v, w, rows } => {
                let (vv, ww) = (v.eval(x), w.eval(x));
                let lhs = rows.iter().map(|r| r.eval(x).powi(2)).sum::<T>();
                let two = T::one() + T::one();
                // Distance-like measure of the equivalent standard cone.
                let n = (two * lhs + (vv - ww).powi(2)).sqrt();
                (n - (vv + ww)).max(T::zero()).max(-vv).max(-ww)
            }
        }
    }

    /// Dimension of the cone after conversion to standard form.
    pub fn cone_dim(&self) -> usize {
        match self {
            Constraint::Equal(_) | Constraint::NonNeg(_) => 1,
            Constraint::Soc { rows, .. } => 1 + rows.len(),
            Constraint::RotatedSoc { rows, .. } => 2 + rows.len(),
        }
    }
}

/// Handle to a constraint added to a program.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConstraintId(pub usize);

/// Linear-objective minimization over nonnegative, second-order and rotated
/// second-order cones, with named variable blocks.
#[derive(Clone, Debug, Default)]
pub struct ConicProgram<T> {
    blocks: Vec<VarBlock>,
    n_vars: usize,
    objective: Option<AffineExpr<T>>,
    constraints: Vec<(String, Constraint<T>)>,
}

impl<T: Real> ConicProgram<T> {
    pub fn new() -> Self {
        Self {
            blocks: Vec::new(),
            n_vars: 0,
            objective: None,
            constraints: Vec::new(),
        }
    }

    pub fn add_block(&mut self, name: impl Into<String>, len: usize) -> VarBlock {
        let b = VarBlock {
            name: name.into(),
            offset: self.n_vars,
            len,
        };
        self.n_vars += len;
        self.blocks.push(b.clone());
        b
    }

    pub fn add_scalar(&mut self, name: impl Into<String>) -> Var {
        self.add_block(name, 1).at(0)
    }

    pub fn minimize(&mut self, objective: AffineExpr<T>) {
        self.objective = Some(objective);
    }

    pub fn add(&mut self, label: impl Into<String>, c: Constraint<T>) -> ConstraintId {
        self.constraints.push((label.into(), c));
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&VarBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn objective(&self) -> AffineExpr<T> {
        self.objective.clone().unwrap_or_else(AffineExpr::zero)
    }

    pub fn constraints(&self) -> &[(String, Constraint<T>)] {
        &self.constraints
    }

    pub fn constraint(&self, id: ConstraintId) -> &Constraint<T> {
        &self.constraints[id.0].1
    }

    /// Checks variable indices and that every variable is referenced.
    pub fn validate(&self) -> Result<(), ConicError> {
        let mut used = vec![false; self.n_vars];
        let objective = self.objective();
        let all =
            std::iter::once(&objective).chain(self.constraints.iter().flat_map(|(_, c)| c.exprs()));
        for e in all {
            for &(v, c) in &e.terms {
                if v.0 >= self.n_vars {
                    return Err(ConicError::InvalidProgram(format!(
                        "variable {} out of range ({} variables)",
                        v.0, self.n_vars
                    )));
                }
                if !c.is_finite() {
                    return Err(ConicError::InvalidProgram("non-finite coefficient".into()));
                }
                used[v.0] = true;
            }
            if !e.constant.is_finite() {
                return Err(ConicError::InvalidProgram("non-finite constant".into()));
            }
        }
        if let Some(k) = used.iter().position(|u| !u) {
            let name = self
                .blocks
                .iter()
                .find(|b| k >= b.offset && k < b.offset + b.len)
                .map_or("?", |b| b.name.as_str());
            return Err(ConicError::InvalidProgram(format!(
                "variable {k} (block '{name}') appears in no constraint or objective"
            )));
        }
        Ok(())
    }

    /// Largest constraint violation at `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        self.constraints
            .iter()
            .fold(T::zero(), |m, (_, c)| m.max(c.violation(x)))
    }

    /// Plain-text dump, one constraint per line with dense coefficients:
    ///
    /// ```text
    /// vars <n>
    /// block <name> <offset> <len>
    /// min <c_0 .. c_{n-1}> | <const>
    /// eq <label> <coefs> | <const>
    /// nonneg <label> <coefs> | <const>
    /// soc <label> <bound coefs> | <const> ; <row coefs> | <const> ; ...
    /// rsoc <label> <v> | <c> ; <w> | <c> ; <row> | <c> ; ...
    /// ```
    pub fn to_text(&self) -> String {
        let n = self.n_vars;
        let fmt_expr = |e: &AffineExpr<T>| {
            let mut s = String::new();
            for c in e.dense_coefficients(n) {
                let _ = write!(s, "{c:e} ");
            }
            let _ = write!(s, "| {:e}", e.constant);
            s
        };
        let label = |l: &str| {
            if l.is_empty() {
                "-".to_string()
            } else {
                l.replace(' ', "_")
            }
        };
        let mut out = String::new();
        let _ = writeln!(out, "vars {n}");
        for b in &self.blocks {
            let _ = writeln!(
                out,
                "block {} {} {}",
                b.name.replace(' ', "_"),
                b.offset,
                b.len
            );
        }
        let _ = writeln!(out, "min {}", fmt_expr(&self.objective()));
        for (l, c) in &self.constraints {
            let line = match c {
                Constraint::Equal(e) => format!("eq {} {}", label(l), fmt_expr(e)),
                Constraint::NonNeg(e) => format!("nonneg {} {}", label(l), fmt_expr(e)),
                Constraint::Soc { bound, rows } => {
                    let parts: Vec<String> =
                        std::iter::once(bound).chain(rows).map(&fmt_expr).collect();
                    format!("soc {} {}", label(l), parts.join(" ; "))
                }
                Constraint::RotatedSoc { v, w, rows } => {
                    let parts: Vec<String> =
                        [v, w].into_iter().chain(rows).map(&fmt_expr).collect();
                    format!("rsoc {} {}", label(l), parts.join(" ; "))
                }
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}
