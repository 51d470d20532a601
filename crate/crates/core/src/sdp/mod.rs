//! Small dense complex semidefinite programs.
//!
//! Problems are assembled with [`ProblemSpec`], checked by [`build_problem`] and
//! solved by [`solve`], an infeasible-start primal-dual interior point method.
//! [`verify_solution`] re-checks a returned point against the original data.

mod dump;
mod fuzz;
mod ipm;
mod verify;

pub use dump::{ProblemDump, SolutionDump};
pub use fuzz::random_feasible;
pub use ipm::{solve, IterateLog, SdpSettings};
pub use verify::{verify_solution, verify_with, VerifyReport};

use crate::linalg::{CMat, CVec, C64};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("constraint `{constraint}` references undeclared variable #{var}")]
    UndeclaredVariable { constraint: String, var: usize },
    #[error("`{context}`: coefficient for `{var}` is {rows}x{cols}, variable is {dim}x{dim}")]
    CoefficientShape {
        context: String,
        var: String,
        rows: usize,
        cols: usize,
        dim: usize,
    },
    #[error("`{context}`: coefficient for `{var}` is not Hermitian")]
    NotHermitian { context: String, var: String },
    #[error("`{context}`: non-finite data")]
    NonFinite { context: String },
    #[error("free variable `{0}` must be scalar")]
    FreeNotScalar(String),
    #[error("variable `{0}` has zero dimension")]
    EmptyVariable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    /// Hermitian positive semidefinite matrix.
    Psd,
    /// Unrestricted real scalar.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    pub dim: usize,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// `Σ_v Re Tr(C_v X_v)` with Hermitian coefficient matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearFunctional {
    pub terms: Vec<(VarId, CMat)>,
}

impl LinearFunctional {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn term(mut self, var: VarId, coef: CMat) -> Self {
        self.terms.push((var, coef));
        self
    }

    /// Coefficient for a 1x1 variable.
    pub fn scalar(self, var: VarId, c: f64) -> Self {
        self.term(var, CMat::from_element(1, 1, C64::new(c, 0.0)))
    }

    /// `c * Tr(X)`.
    pub fn trace(self, var: VarId, dim: usize, c: f64) -> Self {
        self.term(var, CMat::identity(dim, dim).scale(c))
    }

    /// `c * v^H X v`.
    pub fn quad(self, var: VarId, v: &CVec, c: f64) -> Self {
        self.term(var, (v * v.adjoint()).scale(c))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub name: String,
    pub lhs: LinearFunctional,
    pub relation: Relation,
    pub rhs: f64,
}

/// Unvalidated problem: `minimize objective` subject to the constraints.
#[derive(Debug, Clone, Default)]
pub struct ProblemSpec {
    pub variables: Vec<VarDecl>,
    pub objective: LinearFunctional,
    pub constraints: Vec<ConstraintSpec>,
}

impl ProblemSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn psd(&mut self, name: impl Into<String>, dim: usize) -> VarId {
        self.variables.push(VarDecl {
            name: name.into(),
            dim,
            kind: VarKind::Psd,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn free_scalar(&mut self, name: impl Into<String>) -> VarId {
        self.variables.push(VarDecl {
            name: name.into(),
            dim: 1,
            kind: VarKind::Free,
        });
        VarId(self.variables.len() - 1)
    }

    pub fn minimize(&mut self, objective: LinearFunctional) {
        self.objective = objective;
    }

    pub fn constrain(
        &mut self,
        name: impl Into<String>,
        lhs: LinearFunctional,
        relation: Relation,
        rhs: f64,
    ) {
        self.constraints.push(ConstraintSpec {
            name: name.into(),
            lhs,
            relation,
            rhs,
        });
    }
}

/// One linear constraint with per-variable coefficients (`None` for absent terms).
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub coefs: Vec<Option<CMat>>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Validated problem in canonical form. Repeated terms for one variable are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub(crate) variables: Vec<VarDecl>,
    pub(crate) objective: Vec<Option<CMat>>,
    pub(crate) constraints: Vec<Constraint>,
}

impl SdpProblem {
    pub fn variables(&self) -> &[VarDecl] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[Option<CMat>] {
        &self.objective
    }

    /// Evaluates `Σ_v Re Tr(C_v X_v)` for one coefficient row.
    pub fn evaluate(coefs: &[Option<CMat>], values: &[CMat]) -> f64 {
        coefs
            .iter()
            .zip(values)
            .filter_map(|(c, x)| c.as_ref().map(|c| c.dotc(x).re))
            .sum()
    }

    pub fn objective_value(&self, values: &[CMat]) -> f64 {
        Self::evaluate(&self.objective, values)
    }

    /// Largest coefficient magnitude in a row, or 1 for an empty row.
    pub(crate) fn row_scale(coefs: &[Option<CMat>]) -> f64 {
        let s = coefs
            .iter()
            .flatten()
            .flat_map(|c| c.iter())
            .fold(0.0_f64, |a, z| a.max(z.norm()));
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }
}

fn canonical_row(
    context: &str,
    vars: &[VarDecl],
    f: &LinearFunctional,
) -> Result<Vec<Option<CMat>>, SdpError> {
    let mut row: Vec<Option<CMat>> = vec![None; vars.len()];
    for (var, coef) in &f.terms {
        let decl = vars.get(var.0).ok_or_else(|| SdpError::UndeclaredVariable {
            constraint: context.to_string(),
            var: var.0,
        })?;
        if coef.nrows() != decl.dim || coef.ncols() != decl.dim {
            return Err(SdpError::CoefficientShape {
                context: context.to_string(),
                var: decl.name.clone(),
                rows: coef.nrows(),
                cols: coef.ncols(),
                dim: decl.dim,
            });
        }
        if coef.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SdpError::NonFinite {
                context: context.to_string(),
            });
        }
        let scale = coef.iter().fold(1.0_f64, |a, z| a.max(z.norm()));
        let asym = (coef - coef.adjoint()).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        if asym > 1e-8 * scale {
            return Err(SdpError::NotHermitian {
                context: context.to_string(),
                var: decl.name.clone(),
            });
        }
        let sym = (coef + coef.adjoint()).scale(0.5);
        row[var.0] = Some(match row[var.0].take() {
            Some(prev) => prev + sym,
            None => sym,
        });
    }
    Ok(row)
}

/// Validates shapes, Hermitian symmetry and variable references.
pub fn build_problem(spec: ProblemSpec) -> Result<SdpProblem, SdpError> {
    for v in &spec.variables {
        if v.dim == 0 {
            return Err(SdpError::EmptyVariable(v.name.clone()));
        }
        if v.kind == VarKind::Free && v.dim != 1 {
            return Err(SdpError::FreeNotScalar(v.name.clone()));
        }
    }
    let objective = canonical_row("objective", &spec.variables, &spec.objective)?;
    let mut constraints = Vec::with_capacity(spec.constraints.len());
    for c in &spec.constraints {
        if !c.rhs.is_finite() {
            return Err(SdpError::NonFinite {
                context: c.name.clone(),
            });
        }
        constraints.push(Constraint {
            name: c.name.clone(),
            coefs: canonical_row(&c.name, &spec.variables, &c.lhs)?,
            relation: c.relation,
            rhs: c.rhs,
        });
    }
    Ok(SdpProblem {
        variables: spec.variables,
        objective,
        constraints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibilityKind {
    /// No point satisfies the constraints.
    Primal,
    /// The objective is unbounded below on the feasible set.
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible(InfeasibilityKind),
    NumericalFailure,
}

/// Solver output mapped back to the original variables and constraints.
///
/// Duals follow `C - Σ y_i A_i ⪰ 0` with `y_i ≥ 0` on `≥` rows and `y_i ≤ 0`
/// on `≤` rows. For primal infeasibility `certificate` holds `y` with
/// `Σ y_i A_i ⪯ 0` and `b^T y = 1`.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub values: Vec<CMat>,
    pub objective: f64,
    pub dual_objective: f64,
    pub duals: Vec<f64>,
    pub certificate: Option<Vec<f64>>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rel_gap: f64,
    pub log: Vec<IterateLog>,
    pub message: String,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, var: VarId) -> &CMat {
        &self.values[var.0]
    }

    pub fn scalar(&self, var: VarId) -> f64 {
        self.values[var.0][(0, 0)].re
    }

    /// Constraints carrying weight in the infeasibility certificate, largest first.
    pub fn blocking_constraints<'a>(&self, problem: &'a SdpProblem) -> Vec<&'a str> {
        let Some(cert) = &self.certificate else {
            return Vec::new();
        };
        let peak = cert.iter().fold(0.0_f64, |a, y| a.max(y.abs()));
        let mut idx: Vec<usize> = (0..cert.len())
            .filter(|&i| cert[i].abs() > 1e-6 * peak)
            .collect();
        idx.sort_by(|&a, &b| cert[b].abs().total_cmp(&cert[a].abs()));
        idx.iter()
            .map(|&i| problem.constraints[i].name.as_str())
            .collect()
    }
}
