//! JSON debug format for problems and solutions.

use super::{
    build_problem, ConstraintSpec, IterateLog, LinearFunctional, ProblemSpec, Relation, SdpError,
    SdpProblem, SdpSolution, SolveStatus, VarDecl, VarId,
};
use crate::linalg::{CMat, MatrixData};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDump {
    pub var: usize,
    pub coef: MatrixData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDump {
    pub name: String,
    pub terms: Vec<TermDump>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDump {
    pub variables: Vec<VarDecl>,
    pub objective: Vec<TermDump>,
    pub constraints: Vec<ConstraintDump>,
}

fn terms(row: &[Option<CMat>]) -> Vec<TermDump> {
    row.iter()
        .enumerate()
        .filter_map(|(var, c)| {
            c.as_ref().map(|c| TermDump {
                var,
                coef: MatrixData::from(c),
            })
        })
        .collect()
}

fn functional(terms: &[TermDump], context: &str) -> Result<LinearFunctional, SdpError> {
    let mut f = LinearFunctional::new();
    for t in terms {
        let coef = t.coef.to_matrix().map_err(|_| SdpError::NonFinite {
            context: context.to_string(),
        })?;
        f = f.term(VarId(t.var), coef);
    }
    Ok(f)
}

impl From<&SdpProblem> for ProblemDump {
    fn from(p: &SdpProblem) -> Self {
        Self {
            variables: p.variables.clone(),
            objective: terms(&p.objective),
            constraints: p
                .constraints
                .iter()
                .map(|c| ConstraintDump {
                    name: c.name.clone(),
                    terms: terms(&c.coefs),
                    relation: c.relation,
                    rhs: c.rhs,
                })
                .collect(),
        }
    }
}

impl ProblemDump {
    pub fn to_problem(&self) -> Result<SdpProblem, SdpError> {
        let mut spec = ProblemSpec {
            variables: self.variables.clone(),
            objective: functional(&self.objective, "objective")?,
            constraints: Vec::new(),
        };
        for c in &self.constraints {
            spec.constraints.push(ConstraintSpec {
                name: c.name.clone(),
                lhs: functional(&c.terms, &c.name)?,
                relation: c.relation,
                rhs: c.rhs,
            });
        }
        build_problem(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDump {
    pub status: SolveStatus,
    pub values: Vec<MatrixData>,
    pub objective: f64,
    pub dual_objective: f64,
    pub duals: Vec<f64>,
    pub certificate: Option<Vec<f64>>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rel_gap: f64,
    pub message: String,
    pub log: Vec<IterateLog>,
}

impl From<&SdpSolution> for SolutionDump {
    fn from(s: &SdpSolution) -> Self {
        Self {
            status: s.status,
            values: s.values.iter().map(MatrixData::from).collect(),
            objective: s.objective,
            dual_objective: s.dual_objective,
            duals: s.duals.clone(),
            certificate: s.certificate.clone(),
            iterations: s.iterations,
            primal_residual: s.primal_residual,
            dual_residual: s.dual_residual,
            rel_gap: s.rel_gap,
            message: s.message.clone(),
            log: s.log.clone(),
        }
    }
}

impl SdpProblem {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProblemDump::from(self)).expect("problem dump serializes")
    }
}

impl SdpSolution {
    /// Non-finite numbers are written as `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SolutionDump::from(self)).expect("solution dump serializes")
    }
}
