use super::{Relation, SdpProblem, SdpSettings, SdpSolution, VarKind};
use crate::linalg::CMat;
use serde::{Deserialize, Serialize};

/// Independent recheck of a solver result against the original problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// Largest constraint violation, each row divided by its largest coefficient.
    pub max_violation: f64,
    /// Smallest eigenvalue over PSD variables relative to `max(1, λ_max)`.
    pub min_psd_eig: f64,
    /// Worst violation of `C - Σ y_i A_i ⪰ 0` and the dual sign conventions,
    /// relative to the objective scale.
    pub max_dual_violation: f64,
    pub rel_gap: f64,
    pub threshold: f64,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn hermitian_min_eig(m: &CMat) -> (f64, f64) {
    let e = ((m + m.adjoint()).scale(0.5)).symmetric_eigen().eigenvalues;
    let lo = e.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    let hi = e.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
    (lo, hi)
}

/// Checks `s` with thresholds of 10x the default solver tolerance.
pub fn verify_solution(p: &SdpProblem, s: &SdpSolution) -> VerifyReport {
    verify_with(p, s, &SdpSettings::default())
}

pub fn verify_with(p: &SdpProblem, s: &SdpSolution, settings: &SdpSettings) -> VerifyReport {
    let threshold = 10.0 * settings.tol;
    let mut failures = Vec::new();
    if !s.is_optimal() {
        failures.push(format!("status is {:?}", s.status));
    }
    if s.values.len() != p.variables.len() || s.duals.len() != p.constraints.len() {
        failures.push("solution shape does not match problem".into());
        return VerifyReport {
            max_violation: f64::INFINITY,
            min_psd_eig: f64::NEG_INFINITY,
            max_dual_violation: f64::INFINITY,
            rel_gap: f64::INFINITY,
            threshold,
            failures,
        };
    }

    let mut min_psd_eig = f64::INFINITY;
    for (decl, x) in p.variables.iter().zip(&s.values) {
        if x.nrows() != decl.dim || x.ncols() != decl.dim {
            failures.push(format!("`{}` has wrong shape", decl.name));
            continue;
        }
        let asym = (x - x.adjoint()).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        let scale = x.iter().fold(1.0_f64, |a, z| a.max(z.norm()));
        if asym > threshold * scale {
            failures.push(format!("`{}` is not Hermitian ({asym:.2e})", decl.name));
        }
        if decl.kind == VarKind::Psd {
            let (lo, hi) = hermitian_min_eig(x);
            let rel = lo / hi.max(1.0);
            min_psd_eig = min_psd_eig.min(rel);
            if rel < -threshold {
                failures.push(format!("`{}` has eigenvalue {lo:.3e}", decl.name));
            }
        }
    }

    let mut max_violation = 0.0_f64;
    for c in &p.constraints {
        let lhs = SdpProblem::evaluate(&c.coefs, &s.values);
        let r = SdpProblem::row_scale(&c.coefs);
        let v = match c.relation {
            Relation::Le => (lhs - c.rhs).max(0.0),
            Relation::Ge => (c.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - c.rhs).abs(),
        } / r;
        max_violation = max_violation.max(v);
        if v > threshold {
            failures.push(format!("constraint `{}` violated by {v:.3e}", c.name));
        }
    }

    let obj_scale = SdpProblem::row_scale(&p.objective);
    let mut max_dual_violation = 0.0_f64;
    for (c, &y) in p.constraints.iter().zip(&s.duals) {
        let r = SdpProblem::row_scale(&c.coefs);
        let wrong = match c.relation {
            Relation::Le => y.max(0.0),
            Relation::Ge => (-y).max(0.0),
            Relation::Eq => 0.0,
        } * r
            / obj_scale;
        max_dual_violation = max_dual_violation.max(wrong);
        if wrong > threshold {
            failures.push(format!("dual of `{}` has the wrong sign ({y:.3e})", c.name));
        }
    }
    for (v, decl) in p.variables.iter().enumerate() {
        let mut slack = p.objective[v]
            .clone()
            .unwrap_or_else(|| CMat::zeros(decl.dim, decl.dim));
        for (c, &y) in p.constraints.iter().zip(&s.duals) {
            if let Some(a) = &c.coefs[v] {
                slack -= a.scale(y);
            }
        }
        let viol = match decl.kind {
            VarKind::Psd => (-hermitian_min_eig(&slack).0).max(0.0),
            VarKind::Free => slack[(0, 0)].re.abs(),
        } / obj_scale;
        max_dual_violation = max_dual_violation.max(viol);
        if viol > threshold {
            failures.push(format!("dual slack for `{}` infeasible by {viol:.3e}", decl.name));
        }
    }

    let pobj = p.objective_value(&s.values);
    let dobj: f64 = p
        .constraints
        .iter()
        .zip(&s.duals)
        .map(|(c, y)| c.rhs * y)
        .sum();
    let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    if !(rel_gap <= threshold) {
        failures.push(format!("duality gap {rel_gap:.3e} (primal {pobj:.6e}, dual {dobj:.6e})"));
    }

    VerifyReport {
        max_violation,
        min_psd_eig,
        max_dual_violation,
        rel_gap,
        threshold,
        failures,
    }
}
