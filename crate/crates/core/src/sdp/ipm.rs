//! Infeasible-start primal-dual interior point method (HKM direction,
//! Mehrotra predictor-corrector) over Hermitian PSD blocks, a nonnegative
//! orthant and free scalars.

use super::{InfeasibilityKind, Relation, SdpProblem, SdpSolution, SolveStatus, VarKind};
use crate::linalg::{CMat, C64};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpSettings {
    /// Target for scaled primal/dual residuals and relative gap.
    pub tol: f64,
    /// A stalled run is still reported optimal if every measure is below this.
    pub accept_tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Residual a normalized improving ray must reach to certify infeasibility.
    pub infeasibility_tol: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            accept_tol: 1e-6,
            max_iter: 200,
            step_fraction: 0.98,
            infeasibility_tol: 1e-7,
        }
    }
}

/// Per-iteration diagnostics in the units of the original problem.
///
/// `primal_obj - dual_obj = complementarity + residual_term` holds exactly,
/// with `complementarity ≥ 0`; when both residuals vanish this is weak duality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateLog {
    pub iter: usize,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub complementarity: f64,
    pub residual_term: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rel_gap: f64,
    pub mu: f64,
    pub step_primal: f64,
    pub step_dual: f64,
}

#[derive(Debug, Clone, Copy)]
enum Column {
    Var(usize),
    Slack,
}

struct Block {
    var: usize,
    n: usize,
    c: CMat,
    /// Coefficient per kept row.
    a: Vec<Option<CMat>>,
    /// `Σ_r w_r v_r v_r^H` factors of the coefficients that have low rank.
    low_rank: Vec<Option<LowRank>>,
}

struct LowRank {
    vecs: CMat,
    weights: Vec<f64>,
}

/// Factors `a = w v v^H` when it is rank one to working precision.
fn low_rank_factor(a: &CMat) -> Option<LowRank> {
    let n = a.nrows();
    let (j, peak) = (0..n)
        .map(|i| (i, a[(i, i)].re))
        .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))?;
    if peak == 0.0 {
        return None;
    }
    let v = a.column(j).unscale(peak.abs().sqrt());
    let w = peak.signum();
    let scale = a.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    let err = (a - (&v * v.adjoint()).scale(w))
        .iter()
        .fold(0.0_f64, |m, z| m.max(z.norm()));
    (err <= 1e-12 * scale).then(|| LowRank {
        vecs: CMat::from_columns(&[v]),
        weights: vec![w],
    })
}

/// Scaled standard form: `min <C,X> + c_l x_l + c_f x_f` subject to
/// `A(X) + A_l x_l + A_f x_f = b`, `X ⪰ 0`, `x_l ≥ 0`.
struct Standard {
    m: usize,
    rows: Vec<usize>,
    row_scale: Vec<f64>,
    /// Per variable: scaled value = `var_scale * original`.
    var_scale: Vec<f64>,
    obj_scale: f64,
    b: DVector<f64>,
    blocks: Vec<Block>,
    lp_cols: Vec<Column>,
    c_l: DVector<f64>,
    a_l: DMatrix<f64>,
    free_vars: Vec<usize>,
    c_f: DVector<f64>,
    a_f: DMatrix<f64>,
}

enum Preprocessed {
    Ready(Standard),
    /// Dependent equality rows with inconsistent right-hand sides.
    Inconsistent(Vec<f64>),
    /// A free scalar with nonzero cost that no constraint touches.
    Unbounded(String),
}

fn real(c: &CMat) -> f64 {
    c[(0, 0)].re
}

fn preprocess(p: &SdpProblem) -> Preprocessed {
    let m0 = p.constraints.len();
    let mut row_scale: Vec<f64> = p
        .constraints
        .iter()
        .map(|c| SdpProblem::row_scale(&c.coefs))
        .collect();

    // Gram matrix of the scaled equality rows; inequality rows own a slack
    // column and can never be dependent.
    let eq_rows: Vec<usize> = (0..m0)
        .filter(|&i| p.constraints[i].relation == Relation::Eq)
        .collect();
    let gram = |i: usize, j: usize| -> f64 {
        let (ci, cj) = (&p.constraints[i].coefs, &p.constraints[j].coefs);
        let mut s = 0.0;
        for (a, b) in ci.iter().zip(cj) {
            if let (Some(a), Some(b)) = (a, b) {
                s += a.dotc(b).re;
            }
        }
        s / (row_scale[i] * row_scale[j])
    };
    let b_scaled = |i: usize| p.constraints[i].rhs / row_scale[i];
    let mut kept_eq: Vec<usize> = Vec::new();
    let mut dropped = vec![false; m0];
    for &i in &eq_rows {
        let gii = gram(i, i);
        let (resid, coef) = if kept_eq.is_empty() {
            (gii, DVector::zeros(0))
        } else {
            let k = kept_eq.len();
            let gkk = DMatrix::from_fn(k, k, |a, b| gram(kept_eq[a], kept_eq[b]));
            let g = DVector::from_fn(k, |a, _| gram(kept_eq[a], i));
            match gkk.cholesky() {
                Some(ch) => {
                    let c = ch.solve(&g);
                    (gii - g.dot(&c), c)
                }
                None => (gii, DVector::zeros(k)),
            }
        };
        if resid > 1e-9 * gii.max(1e-300) && gii > 0.0 {
            kept_eq.push(i);
            continue;
        }
        let combo: f64 = kept_eq
            .iter()
            .zip(coef.iter())
            .map(|(&r, &c)| c * b_scaled(r))
            .sum();
        let mismatch = b_scaled(i) - combo;
        let size = 1.0
            + b_scaled(i).abs()
            + kept_eq
                .iter()
                .zip(coef.iter())
                .map(|(&r, &c)| (c * b_scaled(r)).abs())
                .sum::<f64>();
        if mismatch.abs() <= 1e-9 * size {
            dropped[i] = true;
            continue;
        }
        let mut y = vec![0.0; m0];
        y[i] = 1.0 / mismatch / row_scale[i];
        for (&r, &c) in kept_eq.iter().zip(coef.iter()) {
            y[r] = -c / mismatch / row_scale[r];
        }
        return Preprocessed::Inconsistent(y);
    }

    let rows: Vec<usize> = (0..m0).filter(|&i| !dropped[i]).collect();
    let m = rows.len();

    // One equilibration pass: columns to unit peak, then rows again.
    let peak = |c: &CMat| c.iter().fold(0.0_f64, |a, z| a.max(z.norm()));
    let var_scale: Vec<f64> = (0..p.variables.len())
        .map(|v| {
            let s = rows
                .iter()
                .filter_map(|&i| p.constraints[i].coefs[v].as_ref().map(|c| peak(c) / row_scale[i]))
                .fold(0.0_f64, f64::max);
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    for &i in &rows {
        let s = p.constraints[i]
            .coefs
            .iter()
            .enumerate()
            .filter_map(|(v, c)| c.as_ref().map(|c| peak(c) / (row_scale[i] * var_scale[v])))
            .fold(0.0_f64, f64::max);
        if s > 0.0 {
            row_scale[i] *= s;
        }
    }
    let obj_scale = {
        let s = p
            .objective
            .iter()
            .enumerate()
            .filter_map(|(v, c)| c.as_ref().map(|c| peak(c) / var_scale[v]))
            .fold(0.0_f64, f64::max);
        if s > 0.0 { s } else { 1.0 }
    };
    let b = DVector::from_fn(m, |r, _| p.constraints[rows[r]].rhs / row_scale[rows[r]]);

    let mut blocks = Vec::new();
    let mut lp_cols = Vec::new();
    let mut lp_entries: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut free_vars = Vec::new();
    let mut free_entries: Vec<(f64, Vec<f64>)> = Vec::new();
    for (v, decl) in p.variables.iter().enumerate() {
        let obj = p.objective[v].as_ref();
        if decl.kind == VarKind::Psd && decl.dim >= 2 {
            let c = obj
                .map(|c| c.scale(1.0 / (obj_scale * var_scale[v])))
                .unwrap_or_else(|| CMat::zeros(decl.dim, decl.dim));
            let a: Vec<Option<CMat>> = rows
                .iter()
                .map(|&i| {
                    p.constraints[i].coefs[v]
                        .as_ref()
                        .map(|c| c.scale(1.0 / (row_scale[i] * var_scale[v])))
                })
                .collect();
            let low_rank = a
                .iter()
                .map(|c| c.as_ref().and_then(low_rank_factor))
                .collect();
            blocks.push(Block {
                var: v,
                n: decl.dim,
                c,
                a,
                low_rank,
            });
        } else {
            let c = obj.map(real).unwrap_or(0.0) / (obj_scale * var_scale[v]);
            let col: Vec<f64> = rows
                .iter()
                .map(|&i| {
                    p.constraints[i].coefs[v].as_ref().map(real).unwrap_or(0.0)
                        / (row_scale[i] * var_scale[v])
                })
                .collect();
            if decl.kind == VarKind::Psd {
                lp_cols.push(Column::Var(v));
                lp_entries.push((c, col));
            } else if col.iter().all(|&a| a == 0.0) {
                // Unconstrained free scalar: left at zero unless it is priced.
                if c != 0.0 {
                    return Preprocessed::Unbounded(decl.name.clone());
                }
            } else {
                free_vars.push(v);
                free_entries.push((c, col));
            }
        }
    }
    for (r, &i) in rows.iter().enumerate() {
        let sign = match p.constraints[i].relation {
            Relation::Le => 1.0,
            Relation::Ge => -1.0,
            Relation::Eq => continue,
        };
        let mut col = vec![0.0; m];
        col[r] = sign;
        lp_cols.push(Column::Slack);
        lp_entries.push((0.0, col));
    }
    let nl = lp_entries.len();
    let c_l = DVector::from_iterator(nl, lp_entries.iter().map(|e| e.0));
    let a_l = DMatrix::from_fn(m, nl, |r, j| lp_entries[j].1[r]);
    let nf = free_entries.len();
    let c_f = DVector::from_iterator(nf, free_entries.iter().map(|e| e.0));
    let a_f = DMatrix::from_fn(m, nf, |r, j| free_entries[j].1[r]);
    Preprocessed::Ready(Standard {
        m,
        rows,
        row_scale,
        var_scale,
        obj_scale,
        b,
        blocks,
        lp_cols,
        c_l,
        a_l,
        free_vars,
        c_f,
        a_f,
    })
}

#[derive(Clone)]
struct Point {
    xs: Vec<CMat>,
    zs: Vec<CMat>,
    xl: DVector<f64>,
    zl: DVector<f64>,
    xf: DVector<f64>,
    y: DVector<f64>,
}

struct Residuals {
    rp: DVector<f64>,
    rd: Vec<CMat>,
    rd_l: DVector<f64>,
    rd_f: DVector<f64>,
    pobj: f64,
    dobj: f64,
    comp: f64,
    pinf: f64,
    dinf: f64,
    gap: f64,
}

struct Direction {
    dxs: Vec<CMat>,
    dzs: Vec<CMat>,
    dxl: DVector<f64>,
    dzl: DVector<f64>,
    dxf: DVector<f64>,
    dy: DVector<f64>,
}

fn hermitize(m: CMat) -> CMat {
    (&m + m.adjoint()).scale(0.5)
}

fn inner(a: &CMat, b: &CMat) -> f64 {
    a.dotc(b).re
}

fn max_abs_mat(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |a, z| a.max(z.norm()))
}

fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

fn min_eig(m: &CMat) -> f64 {
    hermitize(m.clone())
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &x| a.min(x))
}

fn inverse_pd(m: &CMat) -> Option<CMat> {
    m.clone().cholesky().map(|c| hermitize(c.inverse()))
}

impl Standard {
    fn nu(&self) -> f64 {
        (self.blocks.iter().map(|b| b.n).sum::<usize>() + self.lp_cols.len()) as f64
    }

    fn apply_a(&self, xs: &[CMat], xl: &DVector<f64>, xf: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.a_l * xl + &self.a_f * xf;
        for (blk, x) in self.blocks.iter().zip(xs) {
            for (r, a) in blk.a.iter().enumerate() {
                if let Some(a) = a {
                    out[r] += inner(a, x);
                }
            }
        }
        out
    }

    fn apply_at(&self, y: &DVector<f64>) -> (Vec<CMat>, DVector<f64>, DVector<f64>) {
        let mats = self
            .blocks
            .iter()
            .map(|blk| {
                let mut s = CMat::zeros(blk.n, blk.n);
                for (r, a) in blk.a.iter().enumerate() {
                    if let Some(a) = a {
                        if y[r] != 0.0 {
                            let yr = y[r];
                            s.zip_apply(a, |dst, src| *dst += src * yr);
                        }
                    }
                }
                s
            })
            .collect();
        (mats, self.a_l.transpose() * y, self.a_f.transpose() * y)
    }

    fn initial_point(&self) -> Point {
        let mut xs = Vec::new();
        let mut zs = Vec::new();
        for blk in &self.blocks {
            let n = blk.n as f64;
            let mut xi = 10.0_f64.max(n.sqrt());
            let mut eta = xi.max(blk.c.norm());
            for (r, a) in blk.a.iter().enumerate() {
                if let Some(a) = a {
                    let an = a.norm();
                    xi = xi.max(n * (1.0 + self.b[r].abs()) / (1.0 + an));
                    eta = eta.max(an);
                }
            }
            xs.push(CMat::identity(blk.n, blk.n).scale(xi));
            zs.push(CMat::identity(blk.n, blk.n).scale(eta));
        }
        let nl = self.lp_cols.len();
        let mut xl = DVector::zeros(nl);
        let mut zl = DVector::zeros(nl);
        for j in 0..nl {
            let col = self.a_l.column(j);
            let an = col.norm();
            let mut xi = 10.0_f64;
            for r in 0..self.m {
                if col[r] != 0.0 {
                    xi = xi.max((1.0 + self.b[r].abs()) / (1.0 + an));
                }
            }
            xl[j] = xi;
            zl[j] = 10.0_f64.max(self.c_l[j].abs()).max(an);
        }
        Point {
            xs,
            zs,
            xl,
            zl,
            xf: DVector::zeros(self.free_vars.len()),
            y: DVector::zeros(self.m),
        }
    }

    fn residuals(&self, pt: &Point) -> Residuals {
        let ax = self.apply_a(&pt.xs, &pt.xl, &pt.xf);
        let rp = &self.b - ax;
        let (aty, aty_l, aty_f) = self.apply_at(&pt.y);
        let rd: Vec<CMat> = self
            .blocks
            .iter()
            .zip(&aty)
            .zip(&pt.zs)
            .map(|((blk, s), z)| &blk.c - s - z)
            .collect();
        let rd_l = &self.c_l - aty_l - &pt.zl;
        let rd_f = &self.c_f - aty_f;
        let pobj = self
            .blocks
            .iter()
            .zip(&pt.xs)
            .map(|(blk, x)| inner(&blk.c, x))
            .sum::<f64>()
            + self.c_l.dot(&pt.xl)
            + self.c_f.dot(&pt.xf);
        let dobj = self.b.dot(&pt.y);
        let comp = pt
            .xs
            .iter()
            .zip(&pt.zs)
            .map(|(x, z)| inner(x, z))
            .sum::<f64>()
            + pt.xl.dot(&pt.zl);
        // Relative to the data so badly scaled budgets do not set the floor.
        let c_peak = self
            .blocks
            .iter()
            .map(|blk| max_abs_mat(&blk.c))
            .fold(max_abs_vec(&self.c_l).max(max_abs_vec(&self.c_f)), f64::max);
        let pinf = max_abs_vec(&rp) / (1.0 + max_abs_vec(&self.b));
        let dinf = rd
            .iter()
            .map(max_abs_mat)
            .fold(max_abs_vec(&rd_l).max(max_abs_vec(&rd_f)), f64::max)
            / (1.0 + c_peak);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        Residuals {
            rp,
            rd,
            rd_l,
            rd_f,
            pobj,
            dobj,
            comp,
            pinf,
            dinf,
            gap,
        }
    }

    fn residual_term(&self, pt: &Point, res: &Residuals) -> f64 {
        res.rd
            .iter()
            .zip(&pt.xs)
            .map(|(r, x)| inner(r, x))
            .sum::<f64>()
            + res.rd_l.dot(&pt.xl)
            + res.rd_f.dot(&pt.xf)
            - pt.y.dot(&res.rp)
    }

    /// Normalized improving ray residual if `y` points toward primal infeasibility.
    fn primal_ray(&self, y: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let by = self.b.dot(y);
        if !(by > 0.0) {
            return None;
        }
        let ybar = y / by;
        let (aty, aty_l, aty_f) = self.apply_at(&ybar);
        let mut worst = 0.0_f64;
        for s in &aty {
            worst = worst.max((-min_eig(&-s)).max(0.0));
        }
        for v in aty_l.iter() {
            worst = worst.max(v.max(0.0));
        }
        for v in aty_f.iter() {
            worst = worst.max(v.abs());
        }
        Some((worst, ybar))
    }

    /// Normalized descent ray residual if `X` points toward unboundedness.
    fn dual_ray(&self, pt: &Point, pobj: f64) -> Option<f64> {
        if !(pobj < 0.0) {
            return None;
        }
        let s = -1.0 / pobj;
        let xs: Vec<CMat> = pt.xs.iter().map(|x| x.scale(s)).collect();
        let ax = self.apply_a(&xs, &(&pt.xl * s), &(&pt.xf * s));
        Some(max_abs_vec(&ax))
    }
}

/// Adds `Tr(A_i X A_j Z^-1)` for one block to `schur`.
///
/// Pairs of low-rank coefficients go through the Gram matrices `V^H X V`
/// and `V^H Z^-1 V`; anything involving a dense coefficient is formed
/// explicitly.
fn add_block_schur(schur: &mut DMatrix<f64>, blk: &Block, x: &CMat, zi: &CMat) {
    let m = blk.a.len();
    let mut owner = Vec::new();
    let mut weight = Vec::new();
    let mut cols = Vec::new();
    for (r, lr) in blk.low_rank.iter().enumerate() {
        if let Some(lr) = lr {
            for (c, w) in lr.weights.iter().enumerate() {
                owner.push(r);
                weight.push(*w);
                cols.push(lr.vecs.column(c).into_owned());
            }
        }
    }
    if !cols.is_empty() {
        let v = CMat::from_columns(&cols);
        let vh = v.adjoint();
        let gx = &vh * x * &v;
        let gz = &vh * zi * &v;
        let p = cols.len();
        for s_ in 0..p {
            for r in 0..p {
                let val = weight[r] * weight[s_] * (gx[(r, s_)] * gz[(s_, r)]).re;
                schur[(owner[r], owner[s_])] += val;
            }
        }
    }
    for j in 0..m {
        if blk.low_rank[j].is_some() {
            continue;
        }
        let Some(aj) = &blk.a[j] else { continue };
        let t = x * aj * zi;
        for i in 0..m {
            let v = match (&blk.low_rank[i], &blk.a[i]) {
                (Some(lr), _) => lr
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(c, w)| {
                        let vc = lr.vecs.column(c);
                        w * vc.dotc(&(&t * vc)).re
                    })
                    .sum::<f64>(),
                (None, Some(ai)) => ai.dotc(&t).re,
                (None, None) => continue,
            };
            schur[(i, j)] += v;
            if blk.low_rank[i].is_some() {
                schur[(j, i)] += v;
            }
        }
    }
}

/// Cached quantities for one Newton system.
struct Newton {
    zinv: Vec<CMat>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Factor of `A_f^T M^-1 A_f`, absent without free variables.
    free: Option<(DMatrix<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)>,
}

fn build_newton(sf: &Standard, pt: &Point) -> Option<Newton> {
    let m = sf.m;
    let mut schur = DMatrix::<f64>::zeros(m, m);
    let mut zinv = Vec::with_capacity(sf.blocks.len());
    for (b, blk) in sf.blocks.iter().enumerate() {
        let zi = inverse_pd(&pt.zs[b])?;
        let x = &pt.xs[b];
        add_block_schur(&mut schur, blk, x, &zi);
        zinv.push(zi);
    }
    let d = DVector::from_fn(sf.lp_cols.len(), |j, _| pt.xl[j] / pt.zl[j]);
    let mut scaled = sf.a_l.clone();
    for j in 0..scaled.ncols() {
        let dj = d[j];
        scaled.column_mut(j).scale_mut(dj);
    }
    schur += &scaled * sf.a_l.transpose();
    schur = (&schur + schur.transpose()) * 0.5;

    let peak = schur.diagonal().iter().fold(0.0_f64, |a, &x| a.max(x.abs())).max(1e-300);
    let mut reg = 0.0;
    let chol = loop {
        let mut trial = schur.clone();
        for i in 0..m {
            trial[(i, i)] += reg;
        }
        if let Some(c) = trial.cholesky() {
            break c;
        }
        reg = if reg == 0.0 { 1e-14 * peak } else { reg * 100.0 };
        if reg > 1e-4 * peak {
            return None;
        }
    };
    let free = if sf.free_vars.is_empty() {
        None
    } else {
        let minv_af = chol.solve(&sf.a_f);
        let s = sf.a_f.transpose() * &minv_af;
        let s = (&s + s.transpose()) * 0.5;
        Some((minv_af, s.cholesky()?))
    };
    Some(Newton {
        zinv,
        chol,
        free,
    })
}

fn direction(
    sf: &Standard,
    pt: &Point,
    res: &Residuals,
    nw: &Newton,
    rc: &[CMat],
    rc_l: &DVector<f64>,
) -> Direction {
    // ΔX = (Rc - X ΔZ) Z^-1 with ΔZ = Rd - A^*Δy.
    let g: Vec<CMat> = (0..sf.blocks.len())
        .map(|b| (&rc[b] - &pt.xs[b] * &res.rd[b]) * &nw.zinv[b])
        .collect();
    let g_l = DVector::from_fn(sf.lp_cols.len(), |j, _| {
        (rc_l[j] - pt.xl[j] * res.rd_l[j]) / pt.zl[j]
    });
    let h = &res.rp - sf.apply_a(&g, &g_l, &DVector::zeros(sf.free_vars.len()));
    // M dy + A_f dxf = h, A_f^T dy = rd_f.
    let solve_reduced = |h: &DVector<f64>, r: &DVector<f64>| match &nw.free {
        None => (nw.chol.solve(h), DVector::zeros(0)),
        Some((minv_af, sch)) => {
            let minv_h = nw.chol.solve(h);
            let rhs = sf.a_f.transpose() * &minv_h - r;
            let dxf = sch.solve(&rhs);
            (minv_h - minv_af * &dxf, dxf)
        }
    };
    let primal = |dy: &DVector<f64>| {
        let (aty, aty_l, _) = sf.apply_at(dy);
        let dzs: Vec<CMat> = res.rd.iter().zip(&aty).map(|(r, s)| r - s).collect();
        let dxs: Vec<CMat> = (0..sf.blocks.len())
            .map(|b| hermitize((&rc[b] - &pt.xs[b] * &dzs[b]) * &nw.zinv[b]))
            .collect();
        let dzl = &res.rd_l - aty_l;
        let dxl = DVector::from_fn(sf.lp_cols.len(), |j, _| {
            (rc_l[j] - pt.xl[j] * dzl[j]) / pt.zl[j]
        });
        (dxs, dzs, dxl, dzl)
    };
    let (mut dy, mut dxf) = solve_reduced(&h, &res.rd_f);
    let (mut dxs, mut dzs, mut dxl, mut dzl) = primal(&dy);
    // Refine against the primal equations evaluated directly, which the
    // assembled Schur complement loses once X Z^-1 spans many decades.
    for _ in 0..2 {
        let e1 = &res.rp - sf.apply_a(&dxs, &dxl, &dxf);
        let e2 = &res.rd_f - sf.a_f.transpose() * &dy;
        let (cy, cf) = solve_reduced(&e1, &e2);
        dy += cy;
        dxf += cf;
        (dxs, dzs, dxl, dzl) = primal(&dy);
    }
    Direction {
        dxs,
        dzs,
        dxl,
        dzl,
        dxf,
        dy,
    }
}

/// `L^-1` with `L L^H = x`, shared by every step-length test on `x`.
fn whitener(x: &CMat) -> Option<CMat> {
    let ch = x.clone().cholesky()?;
    let n = x.nrows();
    ch.l().solve_lower_triangular(&CMat::identity(n, n))
}

/// Largest step keeping `x + α dx` in the cone (infinite if unrestricted).
fn max_step_psd(whiten: Option<&CMat>, dx: &CMat) -> f64 {
    let Some(li) = whiten else {
        return 0.0;
    };
    let lmin = min_eig(&(li * dx * li.adjoint()));
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&xi, &d)| -xi / d)
        .fold(f64::INFINITY, f64::min)
}

struct Whiteners {
    xs: Vec<Option<CMat>>,
    zs: Vec<Option<CMat>>,
}

fn whiteners(pt: &Point) -> Whiteners {
    Whiteners {
        xs: pt.xs.iter().map(whitener).collect(),
        zs: pt.zs.iter().map(whitener).collect(),
    }
}

fn step_lengths(pt: &Point, d: &Direction, wh: &Whiteners) -> (f64, f64) {
    let mut ap = max_step_lp(&pt.xl, &d.dxl);
    let mut ad = max_step_lp(&pt.zl, &d.dzl);
    for b in 0..pt.xs.len() {
        ap = ap.min(max_step_psd(wh.xs[b].as_ref(), &d.dxs[b]));
        ad = ad.min(max_step_psd(wh.zs[b].as_ref(), &d.dzs[b]));
    }
    (ap, ad)
}

fn advance(pt: &Point, d: &Direction, ap: f64, ad: f64) -> Point {
    Point {
        xs: pt
            .xs
            .iter()
            .zip(&d.dxs)
            .map(|(x, dx)| hermitize(x + dx.scale(ap)))
            .collect(),
        zs: pt
            .zs
            .iter()
            .zip(&d.dzs)
            .map(|(z, dz)| hermitize(z + dz.scale(ad)))
            .collect(),
        xl: &pt.xl + &d.dxl * ap,
        zl: &pt.zl + &d.dzl * ad,
        xf: &pt.xf + &d.dxf * ap,
        y: &pt.y + &d.dy * ad,
    }
}

fn finite(pt: &Point) -> bool {
    let ok_m = |m: &CMat| m.iter().all(|z| z.re.is_finite() && z.im.is_finite());
    pt.xs.iter().all(ok_m)
        && pt.zs.iter().all(ok_m)
        && pt.xl.iter().chain(pt.zl.iter()).chain(pt.xf.iter()).chain(pt.y.iter()).all(|v| v.is_finite())
}

fn empty_values(p: &SdpProblem) -> Vec<CMat> {
    p.variables
        .iter()
        .map(|v| CMat::zeros(v.dim, v.dim))
        .collect()
}

fn finish(
    p: &SdpProblem,
    sf: &Standard,
    pt: &Point,
    res: &Residuals,
    status: SolveStatus,
    iterations: usize,
    log: Vec<IterateLog>,
    certificate: Option<Vec<f64>>,
    message: String,
) -> SdpSolution {
    let mut values = empty_values(p);
    for (blk, x) in sf.blocks.iter().zip(&pt.xs) {
        values[blk.var] = x.unscale(sf.var_scale[blk.var]);
    }
    for (j, col) in sf.lp_cols.iter().enumerate() {
        if let Column::Var(v) = col {
            values[*v] = CMat::from_element(1, 1, C64::new(pt.xl[j] / sf.var_scale[*v], 0.0));
        }
    }
    for (j, &v) in sf.free_vars.iter().enumerate() {
        values[v] = CMat::from_element(1, 1, C64::new(pt.xf[j] / sf.var_scale[v], 0.0));
    }
    let mut duals = vec![0.0; p.constraints.len()];
    for (r, &i) in sf.rows.iter().enumerate() {
        duals[i] = sf.obj_scale * pt.y[r] / sf.row_scale[i];
    }
    let objective = p.objective_value(&values);
    let dual_objective: f64 = p
        .constraints
        .iter()
        .zip(&duals)
        .map(|(c, y)| c.rhs * y)
        .sum();
    SdpSolution {
        status,
        values,
        objective,
        dual_objective,
        duals,
        certificate,
        iterations,
        primal_residual: res.pinf,
        dual_residual: res.dinf,
        rel_gap: (objective - dual_objective).abs()
            / (1.0 + objective.abs() + dual_objective.abs()),
        log,
        message,
    }
}

fn certificate_from(sf: &Standard, ybar: &DVector<f64>, m0: usize) -> Vec<f64> {
    let mut y = vec![0.0; m0];
    for (r, &i) in sf.rows.iter().enumerate() {
        y[i] = ybar[r] / sf.row_scale[i];
    }
    y
}

/// Solves `p`. Never panics on bad numerics; failures come back as a status.
pub fn solve(p: &SdpProblem, settings: &SdpSettings) -> SdpSolution {
    let m0 = p.constraints.len();
    let sf = match preprocess(p) {
        Preprocessed::Ready(sf) => sf,
        Preprocessed::Unbounded(name) => {
            return SdpSolution {
                status: SolveStatus::Infeasible(InfeasibilityKind::Dual),
                values: empty_values(p),
                objective: f64::NEG_INFINITY,
                dual_objective: f64::NAN,
                duals: vec![0.0; m0],
                certificate: None,
                iterations: 0,
                primal_residual: f64::NAN,
                dual_residual: f64::NAN,
                rel_gap: f64::NAN,
                log: Vec::new(),
                message: format!("unconstrained free variable `{name}` has nonzero cost"),
            };
        }
        Preprocessed::Inconsistent(y) => {
            return SdpSolution {
                status: SolveStatus::Infeasible(InfeasibilityKind::Primal),
                values: empty_values(p),
                objective: f64::NAN,
                dual_objective: f64::NAN,
                duals: vec![0.0; m0],
                certificate: Some(y),
                iterations: 0,
                primal_residual: f64::NAN,
                dual_residual: f64::NAN,
                rel_gap: f64::NAN,
                log: Vec::new(),
                message: "linearly dependent equality rows with inconsistent bounds".into(),
            };
        }
    };
    if sf.nu() == 0.0 {
        let pt = sf.initial_point();
        let res = sf.residuals(&pt);
        return finish(
            p,
            &sf,
            &pt,
            &res,
            SolveStatus::NumericalFailure,
            0,
            Vec::new(),
            None,
            "problem has no conic variables".into(),
        );
    }
    let nu = sf.nu();
    let gamma = sf.obj_scale;
    let mut pt = sf.initial_point();
    let mut log = Vec::new();
    let mut best: Option<(f64, Point)> = None;
    let mut since_best = 0usize;
    let (mut ap, mut ad) = (0.0, 0.0);

    for iter in 0..=settings.max_iter {
        let res = sf.residuals(&pt);
        let mu = res.comp / nu;
        log.push(IterateLog {
            iter,
            primal_obj: gamma * res.pobj,
            dual_obj: gamma * res.dobj,
            complementarity: gamma * res.comp,
            residual_term: gamma * sf.residual_term(&pt, &res),
            primal_residual: res.pinf,
            dual_residual: res.dinf,
            rel_gap: res.gap,
            mu,
            step_primal: ap,
            step_dual: ad,
        });
        let err = res.pinf.max(res.dinf).max(res.gap);
        if err < settings.tol {
            return finish(p, &sf, &pt, &res, SolveStatus::Optimal, iter, log, None, "converged".into());
        }
        if let Some((ray, ybar)) = sf.primal_ray(&pt.y) {
            if ray < settings.infeasibility_tol {
                let cert = certificate_from(&sf, &ybar, m0);
                return finish(
                    p,
                    &sf,
                    &pt,
                    &res,
                    SolveStatus::Infeasible(InfeasibilityKind::Primal),
                    iter,
                    log,
                    Some(cert),
                    format!("primal infeasible (ray residual {ray:.2e})"),
                );
            }
        }
        if let Some(ray) = sf.dual_ray(&pt, res.pobj) {
            if ray < settings.infeasibility_tol && res.dinf < settings.accept_tol {
                return finish(
                    p,
                    &sf,
                    &pt,
                    &res,
                    SolveStatus::Infeasible(InfeasibilityKind::Dual),
                    iter,
                    log,
                    None,
                    format!("dual infeasible (ray residual {ray:.2e})"),
                );
            }
        }
        match &best {
            Some((e, _)) if *e <= err => since_best += 1,
            _ => {
                best = Some((err, pt.clone()));
                since_best = 0;
            }
        }
        let stalled = since_best >= 15 || (iter > 0 && ap.max(ad) < 1e-10);
        if stalled || iter == settings.max_iter {
            break;
        }

        let Some(nw) = build_newton(&sf, &pt) else { break };
        let rc_aff: Vec<CMat> = pt.xs.iter().zip(&pt.zs).map(|(x, z)| -(x * z)).collect();
        let rc_l_aff = -pt.xl.component_mul(&pt.zl);
        let aff = direction(&sf, &pt, &res, &nw, &rc_aff, &rc_l_aff);
        let wh = whiteners(&pt);
        let (ap_aff, ad_aff) = step_lengths(&pt, &aff, &wh);
        let (ap_aff, ad_aff) = (ap_aff.min(1.0), ad_aff.min(1.0));
        let trial = advance(&pt, &aff, ap_aff, ad_aff);
        let mu_aff = (trial
            .xs
            .iter()
            .zip(&trial.zs)
            .map(|(x, z)| inner(x, z))
            .sum::<f64>()
            + trial.xl.dot(&trial.zl))
            / nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let rc: Vec<CMat> = (0..sf.blocks.len())
            .map(|b| {
                let n = sf.blocks[b].n;
                CMat::identity(n, n).scale(sigma * mu)
                    - &pt.xs[b] * &pt.zs[b]
                    - &aff.dxs[b] * &aff.dzs[b]
            })
            .collect();
        let rc_l = DVector::from_fn(sf.lp_cols.len(), |j, _| {
            sigma * mu - pt.xl[j] * pt.zl[j] - aff.dxl[j] * aff.dzl[j]
        });
        let dir = direction(&sf, &pt, &res, &nw, &rc, &rc_l);
        let (mp, md) = step_lengths(&pt, &dir, &wh);
        ap = (settings.step_fraction * mp).min(1.0);
        ad = (settings.step_fraction * md).min(1.0);
        let next = advance(&pt, &dir, ap, ad);
        if !finite(&next) {
            break;
        }
        pt = next;
    }

    // Stalled or out of iterations: fall back to the best iterate seen.
    let iterations = log.len().saturating_sub(1);
    let (_, bpt) = best.unwrap_or((f64::INFINITY, pt.clone()));
    let res = sf.residuals(&bpt);
    if res.pinf.max(res.dinf).max(res.gap) < settings.accept_tol {
        return finish(
            p,
            &sf,
            &bpt,
            &res,
            SolveStatus::Optimal,
            iterations,
            log,
            None,
            "stalled; accepted at reduced accuracy".into(),
        );
    }
    let last = sf.residuals(&pt);
    if let Some((ray, ybar)) = sf.primal_ray(&pt.y) {
        if ray < settings.accept_tol {
            let cert = certificate_from(&sf, &ybar, m0);
            return finish(
                p,
                &sf,
                &pt,
                &last,
                SolveStatus::Infeasible(InfeasibilityKind::Primal),
                iterations,
                log,
                Some(cert),
                format!("primal infeasible (ray residual {ray:.2e})"),
            );
        }
    }
    finish(
        p,
        &sf,
        &bpt,
        &res,
        SolveStatus::NumericalFailure,
        iterations,
        log,
        None,
        format!(
            "no convergence: primal {:.2e}, dual {:.2e}, gap {:.2e}",
            res.pinf, res.dinf, res.gap
        ),
    )
}
