//! Semidefinite relaxation of a certificate shape and a dense primal-dual
//! interior-point solver.
//!
//! Problems have the form
//!
//! ```text
//! minimise    Σ_b tr(X_b)
//! subject to  Σ_b ⟨A_k^(b), X_b⟩ + Σ_f g_kf·y_f = rhs_k   for every k
//!             X_b ⪰ 0,  y free
//! ```
//!
//! The trace objective biases solutions toward low-rank Gram matrices.

pub mod sdpa;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::certshape::CertificateShape;
use crate::frontend::NormalizedSystem;
use crate::poly::{Monomial, Polynomial, Rational};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const MAX_UNKNOWNS: usize = 10_000;
pub const MAX_CONSTRAINTS: usize = 1_500;

/// Coefficient `value` at position (i, j), i ≤ j, of a symmetric constraint
/// matrix. Off-diagonal entries stand for both (i, j) and (j, i), so they
/// contribute `2·value·X_ij` to the inner product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEntry {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearConstraint {
    pub entries: Vec<BlockEntry>,
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdpProblem {
    /// Dimension of each PSD block.
    pub blocks: Vec<usize>,
    pub n_free: usize,
    pub constraints: Vec<LinearConstraint>,
}

impl SdpProblem {
    pub fn unknowns(&self) -> usize {
        self.blocks.iter().map(|n| n * (n + 1) / 2).sum::<usize>() + self.n_free
    }

    /// Largest absolute constraint violation at (X, y).
    pub fn residual(&self, x: &[DMatrix<f64>], y: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let mut v = -c.rhs;
                for e in &c.entries {
                    let w = if e.i == e.j { 1.0 } else { 2.0 };
                    v += w * e.value * x[e.block][(e.i, e.j)];
                }
                for &(f, g) in &c.free {
                    v += g * y[f];
                }
                v.abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Feasible,
    Infeasible,
    MaxIterations,
    NumericalFailure,
    /// Stopped by the deadline or the cancel flag.
    Interrupted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub block_values: Vec<DMatrix<f64>>,
    pub free_values: Vec<f64>,
    pub status: SdpStatus,
    pub residual: f64,
    pub min_eig: f64,
    pub iterations: usize,
}

impl SdpSolution {
    fn failed(prob: &SdpProblem, status: SdpStatus, iterations: usize) -> Self {
        SdpSolution {
            block_values: prob.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
            free_values: vec![0.0; prob.n_free],
            status,
            residual: f64::INFINITY,
            min_eig: 0.0,
            iterations,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SdpError {
    #[error("relaxation too large: {unknowns} unknowns, {constraints} constraints")]
    Oversize { unknowns: usize, constraints: usize },
    #[error("external solver failed: {0}")]
    External(String),
}

/// One PSD block of a relaxation: the Gram basis of the SOS multiplier of
/// cone product `cone_index`, whose polynomial is `multiplier`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GramBlock {
    pub cone_index: usize,
    pub basis: Vec<Monomial>,
    pub multiplier: Polynomial,
}

/// Inverse map from SDP unknowns to certificate coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoeffMap {
    /// Monomial matched by each constraint, in constraint order.
    pub monomials: Vec<Monomial>,
    /// The fixed (monoid) summand of the identity.
    pub fixed: Polynomial,
    pub blocks: Vec<GramBlock>,
    /// Free variable f is the coefficient of monomial `.1` in the cofactor
    /// of equation `.0`.
    pub free: Vec<(usize, Monomial)>,
    pub equations: Vec<Polynomial>,
}

impl CoeffMap {
    /// Polynomial multiplied by Gram entry (i, j) of `block`, counting both
    /// symmetric positions.
    pub fn gram_contribution(&self, block: usize, i: usize, j: usize) -> Polynomial {
        let g = &self.blocks[block];
        let m = g.basis[i].mul(&g.basis[j]);
        let p = g.multiplier.mul_monomial(&m);
        if i == j {
            p
        } else {
            p.scale(&Rational::from_integer(2.into()))
        }
    }

    pub fn free_contribution(&self, f: usize) -> Polynomial {
        let (eq, m) = &self.free[f];
        self.equations[*eq].mul_monomial(m)
    }
}

/// Builds the linear system obtained by matching coefficients in
/// `fixed + Σ_b z_bᵀ Q_b z_b · u_b + Σ_j b_j·p_j = 0`.
pub fn build_identity(
    fixed: &Polynomial,
    blocks: Vec<GramBlock>,
    equations: Vec<Polynomial>,
    templates: &[Vec<Monomial>],
) -> Result<(SdpProblem, CoeffMap), SdpError> {
    let mut rows: BTreeMap<Monomial, LinearConstraint> = BTreeMap::new();
    let f64_of = |r: &Rational| r.to_f64().unwrap_or(f64::NAN);
    let free: Vec<(usize, Monomial)> = templates
        .iter()
        .enumerate()
        .flat_map(|(j, t)| t.iter().map(move |m| (j, m.clone())))
        .collect();
    let unknowns = blocks
        .iter()
        .map(|b| b.basis.len() * (b.basis.len() + 1) / 2)
        .sum::<usize>()
        + free.len();
    if unknowns > MAX_UNKNOWNS {
        return Err(SdpError::Oversize {
            unknowns,
            constraints: 0,
        });
    }
    for (m, c) in fixed.terms() {
        rows.entry(m.clone()).or_default().rhs = -f64_of(c);
    }
    for (b, g) in blocks.iter().enumerate() {
        for i in 0..g.basis.len() {
            for j in i..g.basis.len() {
                let zz = g.basis[i].mul(&g.basis[j]);
                for (t, c) in g.multiplier.terms() {
                    rows.entry(zz.mul(t)).or_default().entries.push(BlockEntry {
                        block: b,
                        i,
                        j,
                        value: f64_of(c),
                    });
                }
            }
        }
    }
    for (f, (eq, m)) in free.iter().enumerate() {
        for (t, c) in equations[*eq].terms() {
            rows.entry(m.mul(t)).or_default().free.push((f, f64_of(c)));
        }
    }
    if rows.len() > MAX_CONSTRAINTS {
        return Err(SdpError::Oversize {
            unknowns,
            constraints: rows.len(),
        });
    }
    let (monomials, constraints): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let prob = SdpProblem {
        blocks: blocks.iter().map(|b| b.basis.len()).collect(),
        n_free: free.len(),
        constraints,
    };
    let map = CoeffMap {
        monomials,
        fixed: fixed.clone(),
        blocks,
        free,
        equations,
    };
    Ok((prob, map))
}

/// The relaxation of `shape`: monoid product plus one Gram block per cone
/// product plus the ideal cofactors over their templates.
pub fn build_relaxation(
    sys: &NormalizedSystem,
    shape: &CertificateShape,
) -> Result<(SdpProblem, CoeffMap), SdpError> {
    let blocks = shape
        .sos_bases
        .iter()
        .enumerate()
        .map(|(k, basis)| GramBlock {
            cone_index: k,
            basis: basis.clone(),
            multiplier: shape.cone_polynomial(sys, k),
        })
        .collect();
    let equations = sys.equations.iter().map(|c| c.poly.clone()).collect();
    build_identity(
        &shape.monoid_polynomial(sys),
        blocks,
        equations,
        &shape.ideal_templates,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Builtin,
    /// Path to a csdp-compatible executable.
    External(PathBuf),
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "builtin" {
            Ok(Backend::Builtin)
        } else if let Some(path) = s.strip_prefix("external:") {
            if path.is_empty() {
                Err("external backend needs a path".into())
            } else {
                Ok(Backend::External(PathBuf::from(path)))
            }
        } else {
            Err(format!("unknown backend `{s}` (builtin | external:<path>)"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub deadline: Option<Instant>,
    pub cancel: Option<Arc<AtomicBool>>,
    pub backend: Backend,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            deadline: None,
            cancel: None,
            backend: Backend::Builtin,
        }
    }
}

impl SolveOptions {
    fn interrupted(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
            || self
                .cancel
                .as_ref()
                .is_some_and(|c| c.load(Ordering::Relaxed))
    }
}

pub fn solve(prob: &SdpProblem, tol: f64, max_iter: usize) -> SdpSolution {
    solve_with(
        prob,
        &SolveOptions {
            tol,
            max_iter,
            ..SolveOptions::default()
        },
    )
}

/// Solves with the configured backend. External solver failures are
/// reported as `NumericalFailure`.
pub fn solve_with(prob: &SdpProblem, opts: &SolveOptions) -> SdpSolution {
    match &opts.backend {
        Backend::Builtin => Ipm::new(prob, opts).run(),
        Backend::External(path) => match sdpa::solve_external(prob, path, opts.tol) {
            Ok(sol) => sol,
            Err(e) => {
                log::warn!("{e}");
                SdpSolution::failed(prob, SdpStatus::NumericalFailure, 0)
            }
        },
    }
}

/// A constraint row restricted to one block, with both symmetric positions
/// listed, plus a dense copy when that is cheaper to multiply with.
struct BlockPart {
    block: usize,
    full: Vec<(usize, usize, f64)>,
    dense: Option<DMatrix<f64>>,
}

struct Row {
    parts: Vec<BlockPart>,
    free: Vec<(usize, f64)>,
    rhs: f64,
}

impl Row {
    fn dot(&self, z: &[DMatrix<f64>]) -> f64 {
        self.parts
            .iter()
            .map(|p| p.full.iter().map(|&(a, b, w)| w * z[p.block][(a, b)]).sum::<f64>())
            .sum()
    }
}

enum Prepared {
    Rows(Vec<Row>),
    Infeasible,
}

/// Normalises rows and drops linearly dependent ones. A dependent row whose
/// right-hand side disagrees with its combination proves infeasibility.
fn prepare(prob: &SdpProblem) -> Prepared {
    let mut index: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::with_capacity(prob.constraints.len());
    let mut rhs = Vec::with_capacity(prob.constraints.len());
    let mut keep_src = Vec::new();
    let mut norms = Vec::new();
    for c in &prob.constraints {
        let mut v: BTreeMap<usize, f64> = BTreeMap::new();
        for e in &c.entries {
            let n = index.len();
            let u = *index.entry((e.block, e.i.min(e.j), e.i.max(e.j))).or_insert(n);
            // scaled so that the Euclidean geometry matches the Frobenius one
            let w = if e.i == e.j { 1.0 } else { std::f64::consts::SQRT_2 };
            *v.entry(u).or_default() += w * e.value;
        }
        for &(f, g) in &c.free {
            *v.entry(usize::MAX - f).or_default() += g;
        }
        let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            if c.rhs.abs() > 1e-12 {
                return Prepared::Infeasible;
            }
            continue;
        }
        sparse.push(v.into_iter().map(|(k, x)| (k, x / norm)).collect());
        rhs.push(c.rhs / norm);
        norms.push(norm);
        keep_src.push(c);
    }
    let m = sparse.len();
    // Gram matrix of the normalised rows
    let mut by_col: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for (r, row) in sparse.iter().enumerate() {
        for &(k, x) in row {
            by_col.entry(k).or_default().push((r, x));
        }
    }
    let mut g = DMatrix::<f64>::zeros(m, m);
    for col in by_col.values() {
        for &(r, x) in col {
            for &(s, y) in col {
                g[(r, s)] += x * y;
            }
        }
    }
    let g0 = g.clone();
    // pivoted Cholesky
    let mut perm: Vec<usize> = (0..m).collect();
    let mut rank = 0;
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut diag: Vec<f64> = (0..m).map(|i| g[(i, i)]).collect();
    while rank < m {
        let (best, &dmax) = perm[rank..]
            .iter()
            .map(|&p| &diag[p])
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (i, d)| if *d > *acc.1 { (i, d) } else { acc });
        if dmax <= 1e-10 {
            break;
        }
        perm.swap(rank, rank + best);
        let p = perm[rank];
        let lpp = dmax.sqrt();
        l[(p, rank)] = lpp;
        for &q in &perm[rank + 1..] {
            let mut s = g[(q, p)];
            for k in 0..rank {
                s -= l[(q, k)] * l[(p, k)];
            }
            l[(q, rank)] = s / lpp;
            diag[q] -= l[(q, rank)] * l[(q, rank)];
        }
        rank += 1;
    }
    if rank < m {
        let basis = &perm[..rank];
        let lb = DMatrix::from_fn(rank, rank, |i, j| l[(basis[i], j)]);
        for &r in &perm[rank..] {
            let col = DVector::from_fn(rank, |i, _| g0[(basis[i], r)]);
            let Some(y) = lb.solve_lower_triangular(&col) else {
                continue;
            };
            let Some(c) = lb.transpose().solve_upper_triangular(&y) else {
                continue;
            };
            let predicted: f64 = basis.iter().zip(c.iter()).map(|(&i, ci)| ci * rhs[i]).sum();
            let scale = 1.0 + c.iter().map(|x| x.abs()).sum::<f64>();
            if (predicted - rhs[r]).abs() > 1e-7 * scale {
                return Prepared::Infeasible;
            }
        }
    }
    let mut kept: Vec<usize> = perm[..rank].to_vec();
    kept.sort_unstable();
    let rows = kept
        .into_iter()
        .map(|r| {
            let src = keep_src[r];
            let norm = norms[r];
            let mut per_block: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
            for e in &src.entries {
                let w = e.value / norm;
                let part = per_block.entry(e.block).or_default();
                part.push((e.i, e.j, w));
                if e.i != e.j {
                    part.push((e.j, e.i, w));
                }
            }
            let parts = per_block
                .into_iter()
                .map(|(block, full)| {
                    let n = prob.blocks[block];
                    let dense = (full.len() > 2 * n).then(|| {
                        let mut a = DMatrix::zeros(n, n);
                        for &(i, j, w) in &full {
                            a[(i, j)] += w;
                        }
                        a
                    });
                    BlockPart { block, full, dense }
                })
                .collect();
            Row {
                parts,
                free: src.free.iter().map(|&(f, g)| (f, g / norm)).collect(),
                rhs: rhs[r],
            }
        })
        .collect();
    Prepared::Rows(rows)
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Largest α with x + α·dx ⪰ 0 (infinite when dx ⪰ 0).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    if x.nrows() == 0 {
        return Some(f64::INFINITY);
    }
    let l = x.clone().cholesky()?.unpack();
    let y = l.solve_lower_triangular(dx)?;
    let w = l.solve_lower_triangular(&y.transpose())?;
    let min = SymmetricEigen::new(sym(&w))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Some(if min < 0.0 { -1.0 / min } else { f64::INFINITY })
}

fn min_eigenvalue(x: &[DMatrix<f64>]) -> f64 {
    x.iter()
        .filter(|m| m.nrows() > 0)
        .map(|m| {
            SymmetricEigen::new(m.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

struct Ipm<'a> {
    prob: &'a SdpProblem,
    opts: &'a SolveOptions,
}

struct Newton {
    dx: Vec<DMatrix<f64>>,
    ds: Vec<DMatrix<f64>>,
    dy: Vec<f64>,
    dlam: Vec<f64>,
}

impl<'a> Ipm<'a> {
    fn new(prob: &'a SdpProblem, opts: &'a SolveOptions) -> Self {
        Ipm { prob, opts }
    }

    fn run(&self) -> SdpSolution {
        let prob = self.prob;
        let rows = match prepare(prob) {
            Prepared::Rows(r) => r,
            Prepared::Infeasible => return SdpSolution::failed(prob, SdpStatus::Infeasible, 0),
        };
        let m = rows.len();
        let nf = prob.n_free;
        let total_dim: usize = prob.blocks.iter().sum();
        let mut x: Vec<DMatrix<f64>> = prob.blocks.iter().map(|&n| DMatrix::identity(n, n)).collect();
        let mut s = x.clone();
        let mut y = vec![0.0; nf];
        let mut lam = vec![0.0; m];
        let mut rows_of_block: Vec<Vec<(usize, usize)>> = vec![Vec::new(); prob.blocks.len()];
        for (k, r) in rows.iter().enumerate() {
            for (pi, p) in r.parts.iter().enumerate() {
                rows_of_block[p.block].push((k, pi));
            }
        }
        let ptol = self.opts.tol * 1e-2;
        let mut stalls = 0;
        let mut best: Option<(f64, Vec<DMatrix<f64>>, Vec<f64>)> = None;
        let mut status = SdpStatus::MaxIterations;
        let mut iterations = 0;

        for it in 0..self.opts.max_iter {
            iterations = it;
            if self.opts.interrupted() {
                status = SdpStatus::Interrupted;
                break;
            }
            let at_lam = self.adjoint(&rows, &lam);
            let rp: Vec<f64> = rows
                .iter()
                .map(|r| {
                    r.rhs - r.dot(&x) - r.free.iter().map(|&(f, g)| g * y[f]).sum::<f64>()
                })
                .collect();
            let rd: Vec<DMatrix<f64>> = (0..x.len())
                .map(|b| {
                    let n = prob.blocks[b];
                    DMatrix::identity(n, n) - &s[b] - &at_lam[b]
                })
                .collect();
            let mut rf = vec![0.0; nf];
            for (k, r) in rows.iter().enumerate() {
                for &(f, g) in &r.free {
                    rf[f] -= g * lam[k];
                }
            }
            let xs: f64 = x.iter().zip(&s).map(|(a, b)| inner(a, b)).sum();
            let mu = if total_dim > 0 { xs / total_dim as f64 } else { 0.0 };
            let pinf = rp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let dinf = rd
                .iter()
                .map(|m| m.amax())
                .chain(rf.iter().map(|v| v.abs()))
                .fold(0.0f64, f64::max);
            let pobj: f64 = x.iter().map(|m| m.trace()).sum();
            let dobj: f64 = rows.iter().zip(&lam).map(|(r, l)| r.rhs * l).sum();
            log::trace!("it {it}: pinf {pinf:.2e} dinf {dinf:.2e} mu {mu:.2e} pobj {pobj:.6} dobj {dobj:.6}");

            let res = prob.residual(&x, &y);
            if res <= self.opts.tol && best.as_ref().map_or(true, |b: &(f64, _, _)| xs < b.0) {
                best = Some((xs, x.clone(), y.clone()));
            }
            if (pinf <= ptol || res <= 0.1 * self.opts.tol)
                && dinf <= 1e-8
                && xs <= 1e-9 * (1.0 + pobj.abs())
            {
                status = SdpStatus::Feasible;
                break;
            }
            if dobj > 1e8 && dinf <= 1e-6 * (1.0 + lam.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
                status = SdpStatus::Infeasible;
                break;
            }
            if total_dim == 0 && pinf <= ptol {
                status = SdpStatus::Feasible;
                break;
            }

            let Some(sinv) = s
                .iter()
                .map(|sb| sb.clone().cholesky().map(|c| c.inverse()))
                .collect::<Option<Vec<_>>>()
            else {
                status = SdpStatus::NumericalFailure;
                break;
            };
            let Some(kkt) = self.factor(&rows, &rows_of_block, &x, &sinv) else {
                status = SdpStatus::NumericalFailure;
                break;
            };

            // predictor
            let z: Vec<DMatrix<f64>> = (0..x.len())
                .map(|b| -&x[b] - &x[b] * &rd[b] * &sinv[b])
                .collect();
            let Some(pred) = self.direction(&rows, &kkt, &rp, &rd, &rf, &z, &x, &sinv, 0.0, None) else {
                status = SdpStatus::NumericalFailure;
                break;
            };
            let (ap, ad) = match self.steps(&x, &s, &pred, 1.0) {
                Some(v) => v,
                None => {
                    status = SdpStatus::NumericalFailure;
                    break;
                }
            };
            let mu_aff = if total_dim > 0 {
                (0..x.len())
                    .map(|b| inner(&(&x[b] + &pred.dx[b] * ap), &(&s[b] + &pred.ds[b] * ad)))
                    .sum::<f64>()
                    / total_dim as f64
            } else {
                0.0
            };
            let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

            // corrector
            let corr: Vec<DMatrix<f64>> = (0..x.len())
                .map(|b| &pred.dx[b] * &pred.ds[b] * &sinv[b])
                .collect();
            let z: Vec<DMatrix<f64>> = (0..x.len())
                .map(|b| &sinv[b] * (sigma * mu) - &x[b] - &x[b] * &rd[b] * &sinv[b] - &corr[b])
                .collect();
            let Some(dir) =
                self.direction(&rows, &kkt, &rp, &rd, &rf, &z, &x, &sinv, sigma * mu, Some(&corr))
            else {
                status = SdpStatus::NumericalFailure;
                break;
            };
            let (ap, ad) = match self.steps(&x, &s, &dir, 0.95) {
                Some(v) => v,
                None => {
                    status = SdpStatus::NumericalFailure;
                    break;
                }
            };
            for b in 0..x.len() {
                x[b] += &dir.dx[b] * ap;
                s[b] += &dir.ds[b] * ad;
                x[b] = sym(&x[b]);
                s[b] = sym(&s[b]);
            }
            for (yf, d) in y.iter_mut().zip(&dir.dy) {
                *yf += ap * d;
            }
            for (l, d) in lam.iter_mut().zip(&dir.dlam) {
                *l += ad * d;
            }
            if ap < 1e-8 && ad < 1e-8 {
                stalls += 1;
                if stalls >= 3 {
                    status = SdpStatus::NumericalFailure;
                    break;
                }
            } else {
                stalls = 0;
            }
            iterations = it + 1;
        }

        if !matches!(status, SdpStatus::Infeasible | SdpStatus::Interrupted | SdpStatus::Feasible) {
            if let Some((_, bx, by)) = best {
                x = bx;
                y = by;
            }
        }
        if !matches!(status, SdpStatus::Infeasible | SdpStatus::Interrupted) {
            for _ in 0..2 {
                if let Some((px, py)) = polish(prob, &rows, &x, &y) {
                    if prob.residual(&px, &py) < prob.residual(&x, &y)
                        && min_eigenvalue(&px) >= -self.opts.tol
                    {
                        x = px;
                        y = py;
                    }
                }
            }
        }
        let residual = prob.residual(&x, &y);
        let min_eig = min_eigenvalue(&x);
        let tol = self.opts.tol;
        let status = match status {
            SdpStatus::Infeasible | SdpStatus::Interrupted => status,
            _ if residual <= tol && min_eig >= -tol => SdpStatus::Feasible,
            SdpStatus::Feasible => SdpStatus::NumericalFailure,
            other => other,
        };
        SdpSolution {
            block_values: x,
            free_values: y,
            status,
            residual,
            min_eig: if min_eig.is_finite() { min_eig } else { 0.0 },
            iterations,
        }
    }

    /// Σ_k λ_k A_k per block.
    fn adjoint(&self, rows: &[Row], lam: &[f64]) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.prob.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (r, &l) in rows.iter().zip(lam) {
            if l == 0.0 {
                continue;
            }
            for p in &r.parts {
                for &(i, j, w) in &p.full {
                    out[p.block][(i, j)] += l * w;
                }
            }
        }
        out
    }

    /// Factorises the system [[M, G], [Gᵀ, 0]] with M_kl = tr(A_k X A_l S⁻¹).
    fn factor(
        &self,
        rows: &[Row],
        rows_of_block: &[Vec<(usize, usize)>],
        x: &[DMatrix<f64>],
        sinv: &[DMatrix<f64>],
    ) -> Option<Kkt> {
        let m = rows.len();
        let nf = self.prob.n_free;
        let mut mm = DMatrix::<f64>::zeros(m, m);
        for (b, members) in rows_of_block.iter().enumerate() {
            let n = self.prob.blocks[b];
            for &(l, pl) in members {
                let part = &rows[l].parts[pl];
                let p = match &part.dense {
                    Some(a) => &x[b] * a * &sinv[b],
                    None => {
                        let mut p = DMatrix::<f64>::zeros(n, n);
                        for &(i, j, w) in &part.full {
                            // p += w · X[:, i] · S⁻¹[j, :]
                            for q in 0..n {
                                let sj = w * sinv[b][(j, q)];
                                if sj == 0.0 {
                                    continue;
                                }
                                for r in 0..n {
                                    p[(r, q)] += x[b][(r, i)] * sj;
                                }
                            }
                        }
                        p
                    }
                };
                for &(k, pk) in members {
                    if k < l {
                        continue;
                    }
                    let v: f64 = rows[k].parts[pk]
                        .full
                        .iter()
                        .map(|&(i, j, w)| w * p[(i, j)])
                        .sum();
                    mm[(k, l)] += v;
                    if k != l {
                        mm[(l, k)] += v;
                    }
                }
            }
        }
        if nf == 0 {
            if let Some(ch) = mm.clone().cholesky() {
                return Some(Kkt::Chol(ch));
            }
        }
        let mut kkt = DMatrix::<f64>::zeros(m + nf, m + nf);
        kkt.view_mut((0, 0), (m, m)).copy_from(&mm);
        for (k, r) in rows.iter().enumerate() {
            for &(f, g) in &r.free {
                kkt[(k, m + f)] += g;
                kkt[(m + f, k)] += g;
            }
        }
        Some(Kkt::Lu(kkt.lu()))
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        rows: &[Row],
        kkt: &Kkt,
        rp: &[f64],
        rd: &[DMatrix<f64>],
        rf: &[f64],
        z: &[DMatrix<f64>],
        x: &[DMatrix<f64>],
        sinv: &[DMatrix<f64>],
        target: f64,
        corr: Option<&Vec<DMatrix<f64>>>,
    ) -> Option<Newton> {
        let m = rows.len();
        let nf = self.prob.n_free;
        let mut rhs = DVector::<f64>::zeros(m + nf);
        for (k, r) in rows.iter().enumerate() {
            rhs[k] = rp[k] - r.dot(z);
        }
        for f in 0..nf {
            rhs[m + f] = rf[f];
        }
        let sol = kkt.solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dlam: Vec<f64> = sol.iter().take(m).copied().collect();
        let dy: Vec<f64> = sol.iter().skip(m).copied().collect();
        let at = self.adjoint(rows, &dlam);
        let mut ds = Vec::with_capacity(x.len());
        let mut dx = Vec::with_capacity(x.len());
        for b in 0..x.len() {
            let dsb = &rd[b] - &at[b];
            let mut dxh = &sinv[b] * target - &x[b] - &x[b] * &dsb * &sinv[b];
            if let Some(c) = corr {
                dxh -= &c[b];
            }
            dx.push(sym(&dxh));
            ds.push(dsb);
        }
        Some(Newton { dx, ds, dy, dlam })
    }

    fn steps(&self, x: &[DMatrix<f64>], s: &[DMatrix<f64>], d: &Newton, frac: f64) -> Option<(f64, f64)> {
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for b in 0..x.len() {
            ap = ap.min(max_step(&x[b], &d.dx[b])?);
            ad = ad.min(max_step(&s[b], &d.ds[b])?);
        }
        Some(((frac * ap).min(1.0), (frac * ad).min(1.0)))
    }
}

/// Least-norm correction (ΔX, Δy) = Aᵀw with (AAᵀ)w equal to the primal
/// residual, which removes the residual left by a stalled iteration.
fn polish(
    prob: &SdpProblem,
    rows: &[Row],
    x: &[DMatrix<f64>],
    y: &[f64],
) -> Option<(Vec<DMatrix<f64>>, Vec<f64>)> {
    let m = rows.len();
    let mut cols: BTreeMap<(usize, usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for (k, r) in rows.iter().enumerate() {
        for p in &r.parts {
            for &(i, j, w) in &p.full {
                cols.entry((p.block, i, j)).or_default().push((k, w));
            }
        }
        for &(f, g) in &r.free {
            cols.entry((usize::MAX, f, 0)).or_default().push((k, g));
        }
    }
    let mut g = DMatrix::<f64>::zeros(m, m);
    for col in cols.values() {
        for &(k, a) in col {
            for &(l, b) in col {
                g[(k, l)] += a * b;
            }
        }
    }
    let rp = DVector::from_iterator(
        m,
        rows.iter().map(|r| {
            r.rhs - r.dot(x) - r.free.iter().map(|&(f, c)| c * y[f]).sum::<f64>()
        }),
    );
    let w = g.cholesky()?.solve(&rp);
    let mut px = x.to_vec();
    let mut py = y.to_vec();
    for (r, wk) in rows.iter().zip(w.iter()) {
        for p in &r.parts {
            for &(i, j, a) in &p.full {
                px[p.block][(i, j)] += wk * a;
            }
        }
        for &(f, c) in &r.free {
            py[f] += wk * c;
        }
    }
    debug_assert_eq!(px.len(), prob.blocks.len());
    Some((px, py))
}

enum Kkt {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Kkt {
    fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Kkt::Chol(c) => Some(c.solve(rhs)),
            Kkt::Lu(lu) => lu.solve(rhs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Variables;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entry(i: usize, j: usize, value: f64) -> BlockEntry {
        BlockEntry { block: 0, i, j, value }
    }

    fn single(entries: Vec<BlockEntry>, rhs: f64) -> LinearConstraint {
        LinearConstraint { entries, free: vec![], rhs }
    }

    #[test]
    fn rank_one_completion() {
        let prob = SdpProblem {
            blocks: vec![2],
            n_free: 0,
            constraints: vec![
                single(vec![entry(0, 0, 1.0)], 1.0),
                single(vec![entry(1, 1, 1.0)], 1.0),
                single(vec![entry(0, 1, 0.5)], 1.0),
            ],
        };
        let sol = solve(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(sol.status, SdpStatus::Feasible);
        let x = &sol.block_values[0];
        for v in x.iter() {
            assert!((v - 1.0).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn negative_scalar_is_infeasible() {
        let prob = SdpProblem {
            blocks: vec![1],
            n_free: 0,
            constraints: vec![single(vec![entry(0, 0, 1.0)], -1.0)],
        };
        let sol = solve(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn matching_square_of_x_plus_one() {
        let vars = Variables::from_names(["X"]);
        let x = vars.get("X").unwrap();
        let target = Polynomial::parse("X^2 + 2*X + 1", &vars).unwrap();
        let block = GramBlock {
            cone_index: 0,
            basis: vec![Monomial::one(), Monomial::var(x)],
            multiplier: Polynomial::one(),
        };
        let (prob, map) = build_identity(&-target, vec![block], vec![], &[]).unwrap();
        let shown: Vec<_> = map.monomials.iter().map(|m| m.display(&vars).to_string()).collect();
        assert_eq!(shown, ["X^2", "X", "1"]);
        assert_eq!(prob.constraints[0], single(vec![entry(1, 1, 1.0)], 1.0));
        assert_eq!(prob.constraints[1], single(vec![entry(0, 1, 1.0)], 2.0));
        assert_eq!(prob.constraints[2], single(vec![entry(0, 0, 1.0)], 1.0));
        let sol = solve(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert!(sol.residual <= DEFAULT_TOL);
        for v in sol.block_values[0].iter() {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_system_has_no_refutation() {
        let vars = Variables::from_names(["X"]);
        let x = vars.get("X").unwrap();
        let block = GramBlock {
            cone_index: 0,
            basis: vec![Monomial::one(), Monomial::var(x)],
            multiplier: Polynomial::one(),
        };
        let (prob, _) = build_identity(&Polynomial::one(), vec![block], vec![], &[]).unwrap();
        let sol = solve(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_ne!(sol.status, SdpStatus::Feasible);
    }

    #[test]
    fn free_variables_and_dependent_rows() {
        // X00 + y = 3, X11 - y = -1, X00 + X11 = 2 (dependent)
        let prob = SdpProblem {
            blocks: vec![2],
            n_free: 1,
            constraints: vec![
                LinearConstraint { entries: vec![entry(0, 0, 1.0)], free: vec![(0, 1.0)], rhs: 3.0 },
                LinearConstraint { entries: vec![entry(1, 1, 1.0)], free: vec![(0, -1.0)], rhs: -1.0 },
                single(vec![entry(0, 0, 1.0), entry(1, 1, 1.0)], 2.0),
            ],
        };
        let sol = solve(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(sol.status, SdpStatus::Feasible);
        assert!(prob.residual(&sol.block_values, &sol.free_values) <= 1e-8);

        let mut bad = prob.clone();
        bad.constraints[2].rhs = 5.0;
        assert_eq!(solve(&bad, DEFAULT_TOL, DEFAULT_MAX_ITER).status, SdpStatus::Infeasible);
    }

    #[test]
    fn deadline_interrupts() {
        let prob = SdpProblem {
            blocks: vec![1],
            n_free: 0,
            constraints: vec![single(vec![entry(0, 0, 1.0)], 1.0)],
        };
        let opts = SolveOptions {
            deadline: Some(Instant::now()),
            ..SolveOptions::default()
        };
        assert_eq!(solve_with(&prob, &opts).status, SdpStatus::Interrupted);
    }

    #[test]
    fn planted_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.gen_range(2..8);
            let m = rng.gen_range(1..n * (n + 1) / 2);
            let prob = planted(&mut rng, n, m);
            let sol = solve(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER);
            assert_eq!(sol.status, SdpStatus::Feasible);
            assert!(prob.residual(&sol.block_values, &sol.free_values) <= DEFAULT_TOL);
        }
    }

    fn planted(rng: &mut ChaCha8Rng, n: usize, m: usize) -> SdpProblem {
        let r = rng.gen_range(1..=n);
        let f = DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
        let x = &f * f.transpose();
        let constraints = (0..m)
            .map(|_| {
                let mut entries = Vec::new();
                for i in 0..n {
                    for j in i..n {
                        if rng.gen_bool(0.5) {
                            entries.push(entry(i, j, rng.gen_range(-1.0..1.0)));
                        }
                    }
                }
                let rhs = entries
                    .iter()
                    .map(|e| if e.i == e.j { 1.0 } else { 2.0 } * e.value * x[(e.i, e.j)])
                    .sum();
                single(entries, rhs)
            })
            .collect();
        SdpProblem {
            blocks: vec![n],
            n_free: 0,
            constraints,
        }
    }
}
