//! Recovery of an exact certificate from a floating-point SDP solution.
//!
//! For each denominator of the schedule: round every unknown to that
//! denominator, restrict the Gram matrices to rows with positive diagonal,
//! repair the identity exactly with a least-norm correction, then split the
//! Gram matrices into weighted squares by exact LDLᵀ. The first candidate
//! that verifies is returned.
//!
//! When the certificate lies on a face of the PSD cone (singular Gram
//! matrices), rounding alone never lands on that face. A second pass then
//! reads each block's numerical range off its eigenvalues, rationalizes a
//! row-reduced basis of it, and rounds and repairs the smaller Gram matrix
//! written over that polynomial basis.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub use crate::certificate::SosDecomposition;
use crate::certificate::{verify, Certificate, ConeTerm, IdealCofactor};
use crate::certshape::CertificateShape;
use crate::frontend::NormalizedSystem;
use crate::poly::{Monomial, Polynomial, Rational};
use crate::sdp::{build_relaxation, CoeffMap, SdpSolution, SdpStatus};

pub type RatMatrix = Vec<Vec<Rational>>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RationalizeError {
    #[error("matrix is not positive semidefinite (pivot {pivot})")]
    NotPsd { pivot: Rational },
    #[error("residual cannot be absorbed: {0}")]
    Irreparable(String),
    #[error("SDP solution is not feasible")]
    NotFeasible,
    #[error("no denominator up to 2^{max_exp} gave a valid certificate")]
    RecoveryFailed { max_exp: u32 },
    #[error("recovery interrupted")]
    Interrupted,
}

/// Ascending powers of two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundingSchedule {
    pub denominators: Vec<BigInt>,
}

impl RoundingSchedule {
    /// 2⁰, 2¹, …, 2^max_exp.
    pub fn up_to(max_exp: u32) -> Self {
        RoundingSchedule {
            denominators: (0..=max_exp).map(|k| BigInt::one() << k).collect(),
        }
    }

    /// Schedule capped at the largest power of two not above `max`.
    pub fn capped(max: &BigInt) -> Self {
        let mut out = Vec::new();
        let mut d = BigInt::one();
        while &d <= max && out.len() <= 64 {
            out.push(d.clone());
            d <<= 1;
        }
        RoundingSchedule { denominators: out }
    }

    fn max_exp(&self) -> u32 {
        self.denominators
            .last()
            .map_or(0, |d| d.bits().saturating_sub(1) as u32)
    }
}

impl Default for RoundingSchedule {
    fn default() -> Self {
        RoundingSchedule::up_to(64)
    }
}

/// Nearest multiple of 1/denom, ties to the even numerator.
pub fn round_scalar(v: f64, denom: &BigInt) -> Rational {
    let Some(exact) = Rational::from_float(v) else {
        return Rational::zero();
    };
    let t = exact * Rational::from_integer(denom.clone());
    let fl = t.floor();
    let frac = &t - &fl;
    let half = Rational::new(1.into(), 2.into());
    let mut n = fl.to_integer();
    if frac > half || (frac == half && n.is_odd()) {
        n += 1;
    }
    Rational::new(n, denom.clone())
}

/// Entrywise rounding of a symmetric matrix; the upper triangle is rounded
/// and mirrored.
pub fn round_matrix(m: &DMatrix<f64>, denom: &BigInt) -> RatMatrix {
    let n = m.nrows();
    let mut out = vec![vec![Rational::zero(); n]; n];
    for i in 0..n {
        for j in i..n {
            let r = round_scalar(m[(i, j)], denom);
            out[j][i] = r.clone();
            out[i][j] = r;
        }
    }
    out
}

/// Exact LDLᵀ with diagonal pivoting: `zᵀqz = Σ dᵢ·(row polynomial)²`.
pub fn ldlt_sos(q: &RatMatrix, basis: &[Monomial]) -> Result<SosDecomposition, RationalizeError> {
    let polys: Vec<Polynomial> = basis
        .iter()
        .map(|m| Polynomial::term(Rational::one(), m.clone()))
        .collect();
    ldlt_sos_over(q, &polys)
}

/// [`ldlt_sos`] with an arbitrary polynomial basis.
pub fn ldlt_sos_over(q: &RatMatrix, basis: &[Polynomial]) -> Result<SosDecomposition, RationalizeError> {
    let n = q.len();
    let mut a = q.clone();
    let mut left: Vec<usize> = (0..n).collect();
    let mut squares = Vec::new();
    while !left.is_empty() {
        let (pos, p) = left
            .iter()
            .copied()
            .enumerate()
            .fold(None::<(usize, usize)>, |best, (k, i)| match best {
                Some((_, b)) if a[b][b] >= a[i][i] => best,
                _ => Some((k, i)),
            })
            .expect("nonempty");
        let d = a[p][p].clone();
        if !d.is_positive() {
            if let Some(neg) = left.iter().map(|&i| &a[i][i]).filter(|v| v.is_negative()).min() {
                return Err(RationalizeError::NotPsd { pivot: neg.clone() });
            }
            for &i in &left {
                for &j in &left {
                    if i != j && !a[i][j].is_zero() {
                        return Err(RationalizeError::NotPsd {
                            pivot: Rational::zero(),
                        });
                    }
                }
            }
            break;
        }
        left.remove(pos);
        let l: Vec<Rational> = left.iter().map(|&i| &a[i][p] / &d).collect();
        let mut poly = basis[p].clone();
        for (&i, li) in left.iter().zip(&l) {
            if !li.is_zero() {
                poly = &poly + &basis[i].scale(li);
            }
        }
        for (x, &i) in left.iter().enumerate() {
            if l[x].is_zero() {
                continue;
            }
            for (y, &j) in left.iter().enumerate() {
                if l[y].is_zero() {
                    continue;
                }
                let upd = &l[x] * &l[y] * &d;
                a[i][j] -= upd;
            }
        }
        squares.push((d, poly));
    }
    Ok(SosDecomposition { squares })
}

/// Rescales `w·p²` so that `p` has coprime integer coefficients and a
/// positive leading coefficient.
pub fn normalize_square(w: &Rational, p: &Polynomial) -> (Rational, Polynomial) {
    let Some((_, lead)) = p.leading() else {
        return (w.clone(), p.clone());
    };
    let mut den = BigInt::one();
    let mut num = BigInt::zero();
    for (_, c) in p.terms() {
        den = den.lcm(c.denom());
    }
    for (_, c) in p.terms() {
        num = num.gcd(&(c.numer() * (&den / c.denom())));
    }
    let mut scale = Rational::new(den, num);
    if lead.is_negative() {
        scale = -scale;
    }
    let np = p.scale(&scale);
    let nw = w / (&scale * &scale);
    (nw, np)
}

/// The identity's unknowns with every Gram block written over a polynomial
/// basis: the monomial basis of the relaxation, or a reduced one.
#[derive(Debug, Clone)]
struct Frame<'a> {
    map: &'a CoeffMap,
    bases: Vec<Vec<Polynomial>>,
}

impl<'a> Frame<'a> {
    fn monomial(map: &'a CoeffMap) -> Self {
        let bases = map
            .blocks
            .iter()
            .map(|b| {
                b.basis
                    .iter()
                    .map(|m| Polynomial::term(Rational::one(), m.clone()))
                    .collect()
            })
            .collect();
        Frame { map, bases }
    }

    fn gram_contribution(&self, block: usize, i: usize, j: usize) -> Polynomial {
        let basis = &self.bases[block];
        let p = &(&basis[i] * &basis[j]) * &self.map.blocks[block].multiplier;
        if i == j {
            p
        } else {
            p.scale(&Rational::from_integer(2.into()))
        }
    }
}

/// Rounded values of every unknown of a relaxation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub grams: Vec<RatMatrix>,
    pub free: Vec<Rational>,
}

impl Candidate {
    pub fn round(sol: &SdpSolution, denom: &BigInt) -> Self {
        Candidate {
            grams: sol.block_values.iter().map(|m| round_matrix(m, denom)).collect(),
            free: sol.free_values.iter().map(|&v| round_scalar(v, denom)).collect(),
        }
    }

    /// Zeroes every row and column whose diagonal entry is not positive.
    pub fn restrict_to_active(&mut self) {
        for g in &mut self.grams {
            let n = g.len();
            let active: Vec<bool> = (0..n).map(|i| g[i][i].is_positive()).collect();
            for i in 0..n {
                for j in 0..n {
                    if !active[i] || !active[j] {
                        g[i][j] = Rational::zero();
                    }
                }
            }
        }
    }

    /// The exact left side of the identity at these values.
    pub fn residual(&self, map: &CoeffMap) -> Polynomial {
        self.residual_in(&Frame::monomial(map))
    }

    fn residual_in(&self, frame: &Frame) -> Polynomial {
        let map = frame.map;
        let mut acc: BTreeMap<Monomial, Rational> = BTreeMap::new();
        let mut add = |p: Polynomial, c: &Rational| {
            for (m, v) in p.terms() {
                *acc.entry(m.clone()).or_insert_with(Rational::zero) += v * c;
            }
        };
        add(map.fixed.clone(), &Rational::one());
        for (b, g) in self.grams.iter().enumerate() {
            for i in 0..g.len() {
                for j in i..g.len() {
                    if !g[i][j].is_zero() {
                        add(frame.gram_contribution(b, i, j), &g[i][j]);
                    }
                }
            }
        }
        for (f, v) in self.free.iter().enumerate() {
            if !v.is_zero() {
                add(map.free_contribution(f), v);
            }
        }
        Polynomial::from_terms(acc)
    }
}

#[derive(Clone, Copy)]
enum Unknown {
    Gram(usize, usize, usize),
    Free(usize),
}

/// Makes the identity exact by the least-norm change of the adjustable
/// unknowns: Gram entries between active rows, and every cofactor
/// coefficient.
pub fn repair_identity(map: &CoeffMap, cand: &Candidate) -> Result<Candidate, RationalizeError> {
    repair_in(&Frame::monomial(map), cand, None)
}

fn repair_in(frame: &Frame, cand: &Candidate, deadline: Option<Instant>) -> Result<Candidate, RationalizeError> {
    let map = frame.map;
    let delta = cand.residual_in(frame);
    if delta.is_zero() {
        return Ok(cand.clone());
    }
    let mut unknowns = Vec::new();
    let mut columns: Vec<Polynomial> = Vec::new();
    for (b, g) in cand.grams.iter().enumerate() {
        let n = g.len();
        for i in 0..n {
            if !g[i][i].is_positive() {
                continue;
            }
            for j in i..n {
                if g[j][j].is_positive() {
                    unknowns.push(Unknown::Gram(b, i, j));
                    columns.push(frame.gram_contribution(b, i, j));
                }
            }
        }
    }
    for f in 0..cand.free.len() {
        unknowns.push(Unknown::Free(f));
        columns.push(map.free_contribution(f));
    }
    let mut row_of: BTreeMap<Monomial, usize> = BTreeMap::new();
    for p in columns.iter().chain(std::iter::once(&delta)) {
        for (m, _) in p.terms() {
            let n = row_of.len();
            row_of.entry(m.clone()).or_insert(n);
        }
    }
    let m = row_of.len();
    let sparse: Vec<Vec<(usize, Rational)>> = columns
        .iter()
        .map(|p| p.terms().map(|(mm, c)| (row_of[mm], c.clone())).collect())
        .collect();
    let mut gram = vec![vec![Rational::zero(); m]; m];
    for col in &sparse {
        for (r, a) in col {
            for (s, b) in col {
                gram[*r][*s] += a * b;
            }
        }
    }
    let mut rhs = vec![Rational::zero(); m];
    for (mm, c) in delta.terms() {
        rhs[row_of[mm]] = -c;
    }
    let w = solve_consistent(gram, rhs, deadline)?;
    let mut out = cand.clone();
    for (u, col) in unknowns.iter().zip(&sparse) {
        let mut d = Rational::zero();
        for (r, a) in col {
            d += a * &w[*r];
        }
        if d.is_zero() {
            continue;
        }
        match *u {
            Unknown::Gram(b, i, j) => {
                out.grams[b][i][j] += &d;
                if i != j {
                    out.grams[b][j][i] += d;
                }
            }
            Unknown::Free(f) => out.free[f] += d,
        }
    }
    debug_assert!(out.residual_in(frame).is_zero());
    Ok(out)
}

/// Some solution of `a·x = b` by exact Gaussian elimination.
fn solve_consistent(
    mut a: Vec<Vec<Rational>>,
    mut b: Vec<Rational>,
    deadline: Option<Instant>,
) -> Result<Vec<Rational>, RationalizeError> {
    let m = a.len();
    let n = a.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Err(RationalizeError::Interrupted);
        }
        let Some(p) = (row..m).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(row, p);
        b.swap(row, p);
        let inv = a[row][col].recip();
        for c in col..n {
            a[row][c] *= &inv;
        }
        b[row] *= &inv;
        let (top, rest) = a.split_at_mut(row + 1);
        let prow = &top[row];
        for (k, r) in rest.iter_mut().enumerate() {
            let f = r[col].clone();
            if f.is_zero() {
                continue;
            }
            for c in col..n {
                if !prow[c].is_zero() {
                    r[c] -= &f * &prow[c];
                }
            }
            let t = &f * &b[row];
            b[row + 1 + k] -= t;
        }
        pivots.push(col);
        row += 1;
        if row == m {
            break;
        }
    }
    if b[row..].iter().any(|v| !v.is_zero()) {
        return Err(RationalizeError::Irreparable(
            "residual touches monomials no unknown can reach".into(),
        ));
    }
    let mut x = vec![Rational::zero(); n];
    for (r, &col) in pivots.iter().enumerate().rev() {
        let mut v = b[r].clone();
        for c in col + 1..n {
            if !a[r][c].is_zero() {
                v -= &a[r][c] * &x[c];
            }
        }
        x[col] = v;
    }
    Ok(x)
}

/// Turns a repaired candidate into a certificate.
fn certificate_from(
    sys: &NormalizedSystem,
    shape: &CertificateShape,
    frame: &Frame,
    cand: &Candidate,
) -> Result<Certificate, RationalizeError> {
    let map = frame.map;
    let mut cone_terms = Vec::new();
    for (b, g) in cand.grams.iter().enumerate() {
        let sos = ldlt_sos_over(g, &frame.bases[b])?;
        if sos.squares.is_empty() {
            continue;
        }
        let squares = sos
            .squares
            .iter()
            .map(|(w, p)| normalize_square(w, p))
            .collect();
        cone_terms.push(ConeTerm {
            product: shape.cone_products[map.blocks[b].cone_index].clone(),
            sos: SosDecomposition { squares },
        });
    }
    let mut cofactors: Vec<Polynomial> = vec![Polynomial::zero(); sys.equations.len()];
    for (f, v) in cand.free.iter().enumerate() {
        if !v.is_zero() {
            let (eq, m) = &map.free[f];
            cofactors[*eq].add_term(m.clone(), v.clone());
        }
    }
    Ok(Certificate {
        vars: sys.vars.clone(),
        ideal_cofactors: cofactors
            .into_iter()
            .enumerate()
            .filter(|(_, p)| !p.is_zero())
            .map(|(equation, cofactor)| IdealCofactor { equation, cofactor })
            .collect(),
        cone_terms,
        monoid: shape.monoid_selection.clone(),
    })
}

/// Residual below which a solver run that stalled short of its tolerance is
/// still worth rounding; the exact repair absorbs the difference.
pub const NEAR_FEASIBLE: f64 = 1e-5;

/// Whether `sol` is close enough to feasible to try rounding it.
pub fn usable(sol: &SdpSolution) -> bool {
    match sol.status {
        SdpStatus::Feasible => true,
        SdpStatus::MaxIterations | SdpStatus::NumericalFailure => {
            sol.residual <= NEAR_FEASIBLE && sol.min_eig >= -NEAR_FEASIBLE
        }
        _ => false,
    }
}

pub fn recover(
    sys: &NormalizedSystem,
    shape: &CertificateShape,
    sol: &SdpSolution,
    sched: &RoundingSchedule,
) -> Result<Certificate, RationalizeError> {
    recover_until(sys, shape, sol, sched, None)
}

/// [`recover`] that gives up once `deadline` passes.
pub fn recover_until(
    sys: &NormalizedSystem,
    shape: &CertificateShape,
    sol: &SdpSolution,
    sched: &RoundingSchedule,
    deadline: Option<Instant>,
) -> Result<Certificate, RationalizeError> {
    if !usable(sol) {
        return Err(RationalizeError::NotFeasible);
    }
    let (_, map) = build_relaxation(sys, shape).map_err(|e| RationalizeError::Irreparable(e.to_string()))?;
    let frame = Frame::monomial(&map);
    let interrupted = |d: Option<Instant>| d.is_some_and(|t| Instant::now() >= t);
    for d in &sched.denominators {
        if interrupted(deadline) {
            return Err(RationalizeError::Interrupted);
        }
        let mut cand = Candidate::round(sol, d);
        cand.restrict_to_active();
        if let Some(cert) = attempt(sys, shape, &frame, &cand, d, deadline)? {
            return Ok(cert);
        }
    }
    let mut tried: Vec<Vec<Vec<Polynomial>>> = Vec::new();
    for (threshold, tol) in FACE_THRESHOLDS
        .iter()
        .flat_map(|&t| FACE_TOLS.iter().map(move |&e| (t, e)))
    {
        let (frame, reduced) = reduce(&map, sol, threshold, tol);
        if tried.contains(&frame.bases) {
            continue;
        }
        tried.push(frame.bases.clone());
        log::debug!(
            "facial reduction at {threshold:e}/{tol:e}: ranks {:?}",
            frame.bases.iter().map(Vec::len).collect::<Vec<_>>()
        );
        for d in &sched.denominators {
            if interrupted(deadline) {
                return Err(RationalizeError::Interrupted);
            }
            let mut cand = Candidate {
                grams: reduced.iter().map(|m| round_matrix(m, d)).collect(),
                free: sol.free_values.iter().map(|&v| round_scalar(v, d)).collect(),
            };
            cand.restrict_to_active();
            if let Some(cert) = attempt(sys, shape, &frame, &cand, d, deadline)? {
                return Ok(cert);
            }
        }
    }
    Err(RationalizeError::RecoveryFailed {
        max_exp: sched.max_exp(),
    })
}

/// Repairs `cand` and splits it into squares; `Ok(None)` when this
/// denominator does not work out.
fn attempt(
    sys: &NormalizedSystem,
    shape: &CertificateShape,
    frame: &Frame,
    cand: &Candidate,
    d: &BigInt,
    deadline: Option<Instant>,
) -> Result<Option<Certificate>, RationalizeError> {
    let cand = match repair_in(frame, cand, deadline) {
        Ok(c) => c,
        Err(RationalizeError::Interrupted) => return Err(RationalizeError::Interrupted),
        Err(e) => {
            log::debug!("denominator {d}: {e}");
            return Ok(None);
        }
    };
    match certificate_from(sys, shape, frame, &cand) {
        Ok(cert) => {
            let report = verify(sys, &cert);
            if report.ok() {
                log::debug!("recovered at denominator {d}");
                return Ok(Some(cert));
            }
            log::warn!("recovered candidate failed verification: {report}");
        }
        Err(e) => log::debug!("denominator {d}: {e}"),
    }
    Ok(None)
}

/// Relative eigenvalue cut-offs tried when guessing the face.
const FACE_THRESHOLDS: [f64; 3] = [1e-6, 1e-4, 1e-8];

/// Absolute errors allowed when rationalizing a face basis, loosest
/// (simplest rationals) first.
const FACE_TOLS: [f64; 3] = [1e-2, 1e-4, 1e-7];

/// The first continued-fraction convergent of `v` within `tol`.
fn approximate(v: f64, tol: f64) -> Rational {
    let (mut h0, mut h1) = (BigInt::zero(), BigInt::one());
    let (mut k0, mut k1) = (BigInt::one(), BigInt::zero());
    let mut x = v;
    for _ in 0..40 {
        let a = x.floor();
        let ai = BigInt::from(a as i64);
        let h2 = &ai * &h1 + &h0;
        let k2 = &ai * &k1 + &k0;
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let r = Rational::new(h1.clone(), k1.clone());
        if (v - r.to_f64().unwrap_or(f64::NAN)).abs() <= tol {
            return r;
        }
        let frac = x - a;
        if frac == 0.0 {
            return r;
        }
        x = 1.0 / frac;
    }
    Rational::new(h1, k1)
}

/// Rows spanning the column space of `u` (n×r), row-reduced with exact
/// identity columns at the pivots and other entries rationalized.
/// Returns the rational rows and the pivot columns.
fn rational_range(u: &DMatrix<f64>, tol: f64) -> (Vec<Vec<Rational>>, Vec<usize>) {
    let mut a = u.transpose();
    let (r, n) = a.shape();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == r {
            break;
        }
        let (best, val) = (row..r)
            .map(|i| (i, a[(i, col)].abs()))
            .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val < 1e-8 {
            continue;
        }
        a.swap_rows(row, best);
        let p = a[(row, col)];
        for c in 0..n {
            a[(row, c)] /= p;
        }
        for i in 0..r {
            if i != row {
                let f = a[(i, col)];
                if f != 0.0 {
                    for c in 0..n {
                        a[(i, c)] -= f * a[(row, c)];
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let rows = (0..pivots.len())
        .map(|i| {
            (0..n)
                .map(|c| match pivots.iter().position(|&p| p == c) {
                    Some(k) if k == i => Rational::one(),
                    Some(_) => Rational::zero(),
                    None => approximate(a[(i, c)], tol),
                })
                .collect()
        })
        .collect();
    (rows, pivots)
}

/// Reduced frame and the matching float Gram matrices: block `X` is
/// written as `Rᵀ·Y·R` with `R` a rational basis of its numerical range, so
/// `Y` is `X` restricted to the pivot rows and columns.
fn reduce<'a>(map: &'a CoeffMap, sol: &SdpSolution, threshold: f64, tol: f64) -> (Frame<'a>, Vec<DMatrix<f64>>) {
    let mut bases = Vec::new();
    let mut grams = Vec::new();
    for (b, x) in sol.block_values.iter().enumerate() {
        let eig = x.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..x.nrows())
            .filter(|&i| eig.eigenvalues[i] > threshold * top.max(1.0))
            .collect();
        let u = eig.eigenvectors.select_columns(keep.iter());
        let (rows, pivots) = rational_range(&u, tol);
        let basis: Vec<Polynomial> = rows
            .iter()
            .map(|row| {
                Polynomial::from_terms(
                    row.iter()
                        .zip(&map.blocks[b].basis)
                        .filter(|(c, _)| !c.is_zero())
                        .map(|(c, m)| (m.clone(), c.clone())),
                )
            })
            .collect();
        grams.push(x.select_rows(pivots.iter()).select_columns(pivots.iter()));
        bases.push(basis);
    }
    (Frame { map, bases }, grams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certshape::{enumerate_shapes, DegreeBudget, MonoidFactor};
    use crate::frontend::{load, MonoidSource};
    use crate::poly::{int, rat, Variables};
    use crate::sdp::{solve, DEFAULT_MAX_ITER, DEFAULT_TOL};

    fn m(rows: &[&[i64]]) -> RatMatrix {
        rows.iter().map(|r| r.iter().map(|&v| int(v)).collect()).collect()
    }

    fn basis_x() -> (Variables, Vec<Monomial>) {
        let vars = Variables::from_names(["X"]);
        let x = vars.get("X").unwrap();
        (vars, vec![Monomial::one(), Monomial::var(x)])
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(round_scalar(0.3333333, &BigInt::from(64)), rat(21, 64));
        assert_eq!(round_scalar(1.0, &BigInt::from(1024)), int(1));
        assert_eq!(round_scalar(-0.5, &BigInt::from(2)), rat(-1, 2));
        assert_eq!(round_scalar(0.5, &BigInt::from(1)), int(0));
        assert_eq!(round_scalar(1.5, &BigInt::from(1)), int(2));
        assert_eq!(round_scalar(-2.5, &BigInt::from(1)), int(-2));
        let r = round_matrix(&DMatrix::from_row_slice(2, 2, &[1.0, 0.26, 0.26, 0.3]), &BigInt::from(4));
        assert_eq!(r, vec![vec![int(1), rat(1, 4)], vec![rat(1, 4), rat(1, 4)]]);
    }

    #[test]
    fn schedule() {
        let s = RoundingSchedule::default();
        assert_eq!(s.denominators.len(), 65);
        assert!(s.denominators.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(RoundingSchedule::capped(&BigInt::from(100)).denominators.len(), 7);
    }

    #[test]
    fn ldlt_examples() {
        let (vars, z) = basis_x();
        let show = |s: &SosDecomposition| -> Vec<(Rational, String)> {
            s.squares.iter().map(|(w, p)| (w.clone(), p.display(&vars).to_string())).collect()
        };
        let s = ldlt_sos(&m(&[&[1, 1], &[1, 1]]), &z).unwrap();
        assert_eq!(show(&s), [(int(1), "X + 1".to_string())]);
        let s = ldlt_sos(&m(&[&[2, 1], &[1, 2]]), &z).unwrap();
        assert_eq!(
            show(&s),
            [(int(2), "1/2*X + 1".to_string()), (rat(3, 2), "X".to_string())]
        );
        assert_eq!(
            ldlt_sos(&m(&[&[0, 0], &[0, -1]]), &z),
            Err(RationalizeError::NotPsd { pivot: int(-1) })
        );
        assert_eq!(
            ldlt_sos(&m(&[&[0, 1], &[1, 0]]), &z),
            Err(RationalizeError::NotPsd { pivot: int(0) })
        );
    }

    #[test]
    fn normalized_squares() {
        let vars = Variables::from_names(["A", "X", "B"]);
        let p = Polynomial::parse("A*X + 1/2*B", &vars).unwrap();
        let (w, q) = normalize_square(&int(4), &p);
        assert_eq!(w, int(1));
        assert_eq!(q, Polynomial::parse("2*A*X + B", &vars).unwrap());
        let p = Polynomial::parse("-3*X + 6", &vars).unwrap();
        let (w, q) = normalize_square(&int(1), &p);
        assert_eq!((w, q), (int(9), Polynomial::parse("X - 2", &vars).unwrap()));
    }

    const QUADRATIC: &str =
        "(IMPLIES (= (+ (* A X X) (* B X) C) 0) (>= (- (* B B) (* 4 A C)) 0))";

    fn worked_shape(sys: &NormalizedSystem) -> CertificateShape {
        enumerate_shapes(sys, &DegreeBudget::new(4))
            .into_iter()
            .find(|s| {
                s.monoid_selection
                    == [MonoidFactor {
                        source: MonoidSource::Strict(0),
                        power: 1,
                    }]
                    && s.cone_products.len() == 1
            })
            .unwrap()
    }

    /// Exact solution of the worked problem placed into the relaxation.
    fn planted(sys: &NormalizedSystem, shape: &CertificateShape, noise: f64) -> SdpSolution {
        let (prob, map) = build_relaxation(sys, shape).unwrap();
        let basis = &map.blocks[0].basis;
        let v = &sys.vars;
        let ax = basis.iter().position(|m| *m == Polynomial::parse("A*X", v).unwrap().leading().unwrap().0.clone()).unwrap();
        let b = basis.iter().position(|m| *m == Polynomial::parse("B", v).unwrap().leading().unwrap().0.clone()).unwrap();
        let n = basis.len();
        let mut x = DMatrix::zeros(n, n);
        x[(ax, ax)] = 4.0;
        x[(ax, b)] = 2.0;
        x[(b, ax)] = 2.0;
        x[(b, b)] = 1.0;
        let a_mono = Polynomial::parse("A", v).unwrap().leading().unwrap().0.clone();
        let free: Vec<f64> = map
            .free
            .iter()
            .enumerate()
            .map(|(k, (_, mm))| if *mm == a_mono { -4.0 } else { 0.0 } + noise * ((k % 3) as f64 - 1.0))
            .collect();
        for i in 0..n {
            for j in 0..n {
                x[(i, j)] += noise * (((i * 7 + j * 7) % 5) as f64 - 2.0);
            }
        }
        let residual = prob.residual(&[x.clone()], &free);
        SdpSolution {
            block_values: vec![x],
            free_values: free,
            status: SdpStatus::Feasible,
            residual,
            min_eig: 0.0,
            iterations: 0,
        }
    }

    #[test]
    fn recovers_planted_exact_solution_at_denominator_one() {
        let sys = load(QUADRATIC).unwrap();
        let shape = worked_shape(&sys);
        let sol = planted(&sys, &shape, 0.0);
        let cert = recover(&sys, &shape, &sol, &RoundingSchedule::up_to(0)).unwrap();
        assert_eq!(cert, crate::certificate::discriminant_certificate(&sys).unwrap());
    }

    #[test]
    fn recovers_noisy_solution() {
        let sys = load(QUADRATIC).unwrap();
        let shape = worked_shape(&sys);
        let sol = planted(&sys, &shape, 1e-9);
        let cert = recover(&sys, &shape, &sol, &RoundingSchedule::default()).unwrap();
        assert!(verify(&sys, &cert).ok());
        assert_eq!(cert, crate::certificate::discriminant_certificate(&sys).unwrap());
    }

    #[test]
    fn repair_absorbs_diagonal_perturbation() {
        let sys = load(QUADRATIC).unwrap();
        let shape = worked_shape(&sys);
        let (_, map) = build_relaxation(&sys, &shape).unwrap();
        let sol = planted(&sys, &shape, 0.0);
        let exact = Candidate::round(&sol, &BigInt::one());
        assert!(exact.residual(&map).is_zero());
        assert_eq!(repair_identity(&map, &exact).unwrap(), exact);
        let mut bumped = exact.clone();
        let k = (0..bumped.grams[0].len()).find(|&i| bumped.grams[0][i][i] == int(4)).unwrap();
        bumped.grams[0][k][k] += rat(1, 64);
        assert!(!bumped.residual(&map).is_zero());
        let fixed = repair_identity(&map, &bumped).unwrap();
        assert!(fixed.residual(&map).is_zero());
    }

    #[test]
    fn unreachable_residual_is_irreparable() {
        let (vars, z) = basis_x();
        let x = vars.get("X").unwrap();
        let map = CoeffMap {
            monomials: vec![],
            fixed: Polynomial::term(int(1), Monomial::var(x).pow(5)),
            blocks: vec![crate::sdp::GramBlock {
                cone_index: 0,
                basis: z,
                multiplier: Polynomial::one(),
            }],
            free: vec![],
            equations: vec![],
        };
        let cand = Candidate {
            grams: vec![m(&[&[1, 0], &[0, 1]])],
            free: vec![],
        };
        assert!(matches!(
            repair_identity(&map, &cand),
            Err(RationalizeError::Irreparable(_))
        ));
    }

    #[test]
    fn solver_output_recovers_worked_certificate() {
        let sys = load(QUADRATIC).unwrap();
        let shape = worked_shape(&sys);
        let (prob, _) = build_relaxation(&sys, &shape).unwrap();
        let sol = solve(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(sol.status, SdpStatus::Feasible);
        let cert = recover(&sys, &shape, &sol, &RoundingSchedule::default()).unwrap();
        assert!(verify(&sys, &cert).ok());
    }

    #[test]
    fn approximates_with_simplest_rational() {
        assert_eq!(approximate(-0.99981, 1e-2), int(-1));
        assert_eq!(approximate(0.33334, 1e-4), rat(1, 3));
        let fine = approximate(0.33334, 1e-7);
        assert!((fine.to_f64().unwrap() - 0.33334).abs() <= 1e-7);
        assert!(fine.denom() <= &BigInt::from(50_000));
        assert_eq!(approximate(2.5, 1e-9), rat(5, 2));
    }

    #[test]
    fn range_basis_is_row_reduced_and_rational() {
        // span of (0, 1, -1) and (1, 0, 1/2), rotated and perturbed
        let u = DMatrix::from_row_slice(3, 2, &[0.3, 0.8, 0.7, -0.1, -0.4, 0.5]);
        let (rows, pivots) = rational_range(&u, 1e-9);
        assert_eq!(pivots, vec![0, 1]);
        assert_eq!(rows[0][0], int(1));
        assert_eq!(rows[1][1], int(1));
        assert_eq!(rows[0][1], int(0));
        let v = DMatrix::from_row_slice(3, 1, &[0.0, 0.7071068, -0.7071067]);
        let (rows, pivots) = rational_range(&v, 1e-5);
        assert_eq!(pivots, vec![1]);
        assert_eq!(rows, vec![vec![int(0), int(1), int(-1)]]);
    }

    #[test]
    fn singular_face_needs_reduction() {
        // the negation is -(x - y)^2 > 0; the only certificate,
        // M + (x - y)^2 = 0, has a rank-one Gram matrix
        let sys = load("(>= (* (- X Y) (- X Y)) 0)").unwrap();
        let budget = DegreeBudget::new(2);
        let shape = enumerate_shapes(&sys, &budget)
            .into_iter()
            .find(|s| !s.monoid_selection.is_empty())
            .unwrap();
        let (prob, _) = build_relaxation(&sys, &shape).unwrap();
        let sol = solve(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!(usable(&sol), "{:?}", sol.status);
        let cert = recover(&sys, &shape, &sol, &RoundingSchedule::default()).unwrap();
        assert!(verify(&sys, &cert).ok());
        assert_eq!(cert.square_count(), 1);
    }
}
