//! Degree-bounded certificate templates and the budget escalation schedule.

use std::collections::HashSet;

use thiserror::Error;

use crate::frontend::{MonoidSource, NormalizedSystem};
use crate::poly::{Monomial, Polynomial, VarId};

pub const DEFAULT_BASIS_CAP: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShapeError {
    #[error("monomial basis over {vars} variables up to degree {degree} has {count} elements, cap is {cap}")]
    BasisTooLarge {
        vars: usize,
        degree: u32,
        count: usize,
        cap: usize,
    },
}

/// All monomials over `vars` of total degree at most `max_degree`, by
/// ascending degree and, within a degree, with earlier variables at higher
/// powers first.
pub fn monomial_basis(vars: &[VarId], max_degree: u32, cap: usize) -> Result<Vec<Monomial>, ShapeError> {
    let count = binomial(vars.len() as u64 + max_degree as u64, max_degree as u64);
    if count > cap as u64 {
        return Err(ShapeError::BasisTooLarge {
            vars: vars.len(),
            degree: max_degree,
            count: usize::try_from(count).unwrap_or(usize::MAX),
            cap,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut exps = vec![0u32; vars.len()];
    for d in 0..=max_degree {
        fill(vars, &mut exps, 0, d, &mut out);
    }
    Ok(out)
}

fn fill(vars: &[VarId], exps: &mut [u32], at: usize, left: u32, out: &mut Vec<Monomial>) {
    if at == vars.len() {
        if left == 0 {
            out.push(Monomial::from_pairs(vars.iter().copied().zip(exps.iter().copied())));
        }
        return;
    }
    if at + 1 == vars.len() {
        exps[at] = left;
        fill(vars, exps, at + 1, 0, out);
        exps[at] = 0;
        return;
    }
    for e in (0..=left).rev() {
        exps[at] = e;
        fill(vars, exps, at + 1, left - e, out);
    }
    exps[at] = 0;
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Search limits for one round of shape enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeBudget {
    pub total_degree: u32,
    pub max_monoid_power: u32,
    pub max_cone_subset: usize,
    pub basis_cap: usize,
}

impl DegreeBudget {
    pub fn new(total_degree: u32) -> Self {
        DegreeBudget {
            total_degree,
            max_monoid_power: 2,
            max_cone_subset: 2,
            basis_cap: DEFAULT_BASIS_CAP,
        }
    }

    /// Degree available to the cofactor of each equation.
    pub fn ideal_cofactor_degree(&self, sys: &NormalizedSystem) -> Vec<Option<u32>> {
        sys.equations
            .iter()
            .map(|c| self.total_degree.checked_sub(c.poly.degree()))
            .collect()
    }
}

/// Total degrees tried in order: d₀, d₀+2, d₀+4, d₀+6 where d₀ is the least
/// even number at or above the largest constraint degree; capped by
/// `max_degree` when given.
pub fn escalation_schedule(sys: &NormalizedSystem, max_degree: Option<u32>) -> Vec<u32> {
    let d = sys.max_degree();
    let d0 = d + d % 2;
    (0..4)
        .map(|k| d0 + 2 * k)
        .filter(|&t| max_degree.map_or(true, |m| t <= m))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MonoidFactor {
    pub source: MonoidSource,
    pub power: u32,
}

/// One template: a fixed monoid product, the cone products that receive an
/// unknown SOS multiplier, and the monomials spanning each unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateShape {
    pub total_degree: u32,
    pub monoid_selection: Vec<MonoidFactor>,
    /// Subsets of `nonnegs` indices, ascending; the first is always empty.
    pub cone_products: Vec<Vec<usize>>,
    /// Per equation, the monomials of its cofactor (possibly empty).
    pub ideal_templates: Vec<Vec<Monomial>>,
    /// Per cone product, its Gram basis.
    pub sos_bases: Vec<Vec<Monomial>>,
}

impl CertificateShape {
    /// Exponent applied to the monoid product: 1 when every factor is
    /// strictly positive, 2 otherwise.
    pub fn monoid_exponent(&self) -> u32 {
        monoid_exponent(&self.monoid_selection)
    }

    /// The monoid product raised to its exponent (1 when no factor is
    /// selected).
    pub fn monoid_polynomial(&self, sys: &NormalizedSystem) -> Polynomial {
        monoid_product(sys, &self.monoid_selection).pow(self.monoid_exponent())
    }

    pub fn cone_polynomial(&self, sys: &NormalizedSystem, k: usize) -> Polynomial {
        cone_product(sys, &self.cone_products[k])
    }

    /// Number of scalar unknowns of the resulting SDP.
    pub fn cost(&self) -> usize {
        let gram: usize = self.sos_bases.iter().map(|b| b.len() * (b.len() + 1) / 2).sum();
        gram + self.ideal_templates.iter().map(Vec::len).sum::<usize>()
    }
}

pub fn monoid_exponent(sel: &[MonoidFactor]) -> u32 {
    if sel
        .iter()
        .all(|f| matches!(f.source, MonoidSource::Strict(_)))
    {
        1
    } else {
        2
    }
}

pub fn monoid_product(sys: &NormalizedSystem, sel: &[MonoidFactor]) -> Polynomial {
    sel.iter()
        .map(|f| {
            sys.monoid_constraint(f.source)
                .expect("monoid index in range")
                .poly
                .pow(f.power)
        })
        .product()
}

pub fn cone_product(sys: &NormalizedSystem, subset: &[usize]) -> Polynomial {
    subset.iter().map(|&i| sys.nonnegs[i].poly.clone()).product()
}

fn subsets_up_to(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..k {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |&l| l + 1);
            for i in start..n {
                let mut t = s.clone();
                t.push(i);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Enumerates templates for one budget, cheapest first. Ties keep
/// enumeration order, in which the empty monoid comes first.
pub fn enumerate_shapes(sys: &NormalizedSystem, budget: &DegreeBudget) -> Vec<CertificateShape> {
    let vars: Vec<VarId> = sys.vars.ids().collect();
    let d = budget.total_degree;

    let Some(ideal_templates) = budget
        .ideal_cofactor_degree(sys)
        .into_iter()
        .map(|deg| match deg {
            Some(deg) => monomial_basis(&vars, deg, budget.basis_cap).ok(),
            None => Some(Vec::new()),
        })
        .collect::<Option<Vec<_>>>()
    else {
        return Vec::new();
    };

    let eligible = sys.monoid_eligible();
    let mut selections: Vec<Vec<MonoidFactor>> = vec![Vec::new()];
    for &source in &eligible {
        for power in 1..=budget.max_monoid_power {
            selections.push(vec![MonoidFactor { source, power }]);
        }
    }
    for (i, &a) in eligible.iter().enumerate() {
        for &b in &eligible[i + 1..] {
            selections.push(vec![
                MonoidFactor { source: a, power: 1 },
                MonoidFactor { source: b, power: 1 },
            ]);
        }
    }

    let mut variants: Vec<Vec<Vec<usize>>> = Vec::new();
    for k in [0, 1, budget.max_cone_subset] {
        let subsets: Vec<Vec<usize>> = subsets_up_to(sys.nonnegs.len(), k.min(budget.max_cone_subset))
            .into_iter()
            .filter(|s| {
                let p = cone_product(sys, s);
                !p.is_zero() && p.degree() <= d
            })
            .collect();
        if !variants.contains(&subsets) {
            variants.push(subsets);
        }
    }

    let mut shapes = Vec::new();
    let mut seen = HashSet::new();
    for sel in &selections {
        let m = monoid_product(sys, sel);
        if m.is_zero() || m.degree() * monoid_exponent(sel) > d {
            continue;
        }
        for cone in &variants {
            let mut bases = Vec::with_capacity(cone.len());
            for s in cone {
                let deg = cone_product(sys, s).degree();
                match monomial_basis(&vars, (d - deg) / 2, budget.basis_cap) {
                    Ok(b) => bases.push(b),
                    Err(_) => break,
                }
            }
            if bases.len() != cone.len() {
                continue;
            }
            let shape = CertificateShape {
                total_degree: d,
                monoid_selection: sel.clone(),
                cone_products: cone.clone(),
                ideal_templates: ideal_templates.clone(),
                sos_bases: bases,
            };
            if seen.insert((sel.clone(), cone.clone())) {
                shapes.push(shape);
            }
        }
    }
    shapes.sort_by_key(CertificateShape::cost);
    shapes
}
