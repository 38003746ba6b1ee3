//! Exact refutation certificates and their verifier.
//!
//! A certificate claims `M^e + Σ_S σ_S·∏_{i∈S} q_i + Σ_j b_j·p_j ≡ 0` where
//! `M` is a product of strict/nonzero constraint polynomials, each `σ_S` is
//! a weighted sum of squares and the `b_j` are arbitrary cofactors. Under
//! the constraints the left side would be positive, which is absurd. The
//! verifier uses exact arithmetic only.

use std::fmt;

use num_traits::Signed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certshape::{monoid_exponent, MonoidFactor};
use crate::frontend::{MonoidSource, NormalizedSystem, RelKind};
use crate::poly::{format_rational, parse_rational, Polynomial, Rational, Variables};

/// `Σ weight·poly²` with positive weights.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SosDecomposition {
    pub squares: Vec<(Rational, Polynomial)>,
}

impl SosDecomposition {
    pub fn value(&self) -> Polynomial {
        self.squares
            .iter()
            .map(|(w, p)| (p * p).scale(w))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdealCofactor {
    pub equation: usize,
    pub cofactor: Polynomial,
}

/// SOS multiplier of the product of the nonnegative constraints in
/// `product` (the bare SOS term when empty).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeTerm {
    pub product: Vec<usize>,
    pub sos: SosDecomposition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    /// Variable table the polynomials are written over.
    pub vars: Variables,
    pub ideal_cofactors: Vec<IdealCofactor>,
    pub cone_terms: Vec<ConeTerm>,
    pub monoid: Vec<MonoidFactor>,
}

impl Certificate {
    pub fn empty(vars: Variables) -> Self {
        Certificate {
            vars,
            ideal_cofactors: Vec::new(),
            cone_terms: Vec::new(),
            monoid: Vec::new(),
        }
    }

    /// 1 when every monoid factor is strict (or there are none), else 2.
    pub fn monoid_exponent(&self) -> u32 {
        monoid_exponent(&self.monoid)
    }

    pub fn square_count(&self) -> usize {
        self.cone_terms.iter().map(|t| t.sos.squares.len()).sum()
    }

    /// Largest degree of any summand of the identity.
    pub fn degree(&self, sys: &NormalizedSystem) -> u32 {
        summands(sys, self)
            .map(|s| s.iter().map(|(_, p)| p.degree()).max().unwrap_or(0))
            .unwrap_or(0)
    }

    /// Rewrites the certificate over `target`, matching variables by name.
    pub fn remap_to(&self, target: &Variables) -> Result<Certificate, CertError> {
        let mut table = Vec::with_capacity(self.vars.len());
        for name in self.vars.names() {
            table.push(target.get(name).ok_or_else(|| {
                CertError::BadPolynomial(format!("variable {name} does not occur in the conjecture"))
            })?);
        }
        let map = |v: crate::poly::VarId| table[v.index()];
        Ok(Certificate {
            vars: target.clone(),
            ideal_cofactors: self
                .ideal_cofactors
                .iter()
                .map(|c| IdealCofactor {
                    equation: c.equation,
                    cofactor: c.cofactor.remap(&map),
                })
                .collect(),
            cone_terms: self
                .cone_terms
                .iter()
                .map(|t| ConeTerm {
                    product: t.product.clone(),
                    sos: SosDecomposition {
                        squares: t.sos.squares.iter().map(|(w, p)| (w.clone(), p.remap(&map))).collect(),
                    },
                })
                .collect(),
            monoid: self.monoid.clone(),
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CertError {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("malformed certificate JSON: {0}")]
    Json(String),
    #[error("bad rational: {0}")]
    BadRational(String),
    #[error("bad polynomial: {0}")]
    BadPolynomial(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignTag {
    /// Vanishes because an equation does.
    IdealZero,
    /// Nonnegative as a weighted SOS times nonnegative constraints.
    ConeNonneg,
    /// Strictly positive as a product of strict constraints (or the constant 1).
    MonoidPositive,
    /// Strictly positive as the square of a product of nonzero quantities.
    MonoidSquaredPositive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    /// The summands add up to the zero polynomial.
    pub identity_ok: bool,
    pub residual_poly: Polynomial,
    /// Monoid summand first, then cone terms, then ideal products.
    pub sign_ledger: Vec<SignTag>,
    /// Violated structural invariants (weights, indices, powers).
    pub structural_errors: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.identity_ok && self.structural_errors.is_empty()
    }
}

fn summands(sys: &NormalizedSystem, cert: &Certificate) -> Result<Vec<(SignTag, Polynomial)>, CertError> {
    let mut out = Vec::new();
    let mut m = Polynomial::one();
    for f in &cert.monoid {
        let c = sys
            .monoid_constraint(f.source)
            .ok_or_else(|| CertError::IndexOutOfRange(format!("monoid factor {:?}", f.source)))?;
        m = &m * &c.poly.pow(f.power);
    }
    let e = cert.monoid_exponent();
    let tag = if e == 1 {
        SignTag::MonoidPositive
    } else {
        SignTag::MonoidSquaredPositive
    };
    out.push((tag, m.pow(e)));
    for t in &cert.cone_terms {
        let mut u = Polynomial::one();
        for &i in &t.product {
            let q = sys
                .nonnegs
                .get(i)
                .ok_or_else(|| CertError::IndexOutOfRange(format!("cone product index {i}")))?;
            u = &u * &q.poly;
        }
        out.push((SignTag::ConeNonneg, &t.sos.value() * &u));
    }
    for c in &cert.ideal_cofactors {
        let p = sys
            .equations
            .get(c.equation)
            .ok_or_else(|| CertError::IndexOutOfRange(format!("equation {}", c.equation)))?;
        out.push((SignTag::IdealZero, &c.cofactor * &p.poly));
    }
    Ok(out)
}

/// `M^e + Σ cone + Σ ideal`, exactly.
pub fn assemble(sys: &NormalizedSystem, cert: &Certificate) -> Result<Polynomial, CertError> {
    Ok(summands(sys, cert)?.into_iter().map(|(_, p)| p).sum())
}

fn structural_errors(sys: &NormalizedSystem, cert: &Certificate) -> Vec<String> {
    let mut errs = Vec::new();
    if cert.vars.names() != sys.vars.names() {
        errs.push(format!(
            "certificate variables ({}) differ from the problem's ({})",
            cert.vars.names().join(" "),
            sys.vars.names().join(" ")
        ));
    }
    for (k, t) in cert.cone_terms.iter().enumerate() {
        if !t.product.windows(2).all(|w| w[0] < w[1]) {
            errs.push(format!("cone term {k}: product indices not strictly ascending"));
        }
        if let Some(&i) = t.product.iter().find(|&&i| i >= sys.nonnegs.len()) {
            errs.push(format!("cone term {k}: no nonnegative constraint {i}"));
        }
        for (w, _) in &t.sos.squares {
            if !w.is_positive() {
                errs.push(format!("cone term {k}: weight {} is not positive", format_rational(w)));
            }
        }
    }
    for f in &cert.monoid {
        if f.power == 0 {
            errs.push(format!("monoid factor {:?} has power 0", f.source));
        }
        match f.source {
            MonoidSource::Strict(i) => match sys.nonnegs.get(i) {
                Some(c) if c.kind == RelKind::Gt => {}
                Some(_) => errs.push(format!("monoid factor: constraint {i} is not strict")),
                None => errs.push(format!("monoid factor: no nonnegative constraint {i}")),
            },
            MonoidSource::Nonzero(i) if i >= sys.nonzeros.len() => {
                errs.push(format!("monoid factor: no nonzero constraint {i}"))
            }
            MonoidSource::Nonzero(_) => {}
        }
    }
    if !cert.monoid.windows(2).all(|w| w[0].source < w[1].source) {
        errs.push("monoid factors not strictly ascending".into());
    }
    for c in &cert.ideal_cofactors {
        if c.equation >= sys.equations.len() {
            errs.push(format!("no equation {}", c.equation));
        }
    }
    errs
}

pub fn verify(sys: &NormalizedSystem, cert: &Certificate) -> VerifyReport {
    let structural = structural_errors(sys, cert);
    match summands(sys, cert) {
        Ok(parts) => {
            let sign_ledger = parts.iter().map(|(t, _)| *t).collect();
            let residual_poly: Polynomial = parts.into_iter().map(|(_, p)| p).sum();
            VerifyReport {
                identity_ok: residual_poly.is_zero(),
                residual_poly,
                sign_ledger,
                structural_errors: structural,
            }
        }
        Err(e) => {
            let mut structural = structural;
            structural.push(e.to_string());
            VerifyReport {
                identity_ok: false,
                residual_poly: Polynomial::one(),
                sign_ledger: Vec::new(),
                structural_errors: structural,
            }
        }
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return write!(f, "certificate verified");
        }
        if !self.identity_ok {
            write!(f, "identity fails, residual has {} terms", self.residual_poly.len())?;
        }
        for e in &self.structural_errors {
            write!(f, "; {e}")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CertJson {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    vars: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ideal_cofactors: Vec<IdealJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    cone_terms: Vec<ConeJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    monoid: Vec<MonoidJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdealJson {
    equation: usize,
    cofactor: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConeJson {
    #[serde(default)]
    product: Vec<usize>,
    #[serde(default)]
    squares: Vec<SquareJson>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SquareJson {
    weight: String,
    poly: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonoidJson {
    kind: MonoidKind,
    index: usize,
    power: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MonoidKind {
    Strict,
    Nonzero,
}

pub fn certificate_to_json(cert: &Certificate) -> String {
    let show = |p: &Polynomial| p.display(&cert.vars).to_string();
    let doc = CertJson {
        vars: cert.vars.names().to_vec(),
        ideal_cofactors: cert
            .ideal_cofactors
            .iter()
            .map(|c| IdealJson {
                equation: c.equation,
                cofactor: show(&c.cofactor),
            })
            .collect(),
        cone_terms: cert
            .cone_terms
            .iter()
            .map(|t| ConeJson {
                product: t.product.clone(),
                squares: t
                    .sos
                    .squares
                    .iter()
                    .map(|(w, p)| SquareJson {
                        weight: format_rational(w),
                        poly: show(p),
                    })
                    .collect(),
            })
            .collect(),
        monoid: cert
            .monoid
            .iter()
            .map(|f| {
                let (kind, index) = match f.source {
                    MonoidSource::Strict(i) => (MonoidKind::Strict, i),
                    MonoidSource::Nonzero(i) => (MonoidKind::Nonzero, i),
                };
                MonoidJson {
                    kind,
                    index,
                    power: f.power,
                }
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("certificate serializes");
    text.push('\n');
    text
}

pub fn certificate_from_json(text: &str) -> Result<Certificate, CertError> {
    let doc: CertJson = serde_json::from_str(text).map_err(|e| CertError::Json(e.to_string()))?;
    let vars = Variables::from_names(doc.vars.iter().map(String::as_str));
    if vars.len() != doc.vars.len() {
        return Err(CertError::Json("duplicate variable names".into()));
    }
    let poly = |s: &str| Polynomial::parse(s, &vars).map_err(|e| CertError::BadPolynomial(format!("`{s}`: {e}")));
    let mut cert = Certificate::empty(vars.clone());
    for c in &doc.ideal_cofactors {
        cert.ideal_cofactors.push(IdealCofactor {
            equation: c.equation,
            cofactor: poly(&c.cofactor)?,
        });
    }
    for t in &doc.cone_terms {
        let mut squares = Vec::with_capacity(t.squares.len());
        for s in &t.squares {
            let w = parse_rational(s.weight.trim())
                .ok_or_else(|| CertError::BadRational(format!("`{}`", s.weight)))?;
            if !w.is_positive() {
                return Err(CertError::BadRational(format!(
                    "weight `{}` must be positive",
                    s.weight
                )));
            }
            squares.push((w, poly(&s.poly)?));
        }
        cert.cone_terms.push(ConeTerm {
            product: t.product.clone(),
            sos: SosDecomposition { squares },
        });
    }
    for m in &doc.monoid {
        let source = match m.kind {
            MonoidKind::Strict => MonoidSource::Strict(m.index),
            MonoidKind::Nonzero => MonoidSource::Nonzero(m.index),
        };
        cert.monoid.push(MonoidFactor {
            source,
            power: m.power,
        });
    }
    Ok(cert)
}

/// The worked certificate for the quadratic discriminant conjecture, over
/// the variables of `sys`.
pub fn discriminant_certificate(sys: &NormalizedSystem) -> Option<Certificate> {
    let v = &sys.vars;
    let cofactor = Polynomial::parse("-4*A", v).ok()?;
    let square = Polynomial::parse("2*A*X + B", v).ok()?;
    Some(Certificate {
        vars: v.clone(),
        ideal_cofactors: vec![IdealCofactor {
            equation: 0,
            cofactor,
        }],
        cone_terms: vec![ConeTerm {
            product: vec![],
            sos: SosDecomposition {
                squares: vec![(Rational::from_integer(1.into()), square)],
            },
        }],
        monoid: vec![MonoidFactor {
            source: MonoidSource::Strict(0),
            power: 1,
        }],
    })
}
