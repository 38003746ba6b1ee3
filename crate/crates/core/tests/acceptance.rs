//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use psatz::certificate::{assemble, verify, Certificate, ConeTerm, IdealCofactor, SosDecomposition};
use psatz::certshape::MonoidFactor;
use psatz::driver::{run, EmitTarget, Input, Mode, Outcome, RunConfig, RunReport};
use psatz::emitter::{canonicalize, interpret, lint, polynomial_sexp};
use psatz::frontend::{load, negate_normalize, parse, MonoidSource, NormalizedSystem};
use psatz::poly::{int, rat, Monomial, Polynomial, Rational, VarId, Variables};
use psatz::rationalize::{ldlt_sos, RatMatrix};
use psatz::sdp::{solve, BlockEntry, LinearConstraint, SdpProblem, SdpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};

type Verdict = Result<String, String>;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

/// Corpus files whose header reads `; expect: <tag>`, sorted by name.
fn corpus(tag: &str) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "lisp"))
        .filter(|p| {
            let text = std::fs::read_to_string(p).unwrap();
            text.lines().next() == Some(&format!("; expect: {tag}"))
        })
        .collect();
    files.sort();
    files
}

fn prove_file(path: &Path, limit: Duration) -> RunReport {
    let mut cfg = RunConfig::new(Input::File(path.to_path_buf()), Mode::Prove);
    cfg.emit = EmitTarget::None;
    cfg.time_limit = limit;
    run(&cfg).expect("driver run")
}

fn stem(p: &Path) -> String {
    p.file_stem().unwrap().to_string_lossy().into_owned()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. golden pipeline

fn golden_pipeline() -> Verdict {
    let path = corpus_dir().join("quadratic.lisp");
    let report = prove_file(&path, Duration::from_secs(5));
    ensure(report.outcome == Outcome::Proved, || format!("outcome {:?}", report.outcome))?;
    ensure(report.elapsed <= Duration::from_secs(5), || format!("took {:?}", report.elapsed))?;
    let cert = report.certificate.as_ref().unwrap();
    let sys = load(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let cert = cert.remap_to(&sys.vars).map_err(|e| e.to_string())?;
    let v = |n: &str| Polynomial::var(sys.vars.get(n).unwrap());

    ensure(cert.monoid.len() == 1 && cert.monoid[0].source == MonoidSource::Strict(0), || {
        format!("monoid {:?}", cert.monoid)
    })?;
    let ideal = &cert.ideal_cofactors;
    ensure(ideal.len() == 1, || format!("{} ideal cofactors", ideal.len()))?;
    let minus_4a = v("A").scale(&int(-4));
    ensure(proportional(&ideal[0].cofactor, &minus_4a), || {
        format!("cofactor {}", ideal[0].cofactor.display(&sys.vars))
    })?;
    let squares: Vec<_> = cert.cone_terms.iter().flat_map(|t| &t.sos.squares).collect();
    let root = &(&v("A") * &v("X")).scale(&int(2)) + &v("B");
    ensure(squares.len() == 1 && proportional(&squares[0].1, &root), || {
        format!("{} squares", squares.len())
    })?;

    let golden = include_str!("fixtures/discriminant.lisp");
    let script = report.script.as_deref().unwrap();
    ensure(canonicalize(script) == canonicalize(golden), || "script differs from the reference listing".into())?;
    Ok(format!("proved in {:.2?}, script matches the reference", report.elapsed))
}

/// `p = c·q` for some nonzero rational `c`.
fn proportional(p: &Polynomial, q: &Polynomial) -> bool {
    let Some((m, c)) = q.leading() else { return p.is_zero() };
    let k = p.coeff(m) / c;
    !k.is_zero() && p == &q.scale(&k)
}

// 2. corpus successes

fn corpus_successes(scripts: &mut Vec<(String, String, NormalizedSystem)>) -> Verdict {
    let files = corpus("proved");
    ensure(files.len() >= 6, || format!("only {} proved files", files.len()))?;
    let mut failed = Vec::new();
    let mut slowest = Duration::ZERO;
    for path in &files {
        let report = prove_file(path, Duration::from_secs(60));
        slowest = slowest.max(report.elapsed);
        let sys = load(&std::fs::read_to_string(path).unwrap()).unwrap();
        let verified = report
            .certificate
            .as_ref()
            .and_then(|c| c.remap_to(&sys.vars).ok())
            .is_some_and(|c| verify(&sys, &c).ok());
        if report.outcome != Outcome::Proved || !verified || report.elapsed > Duration::from_secs(60) {
            failed.push(format!("{} ({:?})", stem(path), report.outcome));
        } else {
            scripts.push((stem(path), report.script.unwrap(), sys));
        }
    }
    ensure(failed.is_empty(), || format!("failed: {}", failed.join(", ")))?;
    Ok(format!("{} proved and verified, slowest {:.2?}", files.len(), slowest))
}

// 3. hard problems end cleanly

fn hard_problems() -> Verdict {
    let files = corpus("unknown");
    ensure(!files.is_empty(), || "no hard problems in the corpus".into())?;
    let limit = 30;
    let mut notes = Vec::new();
    for path in &files {
        let start = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_psatz"))
            .args(["prove", "--emit", "none", "--time-limit", &limit.to_string()])
            .arg(path)
            .output()
            .map_err(|e| e.to_string())?;
        let took = start.elapsed();
        let code = out.status.code();
        ensure(matches!(code, Some(1) | Some(3)), || {
            format!("{} exited with {code:?}: {}", stem(path), String::from_utf8_lossy(&out.stderr))
        })?;
        ensure(took <= Duration::from_secs(2 * limit), || format!("{} ran {took:.0?}", stem(path)))?;
        notes.push(format!("{} exit {} in {took:.1?}", stem(path), code.unwrap()));
    }
    Ok(notes.join(", "))
}

// 4. planted certificates and their mutations

fn small_poly(rng: &mut ChaCha8Rng, vars: &[VarId], max_deg: u32) -> Polynomial {
    let mut p = Polynomial::zero();
    for _ in 0..rng.gen_range(1..=4) {
        let m = Monomial::from_pairs(vars.iter().map(|&v| (v, rng.gen_range(0..=max_deg))).filter(|(_, e)| *e > 0));
        if m.degree() > max_deg {
            continue;
        }
        let c = *[-3, -2, -1, 1, 2, 3].choose(rng).unwrap();
        p.add_term(m, int(c));
    }
    if p.is_zero() {
        Polynomial::var(vars[0])
    } else {
        p
    }
}

fn sexp_text(p: &Polynomial, vars: &Variables) -> String {
    polynomial_sexp(p, vars).flat()
}

/// A system and a certificate refuting it, built so the identity holds.
/// Either a strict constraint is defined as minus the rest of the identity,
/// or an equation `p0 = r² + rest` is refuted with cofactor -1 and the
/// nonzero constraint `r`.
fn planted_certificate(rng: &mut ChaCha8Rng) -> Option<(NormalizedSystem, Certificate)> {
    let vars = Variables::from_names(["X", "Y", "Z"]);
    let ids: Vec<VarId> = vars.ids().take(rng.gen_range(1..=3)).collect();
    let n_eq = rng.gen_range(0..=2);
    let n_ge = rng.gen_range(0..=2);
    let equations: Vec<Polynomial> = (0..n_eq).map(|_| small_poly(rng, &ids, 2)).collect();
    let nonnegs: Vec<Polynomial> = (0..n_ge).map(|_| small_poly(rng, &ids, 2)).collect();

    let mut cone_terms = vec![ConeTerm { product: vec![], sos: random_sos(rng, &ids) }];
    for i in 0..n_ge {
        if rng.gen_bool(0.5) {
            cone_terms.push(ConeTerm { product: vec![i], sos: random_sos(rng, &ids) });
        }
    }
    let mut rest: Polynomial = cone_terms
        .iter()
        .map(|t| t.product.iter().fold(t.sos.value(), |acc, &i| &acc * &nonnegs[i]))
        .sum();
    let mut ideal: Vec<IdealCofactor> = (0..n_eq)
        .map(|j| IdealCofactor { equation: j, cofactor: small_poly(rng, &ids, 1) })
        .collect();
    for b in &ideal {
        rest = &rest + &(&b.cofactor * &equations[b.equation]);
    }

    let hyp = |eqs: &[Polynomial]| {
        let atoms: Vec<String> = eqs
            .iter()
            .map(|p| format!("(= {} 0)", sexp_text(p, &vars)))
            .chain(nonnegs.iter().map(|q| format!("(>= {} 0)", sexp_text(q, &vars))))
            .collect();
        format!("(AND {} (= 0 0))", atoms.join(" "))
    };
    let (text, monoid) = if rng.gen_bool(0.5) {
        let g = rest.scale(&int(-1));
        let text = format!("(IMPLIES {} (<= {} 0))", hyp(&equations), sexp_text(&g, &vars));
        (text, vec![MonoidFactor { source: MonoidSource::Strict(n_ge), power: 1 }])
    } else {
        let r = small_poly(rng, &ids, 1);
        let p0 = &(&r * &r) + &rest;
        if p0.is_zero() {
            return None;
        }
        let mut eqs = vec![p0];
        eqs.extend(equations.iter().cloned());
        for b in &mut ideal {
            b.equation += 1;
        }
        ideal.insert(0, IdealCofactor { equation: 0, cofactor: Polynomial::from_int(-1) });
        let text = format!("(IMPLIES {} (= {} 0))", hyp(&eqs), sexp_text(&r, &vars));
        (text, vec![MonoidFactor { source: MonoidSource::Nonzero(0), power: 1 }])
    };
    // the trivial (= 0 0) hypothesis normalizes to one more equation
    let sys = load(&text).ok()?;
    let cert = Certificate { vars, ideal_cofactors: ideal, cone_terms, monoid };
    let cert = cert.remap_to(&sys.vars).ok()?;
    Some((sys, cert))
}

fn random_sos(rng: &mut ChaCha8Rng, ids: &[VarId]) -> SosDecomposition {
    SosDecomposition {
        squares: (0..rng.gen_range(1..=2))
            .map(|_| (rat(rng.gen_range(1..=5), rng.gen_range(1..=4)), small_poly(rng, ids, 1)))
            .collect(),
    }
}

/// Perturb one coefficient somewhere in the certificate.
fn mutate(rng: &mut ChaCha8Rng, cert: &Certificate) -> Certificate {
    let mut out = cert.clone();
    let delta = rat(*[-3, -2, -1, 1, 2, 3].choose(rng).unwrap(), rng.gen_range(1..=3));
    let n_ideal: usize = out.ideal_cofactors.iter().map(|b| b.cofactor.len()).sum();
    let n_sq: usize = out.cone_terms.iter().map(|t| t.sos.squares.len()).sum();
    let pick = rng.gen_range(0..n_ideal + 2 * n_sq);
    if pick < n_ideal {
        let (b, m) = out
            .ideal_cofactors
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.cofactor.terms().map(move |(m, _)| (i, m.clone())))
            .nth(pick)
            .unwrap();
        out.ideal_cofactors[b].cofactor.add_term(m, delta);
        return out;
    }
    let k = (pick - n_ideal) / 2;
    let sq = out
        .cone_terms
        .iter_mut()
        .flat_map(|t| t.sos.squares.iter_mut())
        .nth(k)
        .unwrap();
    if (pick - n_ideal) % 2 == 0 {
        // keep the weight positive
        sq.0 += delta.abs();
    } else {
        let terms: Vec<(Monomial, Rational)> = sq.1.terms().map(|(m, c)| (m.clone(), c.clone())).collect();
        let (m, c) = terms.choose(rng).unwrap().clone();
        // flipping the sign of a lone term leaves the square unchanged
        let delta = if sq.1.len() == 1 && delta == c.clone() * int(-2) { delta + Rational::one() } else { delta };
        sq.1.add_term(m, delta);
    }
    out
}

fn planted_certificates() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (mut planted, mut mutants, mut tries) = (0, 0, 0);
    while planted < 200 {
        tries += 1;
        ensure(tries < 2000, || format!("only {planted} plantable systems in {tries} tries"))?;
        let Some((sys, cert)) = planted_certificate(&mut rng) else { continue };
        let identity = assemble(&sys, &cert).map_err(|e| e.to_string())?;
        ensure(identity.is_zero() && verify(&sys, &cert).ok(), || {
            format!("planted certificate #{planted} rejected: {}", sys)
        })?;
        planted += 1;
        for _ in 0..3 {
            let bad = mutate(&mut rng, &cert);
            ensure(!verify(&sys, &bad).ok(), || format!("mutant of #{planted} accepted: {}", sys))?;
            mutants += 1;
        }
    }
    Ok(format!("{planted} planted certificates verify, {mutants} mutants rejected"))
}

// 5. SDP on planted feasible instances

fn planted_sdps() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ok = 0;
    for _ in 0..100 {
        let prob = common::planted_sdp(&mut rng);
        let sol = solve(&prob, DEFAULT_TOL, DEFAULT_MAX_ITER);
        if sol.status == SdpStatus::Feasible && prob.residual(&sol.block_values, &sol.free_values) <= DEFAULT_TOL {
            ok += 1;
        }
    }
    ensure(ok >= 95, || format!("{ok}/100 feasible"))?;
    let infeasible = SdpProblem {
        blocks: vec![1],
        n_free: 0,
        constraints: vec![LinearConstraint {
            entries: vec![BlockEntry { block: 0, i: 0, j: 0, value: 1.0 }],
            free: vec![],
            rhs: -1.0,
        }],
    };
    let status = solve(&infeasible, DEFAULT_TOL, DEFAULT_MAX_ITER).status;
    ensure(status != SdpStatus::Feasible, || "X = -1 reported feasible".into())?;
    Ok(format!("{ok}/100 feasible within {DEFAULT_TOL:e}, X = -1 gives {status:?}"))
}

// 6. exact LDL^T

fn ldlt_exact() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let vars = Variables::from_names((1..=8).map(|i| format!("X{i}")));
    let ids: Vec<VarId> = vars.ids().collect();
    for k in 0..100 {
        let n = rng.gen_range(1..=8);
        let r = rng.gen_range(1..=n);
        let l: Vec<Vec<Rational>> = (0..n)
            .map(|_| (0..r).map(|_| rat(rng.gen_range(-5..=5), rng.gen_range(1..=4))).collect())
            .collect();
        let q: RatMatrix = (0..n)
            .map(|i| (0..n).map(|j| (0..r).map(|t| &l[i][t] * &l[j][t]).sum()).collect())
            .collect();
        let basis: Vec<Monomial> = ids[..n].iter().map(|&v| Monomial::var(v)).collect();
        let form: Polynomial = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| Polynomial::term(q[i][j].clone(), basis[i].mul(&basis[j])))
            .sum();
        let sos = ldlt_sos(&q, &basis).map_err(|e| format!("matrix {k}: {e}"))?;
        ensure(sos.squares.iter().all(|(w, _)| w.is_positive()), || format!("matrix {k}: nonpositive weight"))?;
        ensure(sos.value() == form, || format!("matrix {k}: re-expansion differs"))?;
    }
    Ok("100 random L·Lᵀ matrices re-expand exactly".into())
}

// 7. negation is sound and complete pointwise

fn random_term(rng: &mut ChaCha8Rng, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.3) {
        return if rng.gen_bool(0.6) {
            ["X", "Y", "Z"].choose(rng).unwrap().to_string()
        } else {
            rng.gen_range(-3..=3).to_string()
        };
    }
    let a = random_term(rng, depth - 1);
    match rng.gen_range(0..4) {
        0 => format!("(+ {a} {})", random_term(rng, depth - 1)),
        1 => format!("(- {a} {})", random_term(rng, depth - 1)),
        2 => format!("(* {a} {})", random_term(rng, depth - 1)),
        _ => format!("(EXPT {a} 2)"),
    }
}

fn random_atom(rng: &mut ChaCha8Rng) -> String {
    let op = ["=", "<", "<=", ">", ">=", "/="].choose(rng).unwrap();
    format!("({op} {} {})", random_term(rng, 2), random_term(rng, 2))
}

fn random_conjecture(rng: &mut ChaCha8Rng) -> String {
    let concl = random_atom(rng);
    match rng.gen_range(0..3) {
        0 => concl,
        1 => format!("(IMPLIES {} {concl})", random_atom(rng)),
        _ => {
            let hyps: Vec<String> = (0..rng.gen_range(2..=3)).map(|_| random_atom(rng)).collect();
            format!("(IMPLIES (AND {}) {concl})", hyps.join(" "))
        }
    }
}

fn negation_semantics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let values = [rat(-2, 1), rat(-1, 1), rat(-1, 2), rat(0, 1), rat(1, 2), rat(1, 1), rat(2, 1)];
    let mut falsified = 0;
    for k in 0..500 {
        let text = random_conjecture(&mut rng);
        let expr = parse(&text).map_err(|e| format!("{text}: {e}"))?;
        let sys = negate_normalize(&expr).map_err(|e| format!("{text}: {e}"))?;
        let names = expr.variables();
        for _ in 0..50 {
            let by_name: BTreeMap<&str, Rational> = ["X", "Y", "Z"]
                .into_iter()
                .map(|n| (n, values.choose(&mut rng).unwrap().clone()))
                .collect();
            let at = |vars: &Variables| -> BTreeMap<VarId, Rational> {
                vars.ids().map(|id| (id, by_name[vars.name(id)].clone())).collect()
            };
            let holds = expr.holds(&names, &at(&names)).map_err(|e| e.to_string())?;
            let refuted = sys.holds_at(&at(&sys.vars));
            ensure(holds != refuted, || format!("conjecture {k} {text} at {by_name:?}"))?;
            falsified += usize::from(!holds);
        }
    }
    Ok(format!("500 conjectures × 50 points agree ({falsified} counterexample points)"))
}

// 8. emitted scripts re-read to the same problem

fn script_round_trip(scripts: &[(String, String, NormalizedSystem)]) -> Verdict {
    ensure(!scripts.is_empty(), || "no scripts from the corpus run".into())?;
    for (name, script, sys) in scripts {
        let diags = lint(script);
        ensure(diags.is_empty(), || format!("{name}: {:?}", diags[0]))?;
        let back = interpret(script).map_err(|e| format!("{name}: {e}"))?;
        ensure(back.cert.is_zero(), || format!("{name}: CERT is not identically 0"))?;
        let want: Vec<Polynomial> = sys.all_constraints().map(|c| c.poly.clone()).collect();
        let got: Vec<Polynomial> = back
            .problems
            .iter()
            .map(|p| p.remap(&|v| sys.vars.get(back.vars.name(v)).unwrap()))
            .collect();
        ensure(got == want, || format!("{name}: PROB definitions differ from the system"))?;
    }
    Ok(format!("{} scripts lint clean and evaluate back", scripts.len()))
}

fn main() {
    let mut scripts = Vec::new();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Verdict + '_>)> = vec![
        ("quadratic discriminant end to end", Box::new(golden_pipeline)),
        ("corpus successes prove and verify", Box::new(|| corpus_successes(&mut scripts))),
        ("hard problems terminate cleanly", Box::new(hard_problems)),
        ("planted certificates and mutants", Box::new(planted_certificates)),
        ("planted SDP feasibility", Box::new(planted_sdps)),
        ("exact LDL re-expansion", Box::new(ldlt_exact)),
        ("negation semantics", Box::new(negation_semantics)),
    ];
    let mut failures = 0;
    let mut report = |i: usize, name: &str, verdict: Verdict| {
        match verdict {
            Ok(detail) => println!("criterion {i}: PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {i}: FAIL {name}: {detail}");
            }
        }
    };
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Err(panic_text(e)));
        report(i + 1, name, verdict);
    }
    let verdict = catch_unwind(AssertUnwindSafe(|| script_round_trip(&scripts))).unwrap_or_else(|e| Err(panic_text(e)));
    report(8, "emitted scripts round-trip", verdict);
    if failures > 0 {
        println!("{failures} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}

fn panic_text(e: Box<dyn std::any::Any + Send>) -> String {
    let msg = e
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default();
    format!("panicked: {msg}")
}
