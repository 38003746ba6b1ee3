//! Orchestration: parse, normalize, search shapes over the degree schedule,
//! solve, rationalize, verify and write the results.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use rayon::prelude::*;
use thiserror::Error;

use crate::certificate::{certificate_from_json, certificate_to_json, verify, Certificate};
use crate::certshape::{enumerate_shapes, escalation_schedule, CertificateShape, DegreeBudget, DEFAULT_BASIS_CAP};
use crate::emitter::emit;
use crate::frontend::{load, NormalizedSystem};
use crate::rationalize::{recover_until, usable, RationalizeError, RoundingSchedule};
use crate::sdp::{build_relaxation, solve_with, Backend, SdpStatus, SolveOptions, DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Input {
    File(PathBuf),
    Stdin,
    /// In-memory conjecture; `name` stands in for the file stem.
    Text { name: String, text: String },
}

impl Input {
    fn read(&self) -> std::io::Result<String> {
        match self {
            Input::File(p) => std::fs::read_to_string(p),
            Input::Stdin => std::io::read_to_string(std::io::stdin()),
            Input::Text { text, .. } => Ok(text.clone()),
        }
    }

    fn stem(&self) -> String {
        match self {
            Input::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "conjecture".into()),
            Input::Stdin => "stdin".into(),
            Input::Text { name, .. } => name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mode {
    Prove,
    Check { certificate: PathBuf },
    Parse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitTarget {
    Proof,
    Certificate,
    Both,
    None,
}

impl EmitTarget {
    fn proof(self) -> bool {
        matches!(self, EmitTarget::Proof | EmitTarget::Both)
    }

    fn certificate(self) -> bool {
        matches!(self, EmitTarget::Certificate | EmitTarget::Both)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: Input,
    pub mode: Mode,
    /// Cap on the escalation schedule.
    pub max_degree: Option<u32>,
    pub max_cone_subset: usize,
    pub max_monoid_power: u32,
    pub basis_cap: usize,
    pub sdp_tol: f64,
    pub sdp_max_iter: usize,
    pub denominator_max: Option<BigInt>,
    pub emit: EmitTarget,
    pub out_dir: PathBuf,
    pub time_limit: Duration,
    pub backend: Backend,
    pub parallel: bool,
}

impl RunConfig {
    pub fn new(input: Input, mode: Mode) -> Self {
        RunConfig {
            input,
            mode,
            max_degree: None,
            max_cone_subset: 2,
            max_monoid_power: 2,
            basis_cap: DEFAULT_BASIS_CAP,
            sdp_tol: DEFAULT_TOL,
            sdp_max_iter: DEFAULT_MAX_ITER,
            denominator_max: None,
            emit: EmitTarget::Both,
            out_dir: PathBuf::from("."),
            time_limit: Duration::from_secs(60),
            backend: Backend::Builtin,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.time_limit.is_zero() {
            return Err(ConfigError("time limit must be positive".into()));
        }
        if self.max_monoid_power == 0 || self.basis_cap == 0 {
            return Err(ConfigError("caps must be positive".into()));
        }
        if !(self.sdp_tol > 0.0) {
            return Err(ConfigError("SDP tolerance must be positive".into()));
        }
        if self.denominator_max.as_ref().is_some_and(|d| d < &BigInt::from(1)) {
            return Err(ConfigError("denominator cap must be at least 1".into()));
        }
        Ok(())
    }

    fn budget(&self, degree: u32) -> DegreeBudget {
        DegreeBudget {
            total_degree: degree,
            max_monoid_power: self.max_monoid_power,
            max_cone_subset: self.max_cone_subset,
            basis_cap: self.basis_cap,
        }
    }

    fn schedule(&self) -> RoundingSchedule {
        self.denominator_max
            .as_ref()
            .map(RoundingSchedule::capped)
            .unwrap_or_default()
    }
}

#[derive(Debug, Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(String);

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("refusing to overwrite the input {}", .0.display())]
    WouldOverwriteInput(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DriverError + '_ {
    move |source| DriverError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Proved,
    NoCertificateFound,
    Timeout,
    ParseError,
    CheckOk,
    CheckFailed,
    /// Parse-only mode succeeded.
    Parsed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Proved | Outcome::CheckOk | Outcome::Parsed => 0,
            Outcome::NoCertificateFound | Outcome::CheckFailed => 1,
            Outcome::ParseError => 2,
            Outcome::Timeout => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CertSummary {
    pub degree: u32,
    pub squares: usize,
    pub ideal_cofactors: usize,
    pub monoid_exponent: u32,
}

impl CertSummary {
    fn of(sys: &NormalizedSystem, cert: &Certificate) -> Self {
        CertSummary {
            degree: cert.degree(sys),
            squares: cert.square_count(),
            ideal_cofactors: cert.ideal_cofactors.len(),
            monoid_exponent: cert.monoid_exponent(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub shapes_tried: usize,
    pub sdp_iterations: usize,
    pub elapsed: Duration,
    pub summary: Option<CertSummary>,
    pub certificate: Option<Certificate>,
    pub script: Option<String>,
    /// Extra detail: the parse error, the normalized system, the reason a
    /// check failed.
    pub message: Option<String>,
    pub written: Vec<PathBuf>,
}

impl RunReport {
    fn new(outcome: Outcome, elapsed: Duration) -> Self {
        RunReport {
            outcome,
            shapes_tried: 0,
            sdp_iterations: 0,
            elapsed,
            summary: None,
            certificate: None,
            script: None,
            message: None,
            written: Vec::new(),
        }
    }

    fn with_message(mut self, msg: impl Into<String>) -> Self {
        self.message = Some(msg.into());
        self
    }
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} in {:.2}s", self.outcome, self.elapsed.as_secs_f64())?;
        if self.shapes_tried > 0 {
            write!(f, ", {} shapes tried, {} SDP iterations", self.shapes_tried, self.sdp_iterations)?;
        }
        if let Some(s) = &self.summary {
            write!(
                f,
                "; certificate degree {}, {} squares, {} ideal cofactors, monoid exponent {}",
                s.degree, s.squares, s.ideal_cofactors, s.monoid_exponent
            )?;
        }
        for p in &self.written {
            write!(f, "\nwrote {}", p.display())?;
        }
        if let Some(m) = &self.message {
            write!(f, "\n{m}")?;
        }
        Ok(())
    }
}

/// Result of trying one shape.
struct Attempt {
    iterations: usize,
    certificate: Option<Certificate>,
    interrupted: bool,
}

fn attempt(
    sys: &NormalizedSystem,
    shape: &CertificateShape,
    cfg: &RunConfig,
    deadline: Instant,
    cancel: Option<Arc<AtomicBool>>,
) -> Attempt {
    let mut out = Attempt {
        iterations: 0,
        certificate: None,
        interrupted: false,
    };
    let prob = match build_relaxation(sys, shape) {
        Ok((prob, _)) => prob,
        Err(e) => {
            log::debug!("shape skipped: {e}");
            return out;
        }
    };
    let opts = SolveOptions {
        tol: cfg.sdp_tol,
        max_iter: cfg.sdp_max_iter,
        deadline: Some(deadline),
        cancel,
        backend: cfg.backend.clone(),
    };
    let sol = solve_with(&prob, &opts);
    out.iterations = sol.iterations;
    log::debug!(
        "degree {} cost {}: {:?} after {} iterations (residual {:.2e})",
        shape.total_degree,
        shape.cost(),
        sol.status,
        sol.iterations,
        sol.residual
    );
    if sol.status == SdpStatus::Interrupted {
        out.interrupted = true;
        return out;
    }
    if !usable(&sol) {
        return out;
    }
    match recover_until(sys, shape, &sol, &cfg.schedule(), Some(deadline)) {
        Ok(cert) if verify(sys, &cert).ok() => out.certificate = Some(cert),
        Ok(_) => log::warn!("recovered certificate failed verification"),
        Err(RationalizeError::Interrupted) => out.interrupted = true,
        Err(e) => log::debug!("rationalization failed: {e}"),
    }
    out
}

/// Statistics and result of a certificate search.
#[derive(Debug, Clone)]
pub struct SearchResult {
    pub certificate: Option<Certificate>,
    pub shapes_tried: usize,
    pub sdp_iterations: usize,
    pub timed_out: bool,
}

/// Tries shapes cheapest first at each degree of the escalation schedule
/// until a verified certificate appears, the schedule runs out or the
/// deadline passes.
pub fn search(sys: &NormalizedSystem, cfg: &RunConfig, deadline: Instant) -> SearchResult {
    let mut res = SearchResult {
        certificate: None,
        shapes_tried: 0,
        sdp_iterations: 0,
        timed_out: false,
    };
    for degree in escalation_schedule(sys, cfg.max_degree) {
        let shapes = enumerate_shapes(sys, &cfg.budget(degree));
        log::info!("degree {degree}: {} shapes", shapes.len());
        if cfg.parallel {
            let tried = AtomicUsize::new(0);
            let iters = AtomicUsize::new(0);
            let interrupted = AtomicBool::new(false);
            let cancel = Arc::new(AtomicBool::new(false));
            let found = shapes.par_iter().find_map_any(|shape| {
                if cancel.load(Ordering::Relaxed) || Instant::now() >= deadline {
                    interrupted.store(true, Ordering::Relaxed);
                    return None;
                }
                tried.fetch_add(1, Ordering::Relaxed);
                let a = attempt(sys, shape, cfg, deadline, Some(cancel.clone()));
                iters.fetch_add(a.iterations, Ordering::Relaxed);
                if a.certificate.is_some() {
                    cancel.store(true, Ordering::Relaxed);
                } else if a.interrupted && !cancel.load(Ordering::Relaxed) {
                    interrupted.store(true, Ordering::Relaxed);
                }
                a.certificate
            });
            res.shapes_tried += tried.into_inner();
            res.sdp_iterations += iters.into_inner();
            if found.is_some() {
                res.certificate = found;
                return res;
            }
            if interrupted.into_inner() || Instant::now() >= deadline {
                res.timed_out = true;
                return res;
            }
        } else {
            for shape in &shapes {
                if Instant::now() >= deadline {
                    res.timed_out = true;
                    return res;
                }
                res.shapes_tried += 1;
                let a = attempt(sys, shape, cfg, deadline, None);
                res.sdp_iterations += a.iterations;
                if a.certificate.is_some() {
                    res.certificate = a.certificate;
                    return res;
                }
                if a.interrupted {
                    res.timed_out = true;
                    return res;
                }
            }
        }
    }
    res
}

/// Runs the configured mode, writing outputs for a successful proof.
pub fn run(cfg: &RunConfig) -> Result<RunReport, DriverError> {
    cfg.validate()?;
    match &cfg.mode {
        Mode::Prove => prove(cfg),
        Mode::Check { certificate } => check(cfg, certificate),
        Mode::Parse => parse_only(cfg),
    }
}

fn read_input(cfg: &RunConfig) -> Result<String, DriverError> {
    let path = match &cfg.input {
        Input::File(p) => p.clone(),
        _ => PathBuf::from("<stdin>"),
    };
    cfg.input.read().map_err(io_err(&path))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

pub fn prove(cfg: &RunConfig) -> Result<RunReport, DriverError> {
    let start = Instant::now();
    let deadline = start + cfg.time_limit;
    let text = read_input(cfg)?;
    let sys = match load(&text) {
        Ok(s) => s,
        Err(e) => return Ok(RunReport::new(Outcome::ParseError, start.elapsed()).with_message(e.to_string())),
    };
    let found = search(&sys, cfg, deadline);
    let outcome = match (&found.certificate, found.timed_out) {
        (Some(_), _) => Outcome::Proved,
        (None, true) => Outcome::Timeout,
        (None, false) => Outcome::NoCertificateFound,
    };
    let mut report = RunReport::new(outcome, Duration::ZERO);
    report.shapes_tried = found.shapes_tried;
    report.sdp_iterations = found.sdp_iterations;
    if let Some(cert) = found.certificate {
        let script = emit(&sys.source, &sys, &cert)
            .expect("search only returns verified certificates")
            .render();
        report.summary = Some(CertSummary::of(&sys, &cert));
        let stem = cfg.input.stem();
        if cfg.emit != EmitTarget::None {
            std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
        }
        if cfg.emit.proof() {
            let path = cfg.out_dir.join(format!("{stem}.lisp"));
            if let Input::File(input) = &cfg.input {
                if same_file(input, &path) {
                    return Err(DriverError::WouldOverwriteInput(path));
                }
            }
            std::fs::write(&path, &script).map_err(io_err(&path))?;
            report.written.push(path);
        }
        if cfg.emit.certificate() {
            let path = cfg.out_dir.join(format!("{stem}.cert.json"));
            std::fs::write(&path, certificate_to_json(&cert)).map_err(io_err(&path))?;
            report.written.push(path);
        }
        report.script = Some(script);
        report.certificate = Some(cert);
    }
    report.elapsed = start.elapsed();
    Ok(report)
}

pub fn check(cfg: &RunConfig, certificate: &Path) -> Result<RunReport, DriverError> {
    let start = Instant::now();
    let text = read_input(cfg)?;
    let sys = match load(&text) {
        Ok(s) => s,
        Err(e) => return Ok(RunReport::new(Outcome::ParseError, start.elapsed()).with_message(e.to_string())),
    };
    let json = std::fs::read_to_string(certificate).map_err(io_err(certificate))?;
    let cert = match certificate_from_json(&json) {
        Ok(c) => c,
        Err(e) => {
            return Ok(RunReport::new(Outcome::ParseError, start.elapsed())
                .with_message(format!("{}: {e}", certificate.display())))
        }
    };
    let cert = match cert.remap_to(&sys.vars) {
        Ok(c) => c,
        Err(e) => return Ok(RunReport::new(Outcome::CheckFailed, start.elapsed()).with_message(e.to_string())),
    };
    let verdict = verify(&sys, &cert);
    let outcome = if verdict.ok() {
        Outcome::CheckOk
    } else {
        Outcome::CheckFailed
    };
    let mut report = RunReport::new(outcome, start.elapsed()).with_message(verdict.to_string());
    report.summary = Some(CertSummary::of(&sys, &cert));
    report.certificate = Some(cert);
    Ok(report)
}

fn parse_only(cfg: &RunConfig) -> Result<RunReport, DriverError> {
    let start = Instant::now();
    let text = read_input(cfg)?;
    Ok(match load(&text) {
        Ok(sys) => RunReport::new(Outcome::Parsed, start.elapsed()).with_message(sys.to_string().trim_end()),
        Err(e) => RunReport::new(Outcome::ParseError, start.elapsed()).with_message(e.to_string()),
    })
}
