//! Sparse SDPA problem files and csdp-style solution files, for running an
//! external solver process instead of the built-in one.
//!
//! Free variables are split as `y = y⁺ − y⁻` over a trailing diagonal block.

use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;

use super::{min_eigenvalue, SdpError, SdpProblem, SdpSolution, SdpStatus};

/// Penalty on `y⁺ + y⁻` that keeps the split variables bounded.
const SPLIT_PENALTY: f64 = 1e-6;

/// Renders `prob` in sparse SDPA format, maximising `−Σ tr X_b`.
pub fn write_sdpa(prob: &SdpProblem) -> String {
    let mut out = String::new();
    let lp = prob.n_free > 0;
    let nblocks = prob.blocks.len() + usize::from(lp);
    let _ = writeln!(out, "\"psatz relaxation");
    let _ = writeln!(out, "{}", prob.constraints.len());
    let _ = writeln!(out, "{nblocks}");
    let mut dims: Vec<String> = prob.blocks.iter().map(|n| n.to_string()).collect();
    if lp {
        dims.push(format!("-{}", 2 * prob.n_free));
    }
    let _ = writeln!(out, "{}", dims.join(" "));
    let rhs: Vec<String> = prob.constraints.iter().map(|c| fmt(c.rhs)).collect();
    let _ = writeln!(out, "{}", rhs.join(" "));
    for (b, &n) in prob.blocks.iter().enumerate() {
        for i in 1..=n {
            let _ = writeln!(out, "0 {} {i} {i} -1", b + 1);
        }
    }
    let lp_block = prob.blocks.len() + 1;
    for k in 1..=2 * prob.n_free {
        let _ = writeln!(out, "0 {lp_block} {k} {k} {}", fmt(-SPLIT_PENALTY));
    }
    for (k, c) in prob.constraints.iter().enumerate() {
        for e in &c.entries {
            let (i, j) = (e.i.min(e.j) + 1, e.i.max(e.j) + 1);
            let _ = writeln!(out, "{} {} {i} {j} {}", k + 1, e.block + 1, fmt(e.value));
        }
        for &(f, g) in &c.free {
            let _ = writeln!(out, "{} {lp_block} {} {} {}", k + 1, f + 1, f + 1, fmt(g));
            let m = prob.n_free + f + 1;
            let _ = writeln!(out, "{} {lp_block} {m} {m} {}", k + 1, fmt(-g));
        }
    }
    out
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// Parses a csdp solution file: the dual vector on the first line, then
/// `matno block i j value` lines where matno 2 holds the primal matrix.
pub fn read_solution(prob: &SdpProblem, text: &str) -> Result<(Vec<DMatrix<f64>>, Vec<f64>), SdpError> {
    let bad = |msg: String| SdpError::External(format!("solution file: {msg}"));
    let mut x: Vec<DMatrix<f64>> = prob.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    let mut split = vec![0.0; 2 * prob.n_free];
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    lines.next().ok_or_else(|| bad("empty".into()))?;
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(bad(format!("malformed line `{line}`")));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad index `{s}`")));
        let (mat, blk, i, j) = (int(f[0])?, int(f[1])?, int(f[2])?, int(f[3])?);
        let v: f64 = f[4].parse().map_err(|_| bad(format!("bad value `{}`", f[4])))?;
        if mat != 2 {
            continue;
        }
        if i == 0 || j == 0 {
            return Err(bad("indices are 1-based".into()));
        }
        if blk >= 1 && blk <= prob.blocks.len() {
            let n = prob.blocks[blk - 1];
            if i > n || j > n {
                return Err(bad(format!("entry ({i},{j}) outside block {blk}")));
            }
            x[blk - 1][(i - 1, j - 1)] = v;
            x[blk - 1][(j - 1, i - 1)] = v;
        } else if blk == prob.blocks.len() + 1 && prob.n_free > 0 && i == j && i <= split.len() {
            split[i - 1] = v;
        } else {
            return Err(bad(format!("unexpected block {blk}")));
        }
    }
    let y = (0..prob.n_free).map(|f| split[f] - split[prob.n_free + f]).collect();
    Ok((x, y))
}

static COUNTER: AtomicUsize = AtomicUsize::new(0);

/// Runs `solver problem.dat-s solution.txt` and reads the result back.
pub fn solve_external(prob: &SdpProblem, solver: &Path, tol: f64) -> Result<SdpSolution, SdpError> {
    let tag = format!(
        "psatz-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    );
    let dir = std::env::temp_dir();
    let input = dir.join(format!("{tag}.dat-s"));
    let output = dir.join(format!("{tag}.sol"));
    std::fs::write(&input, write_sdpa(prob)).map_err(|e| SdpError::External(e.to_string()))?;
    let run = Command::new(solver).arg(&input).arg(&output).output();
    let _ = std::fs::remove_file(&input);
    let run = run.map_err(|e| SdpError::External(format!("{}: {e}", solver.display())))?;
    let text = std::fs::read_to_string(&output);
    let _ = std::fs::remove_file(&output);
    if run.status.code() == Some(1) {
        return Ok(SdpSolution::failed(prob, SdpStatus::Infeasible, 0));
    }
    let text = text.map_err(|e| SdpError::External(format!("no solution file: {e}")))?;
    let (x, y) = read_solution(prob, &text)?;
    let residual = prob.residual(&x, &y);
    let min_eig = min_eigenvalue(&x);
    let min_eig = if min_eig.is_finite() { min_eig } else { 0.0 };
    let status = if residual <= tol && min_eig >= -tol {
        SdpStatus::Feasible
    } else {
        SdpStatus::NumericalFailure
    };
    Ok(SdpSolution {
        block_values: x,
        free_values: y,
        status,
        residual,
        min_eig,
        iterations: 0,
    })
}
