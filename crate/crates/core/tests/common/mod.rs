//! Generators shared by the integration targets.
#![allow(dead_code)]

use nalgebra::DMatrix;
use psatz::sdp::{BlockEntry, LinearConstraint, SdpProblem};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random constraints around a known PSD point of random rank.
pub fn planted_sdp(rng: &mut ChaCha8Rng) -> SdpProblem {
    let n = rng.gen_range(1..=30);
    let m = rng.gen_range(1..=100.min(n * (n + 1) / 2));
    let r = rng.gen_range(1..=n);
    let f = DMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
    let x = &f * f.transpose();
    let density = rng.gen_range(0.05..0.6);
    let constraints = (0..m)
        .map(|_| {
            let mut entries = Vec::new();
            for i in 0..n {
                for j in i..n {
                    if rng.gen_bool(density) {
                        entries.push(BlockEntry { block: 0, i, j, value: rng.gen_range(-1.0..1.0) });
                    }
                }
            }
            let rhs = entries
                .iter()
                .map(|e| if e.i == e.j { 1.0 } else { 2.0 } * e.value * x[(e.i, e.j)])
                .sum();
            LinearConstraint { entries, free: vec![], rhs }
        })
        .collect();
    SdpProblem { blocks: vec![n], n_free: 0, constraints }
}
