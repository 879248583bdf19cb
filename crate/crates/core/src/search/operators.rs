// SPDX-License-Identifier: Apache-2.0

//! Simulated binary crossover and polynomial mutation on `[0, 1]` genes.

use rand::Rng;

use crate::scene::Genome;
use crate::seeds::rng;

/// Spread factor for one SBX draw `u ∈ [0, 1)`.
fn sbx_beta(u: f64, eta: f64) -> f64 {
    let e = 1.0 / (eta + 1.0);
    if u <= 0.5 {
        (2.0 * u).powf(e)
    } else {
        (1.0 / (2.0 * (1.0 - u))).powf(e)
    }
}

/// SBX over two parents. With probability `1 - prob` the parents are copied;
/// otherwise each gene pair is recombined with probability one half. Children
/// inherit the scene seed of the parent in the same position.
pub fn sbx_crossover_with<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    eta: f64,
    prob: f64,
    rng: &mut R,
) -> (Genome, Genome) {
    assert_eq!(a.len(), b.len(), "parents differ in length");
    let mut c1 = a.clone();
    let mut c2 = b.clone();
    if rng.random::<f64>() >= prob {
        return (c1, c2);
    }
    for i in 0..a.len() {
        let swap: f64 = rng.random();
        let u: f64 = rng.random();
        let (x1, x2) = (a.genes[i], b.genes[i]);
        if swap > 0.5 || (x1 - x2).abs() <= 1e-14 {
            continue;
        }
        let beta = sbx_beta(u, eta);
        c1.genes[i] = (0.5 * ((1.0 + beta) * x1 + (1.0 - beta) * x2)).clamp(0.0, 1.0);
        c2.genes[i] = (0.5 * ((1.0 - beta) * x1 + (1.0 + beta) * x2)).clamp(0.0, 1.0);
    }
    (c1, c2)
}

pub fn sbx_crossover(a: &Genome, b: &Genome, eta: f64, prob: f64, seed: u64) -> (Genome, Genome) {
    sbx_crossover_with(a, b, eta, prob, &mut rng(seed))
}

/// Displacement for one gene at `x ∈ [0, 1]` and draw `u ∈ [0, 1)`.
pub(crate) fn polynomial_delta(x: f64, u: f64, eta: f64) -> f64 {
    let power = 1.0 / (eta + 1.0);
    if u < 0.5 {
        let xy = 1.0 - x;
        let val = 2.0 * u + (1.0 - 2.0 * u) * xy.powf(eta + 1.0);
        val.powf(power) - 1.0
    } else {
        let xy = x;
        let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy.powf(eta + 1.0);
        1.0 - val.powf(power)
    }
}

/// Bounded polynomial mutation; each gene mutates with probability `prob`.
pub fn polynomial_mutation_with<R: Rng + ?Sized>(genome: &Genome, eta: f64, prob: f64, rng: &mut R) -> Genome {
    let mut out = genome.clone();
    for g in &mut out.genes {
        let fire: f64 = rng.random();
        let u: f64 = rng.random();
        if fire < prob {
            *g = (*g + polynomial_delta(*g, u, eta)).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn polynomial_mutation(genome: &Genome, eta: f64, prob: f64, seed: u64) -> Genome {
    polynomial_mutation_with(genome, eta, prob, &mut rng(seed))
}
