//! Deterministic inputs shared by the benchmarks.

use slope_tradeoff::{PenaltyVector, QpInstance, Result};

/// Pseudo-random values in [-scale, scale] from a fixed linear congruential stream.
pub fn signal(p: usize, scale: f64) -> Vec<f64> {
    let mut state: u64 = 0x2545_f491_4f6c_dd1d;
    (0..p)
        .map(|_| {
            state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            scale * (2.0 * u - 1.0)
        })
        .collect()
}

/// Linearly decaying penalty from `top` down to `top / 10`.
pub fn decaying_penalty(p: usize, top: f64) -> Result<PenaltyVector> {
    let step = if p > 1 { 0.9 * top / (p - 1) as f64 } else { 0.0 };
    PenaltyVector::new((0..p).map(|i| top - step * i as f64).collect())
}

/// Monotone-chain QP whose unconstrained minimizer zigzags below and above the floor.
pub fn chain_qp(m: usize) -> Result<QpInstance> {
    let noise = signal(m, 1.0);
    let q: Vec<f64> = (0..m).map(|i| 1.0 + (i % 7) as f64 / 7.0).collect();
    let d: Vec<f64> = q
        .iter()
        .zip(&noise)
        .enumerate()
        .map(|(i, (qi, z))| qi * (1.0 + 2.0 * i as f64 / m as f64 + z))
        .collect();
    QpInstance::chain(q, d, 0.5)
}
