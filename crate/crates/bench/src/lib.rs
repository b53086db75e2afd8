//! Shared fixtures for the benchmarks.

use rodharness::actuation::{BankCommand, ControlVector};
use rodharness::execution::RunResult;

/// Bank 2 inserted 20 steps at 2 steps/s from t = 0, bank 1 held.
pub fn b2_insertion() -> ControlVector {
    ControlVector::from_banks(
        BankCommand { pos: 180.0, time: 0.0, speed: 1.0 },
        BankCommand { pos: 80.0, time: 0.0, speed: 2.0 },
    )
}

/// Both banks moving, the second starting after the first has settled.
pub fn sequential() -> ControlVector {
    ControlVector::from_banks(
        BankCommand { pos: 170.0, time: 2.0, speed: 2.0 },
        BankCommand { pos: 90.0, time: 12.0, speed: 3.0 },
    )
}

/// `n` synthetic results with errors spread over [0, 20) percent.
pub fn synthetic_results(n: usize) -> Vec<RunResult> {
    let bands = rodharness::execution::DEFAULT_BANDS;
    (0..n as u64)
        .map(|i| {
            let e = (i.wrapping_mul(2654435761) % 20_000) as f64 / 1000.0;
            RunResult::synthetic(i, -0.2, e, &bands, 10.0)
        })
        .collect()
}
