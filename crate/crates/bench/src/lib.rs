//! Shared fixtures for the benchmarks and the acceptance harness.

use walldiff_core::drawing::synth::synth_dataset;
use walldiff_core::pipeline::example_from_structural;
use walldiff_core::{Example, SemanticDrawing};

/// Procedural toy layouts at 32×64.
pub fn toy_drawings(n: usize) -> Vec<SemanticDrawing> {
    synth_dataset(n, 64, 32, 0).expect("valid extent")
}

pub fn toy_example() -> Example {
    example_from_structural(&toy_drawings(1)[0], 64, 32).expect("tagged layout")
}
