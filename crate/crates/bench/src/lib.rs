//! Shared fixtures for the benchmarks.

use sitr_core::{generate, resolve_kernel, BandwidthPolicy, Dataset, KernelConfig, KernelFamily, Scenario, ScenarioId, DEFAULT_TRIM};

/// A seeded scenario draw with its simulation kernel.
pub fn fixture(id: ScenarioId, n: usize) -> (Dataset, KernelConfig) {
    let data = generate(&Scenario::new(id, n, 7)).expect("scenario draws are valid");
    let spec = id.truth().spec;
    let components = spec.kind().components() as f64;
    let kernel = resolve_kernel(&data, &spec, KernelFamily::Gaussian, BandwidthPolicy::default())
        .and_then(|k| k.with_trim(DEFAULT_TRIM * components))
        .expect("default bandwidth resolves");
    (data, kernel)
}
