//! Fixtures shared by the benchmarks.

use ofrnn_core::data::{generate_dataset, DatasetManifest, GeneratorConfig};
use ofrnn_core::model::{ModelDims, ModelParams};

/// A slice of the default benchmark and a freshly initialized model of the
/// default size for it.
pub fn benchmark_fixture(n_train: usize) -> (DatasetManifest, ModelParams) {
    let cfg = GeneratorConfig {
        n_train,
        n_test: 0,
        ..GeneratorConfig::benchmark(1)
    };
    let ds = generate_dataset(&cfg).expect("benchmark config is valid").train;
    let dims = ModelDims::with_defaults(ds.labels, ds.feature_dim, ds.regions);
    let params = ModelParams::init(dims, 1).expect("default dims are valid");
    (ds, params)
}
