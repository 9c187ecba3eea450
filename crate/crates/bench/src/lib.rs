//! Fixtures shared by the benchmarks.

use socnav::cnp::{self, TrainConfig};
use socnav::dataset::{generate_dataset_with_summary, Layout};
use socnav::{CnpModel, Dataset, SamplingConfig, SfmParams, SimConfig};

/// Small global and local datasets from the single-obstacle and default samplers.
pub fn datasets() -> (Dataset, Dataset) {
    let global = SimConfig {
        sfm: SfmParams::default(),
        sampling: SamplingConfig::single_static_near_path(),
    };
    let (g, _) = generate_dataset_with_summary(20, &global, 0, Layout::Global).expect("global data");
    let (l, _) =
        generate_dataset_with_summary(20, &SimConfig::default(), 0, Layout::Local).expect("local data");
    (g, l)
}

/// An untrained model of the default architecture; timing does not depend on the weights.
pub fn model(data: &Dataset, layout: Layout) -> CnpModel {
    let config = TrainConfig {
        steps: 1,
        ..TrainConfig::default()
    };
    let (mut model, _) = cnp::train(data, layout, &config).expect("one step");
    if layout == Layout::Local {
        model.context = socnav::planners::local_context(data, 0);
    }
    model
}
