//! Shared fixtures for the benchmarks.

use sepp_core::simulate::OffspringSpec;
use sepp_core::studies::Table2Regime;
use sepp_core::{CovariateMap, EventCatalog, ModelParams};

/// One draw of the two-year simulation regime (about 2,000 events).
pub fn regime_draw(seed: u64) -> (ModelParams, CovariateMap, EventCatalog) {
    let regime = Table2Regime::default();
    let truth = regime.params();
    let (cov, cat) = regime.draw(&truth, OffspringSpec::default(), seed).expect("simulation");
    (truth, cov, cat)
}
