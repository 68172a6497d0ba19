//! Scenario files, Monte-Carlo RMSE experiments, runtime benchmarks and
//! report output.

mod report;
mod runtime;
mod scenario;

pub use report::{
    emit_report, rmse_across_runs, rmse_series, EstimatorSeries, ReportFormat, ReportMetadata, RmseReport,
};
pub use runtime::{bench_runtime, random_model, BenchConfig, RuntimeRow, RuntimeTable, BENCH_ESTIMATORS};
pub use scenario::{
    generate_run, load_scenario, monte_carlo, run_scenario, simulate_run, PreparedAttack, RunData, RunOutcome,
    ScenarioConfig, STEP_SECONDS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for one `(run, purpose)` pair under a master seed.
pub fn stream_rng(seed: u64, run: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((run << 8) | (purpose & 0xff));
    rng
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
