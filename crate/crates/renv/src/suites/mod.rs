pub mod exclusion;
pub mod hybrid;
pub mod jackson;
pub mod ouenv;

use rayon::prelude::*;

use crate::output::Outcome;
use crate::RunError;

pub type Job<'a> = Box<dyn Fn() -> Result<Outcome, RunError> + Send + Sync + 'a>;

/// Runs independent checks in parallel and concatenates them in job order.
pub fn run_jobs(jobs: Vec<Job<'_>>) -> Result<Outcome, RunError> {
    let parts: Vec<Result<Outcome, RunError>> = jobs.par_iter().map(|j| j()).collect();
    let mut out = Outcome::default();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn steps(t_end: f64, dt: f64) -> u64 {
    (t_end / dt).round().max(1.0) as u64
}

pub fn runtime<E: std::error::Error + Send + Sync + 'static>(e: E) -> RunError {
    RunError::Runtime(anyhow::Error::new(e))
}
