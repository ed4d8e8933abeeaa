//! One training run of the toy task, from configuration to test scores.

use ctcattn::{Charset, Model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::Result;
use crate::synth::{Splits, SynthTaskSpec};
use crate::train::{evaluate, train, Scores, TrainReport};

/// Generated data for a run.
#[derive(Clone, Debug)]
pub struct Task {
    pub spec: SynthTaskSpec,
    pub splits: Splits,
}

impl Task {
    pub fn charset(&self) -> &Charset {
        &self.spec.vocab
    }
}

pub fn build_task(run: &RunConfig) -> Result<Task> {
    let spec = SynthTaskSpec::new(&run.task, run.data_seed)?;
    let splits = Splits::generate(&spec, &run.task)?;
    Ok(Task { spec, splits })
}

/// Freshly initialized model; the draw depends only on the training seed.
pub fn fresh_model(run: &RunConfig, input_dim: usize, cs: &Charset) -> Result<Model> {
    let cfg = run.model.model_config(input_dim, cs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(run.train.seed);
    rng.set_stream(2);
    Ok(Model::init(cfg, &mut rng)?)
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub report: TrainReport,
    pub test: Scores,
}

pub fn run_on(run: &RunConfig, task: &Task) -> Result<RunResult> {
    run.validate()?;
    let cs = task.charset();
    let model = fresh_model(run, task.spec.dim(), cs)?;
    let report = train(model, &task.splits.train, &task.splits.dev, cs, &run.train)?;
    let test = evaluate(&report.best_model, &task.splits.test, cs)?;
    Ok(RunResult { report, test })
}
