//! Experiment configs, runs on disk, snapshot evaluation, cross-run
//! comparison and the invariant checks behind the `check` command.

pub mod checks;
mod compare;
mod config;
pub mod io;

pub use compare::{
    compare_dirs, load_run_dir, median, parse_summary_csv, summarize, summary_csv, summary_text, SeedSeries,
    SummaryRow, SUMMARY_HEADER,
};
pub use config::{apply_overrides, trainer_keys, ExperimentConfig, RUN_KEYS};
pub use io::Snapshot;

use std::path::{Path, PathBuf};

use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::gradcore::ParamStore;
use crate::train::{evaluate_policy, stream_rng, streams, EvalResult, Learner, Trainer, TrainerConfig};

/// Files written for one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutput {
    pub seed: u64,
    pub metrics: PathBuf,
    pub visitation: PathBuf,
    pub snapshot: PathBuf,
    pub final_return: Option<f64>,
    pub final_win_rate: Option<f64>,
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics_{seed}.csv"))
}

pub fn visitation_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("visitation_{seed}.csv"))
}

pub fn snapshot_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("final_{seed}"))
}

pub fn snapshot_of(trainer: &Trainer) -> Snapshot {
    Snapshot {
        env: trainer.cfg.env.clone(),
        mixer: trainer.cfg.mixer,
        seed: trainer.cfg.seed,
        env_steps: trainer.env_steps,
        train_steps: trainer.train_steps,
        params: trainer.learner.params.clone(),
    }
}

/// Trains one seed and writes its files. Metrics and visitation are written
/// even when training fails part way.
pub fn run_seed(cfg: TrainerConfig, dir: &Path) -> Result<SeedOutput> {
    let seed = cfg.seed;
    let mut trainer = Trainer::new(cfg)?;
    let outcome = trainer.run();
    let out = SeedOutput {
        seed,
        metrics: metrics_path(dir, seed),
        visitation: visitation_path(dir, seed),
        snapshot: snapshot_path(dir, seed),
        final_return: trainer.metrics.last().map(|r| r.eval_mean_return),
        final_win_rate: trainer.metrics.last().map(|r| r.eval_win_rate),
    };
    io::write_file(&out.metrics, &io::metrics_csv(&trainer.metrics))?;
    io::write_file(&out.visitation, &io::visitation_csv(&trainer.visitation))?;
    outcome?;
    io::write_file(&out.snapshot, &io::snapshot_text(&snapshot_of(&trainer)))?;
    Ok(out)
}

/// Runs every seed of `cfg` in order under `cfg.output_dir`, next to a copy
/// of the resolved config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedOutput>> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    io::write_file(&cfg.output_dir.join("config.toml"), &cfg.to_toml()?)?;
    cfg.seeds
        .iter()
        .map(|&seed| {
            log::info!("{}: seed {seed}", cfg.name);
            run_seed(cfg.for_seed(seed), &cfg.output_dir)
        })
        .collect()
}

/// Rebuilds the learner of `cfg` and replaces its parameters by `params`.
/// Names and shapes must match exactly.
pub fn learner_with_params(cfg: &TrainerConfig, params: &ParamStore) -> Result<Learner> {
    let env = make_env(&cfg.env)?;
    let mut learner = Learner::new(cfg, env.spec(), &mut stream_rng(cfg.seed, streams::INIT))?;
    if params.len() != learner.params.len() {
        return Err(Error::InvalidArgument(format!(
            "snapshot has {} tensors, the configured networks have {}",
            params.len(),
            learner.params.len()
        )));
    }
    for (name, p) in params.iter() {
        if !learner.params.contains(name) {
            return Err(Error::MissingParam(name.to_string()));
        }
        learner.params.set_value(name, p.value().clone())?;
    }
    learner.sync_targets();
    Ok(learner)
}

/// Greedy evaluation of a saved snapshot under `cfg` (its env, network
/// sizes, `eval_episodes` and seed).
pub fn evaluate_snapshot(snapshot: &Snapshot, cfg: &TrainerConfig) -> Result<EvalResult> {
    if snapshot.env != cfg.env || snapshot.mixer != cfg.mixer {
        return Err(Error::InvalidArgument(format!(
            "snapshot was trained as {}/{}, config describes {}/{}",
            snapshot.env, snapshot.mixer, cfg.env, cfg.mixer
        )));
    }
    let learner = learner_with_params(cfg, &snapshot.params)?;
    let mut env = make_env(&cfg.env)?;
    evaluate_policy(
        env.as_mut(),
        &learner.utility,
        &learner.params,
        cfg.eval_episodes,
        &mut stream_rng(cfg.seed, streams::EVAL),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixer::MixerKind;

    fn small(dir: &Path, seeds: Vec<u64>) -> ExperimentConfig {
        let mut trainer = TrainerConfig::new("matrix3", MixerKind::Mnmpg, seeds[0], 200);
        trainer.eval_interval = 100;
        trainer.batch_episodes = 8;
        trainer.meta_batch_episodes = Some(8);
        trainer.utility_hidden = 8;
        ExperimentConfig {
            name: "t".into(),
            output_dir: dir.to_path_buf(),
            seeds,
            trainer,
        }
    }

    #[test]
    fn two_seeds_write_two_sets_of_files() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), vec![1, 2]);
        let outs = run_experiment(&cfg).unwrap();
        assert_eq!(outs.len(), 2);
        for o in &outs {
            assert!(o.metrics.exists() && o.visitation.exists() && o.snapshot.exists());
        }
        let again = ExperimentConfig::load(&tmp.path().join("config.toml")).unwrap();
        assert_eq!(again, cfg);
        let series = load_run_dir(tmp.path()).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].rows.len(), 2);
    }

    #[test]
    fn snapshot_evaluation_reproduces_training_weights() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small(tmp.path(), vec![3]);
        let out = &run_experiment(&cfg).unwrap()[0];
        let snap = io::parse_snapshot(&io::read_file(&out.snapshot).unwrap(), "s").unwrap();
        let trainer_cfg = cfg.for_seed(3);
        let res = evaluate_snapshot(&snap, &trainer_cfg).unwrap();
        assert_eq!(res.returns.len(), trainer_cfg.eval_episodes);
        let mut wrong = trainer_cfg.clone();
        wrong.mixer = MixerKind::Qmix;
        assert!(evaluate_snapshot(&snap, &wrong).is_err());
        let mut resized = trainer_cfg;
        resized.utility_hidden = 16;
        assert!(evaluate_snapshot(&snap, &resized).is_err());
    }
}
