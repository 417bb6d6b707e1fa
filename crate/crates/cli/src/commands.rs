use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsc_core::checkpoint::Checkpoint;
use dsc_core::compact::{compact, count_nonzero, count_params, flops_ratio};
use dsc_core::nn::Model;
use dsc_core::optim::Optimizer;
use dsc_core::prune::{dsc1_run, dsc2_run, EpochObserver, EpochRecord, PhaseConfig, PruneMask, PruneSpace, RunData};
use dsc_core::tensor::Tensor;
use dsc_core::{Error, Result};

use crate::config::{PruneMethod, RunConfig};
use crate::data::{self, Splits};
use crate::manifest::{Manifest, SpaceCount, StageRecord};
use crate::metrics::{epoch_row, eval_row, MetricsFile};

pub const MODEL_CKPT: &str = "model.ckpt";
pub const PRUNED_CKPT: &str = "pruned.ckpt";
pub const COMPACT_CKPT: &str = "compact.ckpt";
pub const METRICS: &str = "metrics.csv";
pub const MANIFEST: &str = "manifest.json";

/// How a command that ran to completion judged its result.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok,
    /// A configured target was missed; carries the explanation.
    Missed(String),
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Input(format!("{}: {e}", cfg.out_dir.display())))?;
    Ok(cfg.out_dir.clone())
}

fn load_checkpoint(path: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    if ck.model.spec.architecture != cfg.model.architecture {
        return Err(Error::Config(format!(
            "checkpoint {} holds {}, config asks for {}",
            path.display(),
            ck.model.spec.architecture.name(),
            cfg.model.architecture.name()
        )));
    }
    Ok(ck)
}

/// Newest checkpoint in `dir` among `names`, in preference order.
fn latest(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Input(format!("no checkpoint ({}) in {}", names.join(", "), dir.display())))
}

fn run_data(s: &Splits) -> RunData<'_> {
    RunData {
        train: &s.train,
        val: s.val.as_ref(),
        test: Some(&s.test),
    }
}

fn errors(model: &Model<f32>, s: &Splits) -> Result<(Option<f64>, f64)> {
    Ok((
        s.val.as_ref().map(|v| model.evaluate(v)).transpose()?,
        model.evaluate(&s.test)?,
    ))
}

pub fn cmd_train(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let splits = data::load(&cfg.data)?;
    let (mut model, mut opt, start) = match checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p, cfg)?;
            let opt = match ck.optimizer {
                Some(o) if o.config == cfg.optimizer => o,
                _ => Optimizer::new(cfg.optimizer, &ck.model)?,
            };
            (ck.model, opt, ck.epoch)
        }
        None => {
            let m = Model::<f32>::build(&cfg.model_spec(), cfg.seed)?;
            let o = Optimizer::new(cfg.optimizer, &m)?;
            (m, o, 0)
        }
    };
    let names = cfg.space_names();
    let mut metrics = MetricsFile::create(&dir.join(METRICS), &names)?;
    let nonzero_start = count_nonzero(&model);
    let phase = PhaseConfig::training("train", cfg.train.epochs, cfg.train.lr.clone());
    let mut failed = None;
    let mut observe = |_: &Model<f32>, rec: &EpochRecord, _: &[PruneSpace], _: &[PruneMask]| {
        if failed.is_none() {
            failed = metrics.write_row(&epoch_row(rec, &names)).err();
        }
    };
    let observer: &mut EpochObserver<'_> = &mut observe;
    let out = dsc1_run(
        &mut model,
        &mut opt,
        &phase,
        run_data(&splits),
        &cfg.settings,
        start + 1,
        Some(observer),
    )?;
    if let Some(e) = failed {
        return Err(e);
    }
    let last = start + out.records.len();
    let (val, test) = errors(&model, &splits)?;
    let ck_path = dir.join(MODEL_CKPT);
    Checkpoint::new(model.clone(), Some(opt), last).save(&ck_path)?;
    println!("train: {} epochs, test_error {test:.6}", out.records.len());
    if let Some(v) = val {
        println!("train: val_error {v:.6}");
    }
    Manifest::update(
        &dir,
        cfg,
        "train",
        StageRecord {
            input_checkpoint: checkpoint.map(Path::to_path_buf),
            output_checkpoint: Some(ck_path),
            first_epoch: start + 1,
            last_epoch: last,
            params: count_params(&model),
            nonzero_start,
            nonzero_end: count_nonzero(&model),
            spaces: Vec::new(),
            val_error: val,
            test_error: Some(test),
            details: None,
        },
    )?;
    Ok(match cfg.train.target_error {
        Some(t) if test > t => Outcome::Missed(format!("test error {test:.6} is above the target {t}")),
        _ => Outcome::Ok,
    })
}

pub fn cmd_prune(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Outcome> {
    let prune = cfg
        .prune
        .as_ref()
        .ok_or_else(|| Error::Config("`prune` section missing from config".into()))?;
    let dir = out_dir(cfg)?;
    let splits = data::load(&cfg.data)?;
    let (mut model, start) = match checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p, cfg)?;
            (ck.model, ck.epoch)
        }
        None => (Model::<f32>::build(&cfg.model_spec(), cfg.seed)?, 0),
    };
    let mut opt = Optimizer::new(prune.optimizer.unwrap_or(cfg.optimizer), &model)?;
    let names = cfg.space_names();
    let mut metrics = MetricsFile::append(&dir.join(METRICS), &names)?;
    let nonzero_start = count_nonzero(&model);
    let mut counts = Vec::new();
    let mut epoch = start + 1;
    for phase in &prune.phases {
        let starts: Vec<usize> = phase
            .spaces
            .iter()
            .map(|s| PruneSpace::build(&model, s).map(|sp| sp.mask_from_model(&model).support_size()))
            .collect::<Result<_>>()?;
        let mut failed = None;
        let mut observe = |_: &Model<f32>, rec: &EpochRecord, _: &[PruneSpace], _: &[PruneMask]| {
            if failed.is_none() {
                failed = metrics.write_row(&epoch_row(rec, &names)).err();
            }
        };
        let observer: &mut EpochObserver<'_> = &mut observe;
        let run = match prune.method {
            PruneMethod::Dsc1 => dsc1_run,
            PruneMethod::Dsc2 => dsc2_run,
        };
        let out = run(
            &mut model,
            &mut opt,
            phase,
            run_data(&splits),
            &cfg.settings,
            epoch,
            Some(observer),
        )?;
        if let Some(e) = failed {
            return Err(e);
        }
        epoch += out.records.len();
        for ((space, mask), start) in out.spaces.iter().zip(&out.masks).zip(starts) {
            counts.push(SpaceCount {
                phase: phase.name.clone(),
                space: space.name.clone(),
                size: space.len(),
                start,
                end: mask.support_size(),
                target: space.schedule.target(space.len()),
            });
        }
    }
    let (val, test) = errors(&model, &splits)?;
    let ck_path = dir.join(PRUNED_CKPT);
    Checkpoint::new(model.clone(), Some(opt), epoch - 1).save(&ck_path)?;
    for c in &counts {
        println!(
            "prune: {}/{}: {} of {} kept (target {})",
            c.phase, c.space, c.end, c.size, c.target
        );
    }
    println!(
        "prune: nonzero {} of {}, test_error {test:.6}",
        count_nonzero(&model),
        count_params(&model)
    );
    Manifest::update(
        &dir,
        cfg,
        "prune",
        StageRecord {
            input_checkpoint: checkpoint.map(Path::to_path_buf),
            output_checkpoint: Some(ck_path),
            first_epoch: start + 1,
            last_epoch: epoch - 1,
            params: count_params(&model),
            nonzero_start,
            nonzero_end: count_nonzero(&model),
            spaces: counts,
            val_error: val,
            test_error: Some(test),
            details: None,
        },
    )?;
    Ok(Outcome::Ok)
}

/// Uniform `[-1, 1)` inputs shaped for `model`; compaction must be exact
/// for any input, so the probe need not come from the data.
pub fn probe_batch(model: &Model<f32>, n: usize, seed: u64) -> Tensor<f32> {
    let mut shape = vec![n];
    shape.extend(&model.spec.input_shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0070_7262);
    Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))
}

pub fn cmd_compact(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => latest(&dir, &[PRUNED_CKPT, MODEL_CKPT])?,
    };
    let ck = load_checkpoint(&path, cfg)?;
    let probe = probe_batch(&ck.model, 256, cfg.seed);
    let (small, report) = compact(&ck.model, Some(&probe))?;
    let out = dir.join(COMPACT_CKPT);
    Checkpoint::new(small, None, ck.epoch).save(&out)?;
    let ratio = flops_ratio(report.flops_before, report.flops_after);
    println!(
        "compact: params {} -> {}, nonzero {} -> {}, flops {} -> {} (ratio {ratio:.6}), max divergence {:.3e}",
        report.params_before,
        report.params_after,
        report.nonzero_before,
        report.nonzero_after,
        report.flops_before,
        report.flops_after,
        report.max_output_divergence.unwrap_or(0.0)
    );
    for (l, n) in report.removed_neurons.iter().chain(&report.removed_channels) {
        println!("compact: {l}: removed {n}");
    }
    let details = serde_json::json!({
        "removed_neurons": report.removed_neurons,
        "removed_channels": report.removed_channels,
        "params_before": report.params_before,
        "params_after": report.params_after,
        "nonzero_before": report.nonzero_before,
        "nonzero_after": report.nonzero_after,
        "flops_before": report.flops_before,
        "flops_after": report.flops_after,
        "flops_ratio": ratio,
        "max_output_divergence": report.max_output_divergence,
    });
    Manifest::update(
        &dir,
        cfg,
        "compact",
        StageRecord {
            input_checkpoint: Some(path),
            output_checkpoint: Some(out),
            first_epoch: ck.epoch,
            last_epoch: ck.epoch,
            params: report.params_after,
            nonzero_start: report.nonzero_before,
            nonzero_end: report.nonzero_after,
            spaces: Vec::new(),
            val_error: None,
            test_error: None,
            details: Some(details),
        },
    )?;
    Ok(Outcome::Ok)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Outcome> {
    let dir = out_dir(cfg)?;
    let path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => latest(&dir, &[COMPACT_CKPT, PRUNED_CKPT, MODEL_CKPT])?,
    };
    let ck = load_checkpoint(&path, cfg)?;
    let splits = data::load(&cfg.data)?;
    let (val, test) = errors(&ck.model, &splits)?;
    if let Some(v) = val {
        println!("val_error\t{v:.6}");
    }
    println!("test_error\t{test:.6}");
    let names = cfg.space_names();
    MetricsFile::append(&dir.join(METRICS), &names)?.write_row(&eval_row(ck.epoch, val, test, &names))?;
    Ok(Outcome::Ok)
}
