//! `report`: tables derived only from a run directory's artifacts.

use std::fmt::Write as _;
use std::path::Path;

use dsc_core::checkpoint::Checkpoint;
use dsc_core::compact::{
    channel_counts, compact, count_flops, count_nonzero, count_params, count_unmasked, flops_ratio, layer_report,
    report_csv,
};
use dsc_core::nn::Model;
use dsc_core::prune::PruneSpace;
use dsc_core::{Error, Result};

use crate::commands::{MANIFEST, METRICS, MODEL_CKPT, PRUNED_CKPT};
use crate::manifest::Manifest;
use crate::metrics::write_atomic;

pub const REPORT: &str = "report.csv";
pub const SUMMARY: &str = "summary.csv";
pub const CHANNELS: &str = "channels.csv";
pub const SCHEDULE_TRACE: &str = "schedule_trace.csv";

fn missing(dir: &Path) -> Error {
    Error::Input(format!(
        "{} is not a complete run directory; expected {MANIFEST}, {METRICS} and {PRUNED_CKPT} or {MODEL_CKPT}",
        dir.display()
    ))
}

/// Per-space `epoch, M_e` for every phase in the manifest's config: the
/// real-valued schedule, its fraction of `M`, and the integer target.
pub fn schedule_trace(manifest: &Manifest) -> Result<String> {
    let mut out = String::from("phase,space,epoch,m_real,m_fraction,m_target\n");
    let Some(prune) = &manifest.config.prune else {
        return Ok(out);
    };
    let model = Model::<f32>::build(&manifest.config.model_spec(), 0)?;
    for phase in &prune.phases {
        for s in &phase.spaces {
            let m = PruneSpace::build(&model, s)?.len();
            let mut prev = m;
            for e in 1..=s.schedule.niter {
                let real = s.schedule.real_value(e, m)?;
                prev = s.schedule.value(e, m, prev)?;
                let _ = writeln!(
                    out,
                    "{},{},{e},{real:.6},{:.12},{prev}",
                    phase.name,
                    s.name,
                    real / m as f64
                );
            }
        }
    }
    Ok(out)
}

/// Writes `report.csv`, `summary.csv`, `channels.csv` and
/// `schedule_trace.csv` into `dir`. Re-running rewrites identical bytes.
pub fn cmd_report(dir: &Path) -> Result<()> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() || !dir.join(METRICS).is_file() {
        return Err(missing(dir));
    }
    let ck_path = [PRUNED_CKPT, MODEL_CKPT]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| missing(dir))?;
    let manifest = Manifest::read(&manifest_path)?;
    let model = Checkpoint::load(&ck_path)?.model;

    write_atomic(&dir.join(REPORT), report_csv(&layer_report(&model)?).as_bytes())?;

    let dense = Model::<f32>::build(&model.spec, 0)?;
    let (small, _) = compact(&model, None)?;
    let (fd, fc) = (count_flops(&dense)?, count_flops(&small)?);
    let mut summary = String::from("metric,value\n");
    let _ = writeln!(
        summary,
        "checkpoint,{}",
        ck_path.file_name().and_then(|n| n.to_str()).unwrap_or("")
    );
    let _ = writeln!(summary, "params,{}", count_params(&model));
    let _ = writeln!(summary, "unmasked,{}", count_unmasked(&model));
    let _ = writeln!(summary, "nonzero,{}", count_nonzero(&model));
    let _ = writeln!(summary, "params_compact,{}", count_params(&small));
    let _ = writeln!(summary, "flops_dense,{fd}");
    let _ = writeln!(summary, "flops_compact,{fc}");
    let _ = writeln!(summary, "flops_ratio,{:.6}", flops_ratio(fd, fc));
    write_atomic(&dir.join(SUMMARY), summary.as_bytes())?;

    let mut ch = String::from("layer,live,total,kept_fraction\n");
    for (name, live, total) in channel_counts(&model) {
        let _ = writeln!(ch, "{name},{live},{total},{:.6}", live as f64 / total as f64);
    }
    write_atomic(&dir.join(CHANNELS), ch.as_bytes())?;

    write_atomic(&dir.join(SCHEDULE_TRACE), schedule_trace(&manifest)?.as_bytes())?;
    println!(
        "report: wrote {REPORT}, {SUMMARY}, {CHANNELS}, {SCHEDULE_TRACE} in {}",
        dir.display()
    );
    Ok(())
}
