//! Command implementations behind the CLI surface.

use crate::config::RunConfig;
use dqc_core::codec::ImagePatch;
use dqc_core::error::{Error, Result};
use dqc_core::model::{Mode, Model};
use dqc_core::pipeline::{qc_image, score_image};
use dqc_core::synth::write_corpus;
use dqc_core::training::{format_loss_log, train, Corpus, CorpusRole};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// Generate the synthetic corpus and emit the resolved config into the
/// output directory.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    write_corpus(&cfg.synth, out_dir)?;
    cfg.emit(&out_dir.join("config.toml"))?;
    println!(
        "wrote corpus to {} ({} train clean, {} train artifact, {} test clean, {} test artifact)",
        out_dir.display(),
        cfg.synth.train_clean,
        cfg.synth.train_artifact,
        cfg.synth.test_clean,
        cfg.synth.test_artifact
    );
    Ok(())
}

/// Train a model and write the model file, the per-step loss log
/// (`<out>.loss.tsv`), and the resolved config (`<out>.config.toml`).
pub fn cmd_train(
    cfg: &RunConfig,
    clean_dir: &Path,
    artifact_dir: Option<&Path>,
    out_model: &Path,
) -> Result<()> {
    match (cfg.train.mode, artifact_dir) {
        (Mode::Basic, Some(_)) => {
            return Err(Error::Config(
                "basic mode takes no artifact directory; pass --enhanced to use one".into(),
            ))
        }
        (Mode::Enhanced, None) => {
            return Err(Error::Config(
                "enhanced mode requires --artifact <dir> with artifact patches".into(),
            ))
        }
        _ => {}
    }
    let clean = Corpus::open(clean_dir, CorpusRole::Clean)?;
    let artifact = artifact_dir
        .map(|dir| Corpus::open(dir, CorpusRole::Artifact))
        .transpose()?;
    let schedule = cfg.schedule.build()?;
    let codec = cfg.codec.build()?;

    let outcome = train(&clean, artifact.as_ref(), &cfg.train, &cfg.net, &codec, &schedule)?;

    let (t_star, draws) = cfg.inference_for_training();
    let model = Model::assemble(
        cfg.schedule,
        cfg.codec,
        outcome.denoiser,
        outcome.adaptor,
        t_star,
        draws,
    )?;
    model.save(out_model)?;

    let log_path = sibling(out_model, ".loss.tsv");
    std::fs::write(&log_path, format_loss_log(&outcome.log)).map_err(|e| Error::io(&log_path, e))?;
    cfg.emit(&sibling(out_model, ".config.toml"))?;

    let last = outcome.log.last();
    println!(
        "wrote {} model to {} ({} steps, final loss {})",
        model.mode,
        out_model.display(),
        outcome.log.len(),
        last.map_or("n/a".to_string(), |r| format!("{:.6}", r.combined)),
    );
    Ok(())
}

/// Score a whole image into a stitched heatmap (DQCH).
pub fn cmd_score(
    cfg: &RunConfig,
    model_path: &Path,
    image_path: &Path,
    out_heatmap: &Path,
    jobs: usize,
) -> Result<()> {
    let model = Model::load(model_path)?;
    let image = ImagePatch::load(image_path)?;
    let inference = cfg.inference_for(&model);
    let heatmap = score_image(&image, &model, &cfg.tile, &inference, jobs)?;
    heatmap.save_dqch(out_heatmap)?;
    cfg.emit(&sibling(out_heatmap, ".config.toml"))?;
    println!(
        "wrote heatmap {}x{} to {} (mean {:.6}, max {:.6})",
        heatmap.height(),
        heatmap.width(),
        out_heatmap.display(),
        heatmap.mean(),
        heatmap.max()
    );
    Ok(())
}

/// Full QC: stitched heatmap, binary mask, and a key/value report carrying
/// the threshold actually used.
pub fn cmd_qc(
    cfg: &RunConfig,
    model_path: &Path,
    image_path: &Path,
    out_mask: &Path,
    out_heatmap: &Path,
    out_report: &Path,
    jobs: usize,
) -> Result<()> {
    let model = Model::load(model_path)?;
    let image = ImagePatch::load(image_path)?;
    let inference = cfg.inference_for(&model);
    let outcome = qc_image(&image, &model, &cfg.tile, &inference, &cfg.postprocess, jobs)?;

    outcome.heatmap.save_dqch(out_heatmap)?;
    outcome
        .mask
        .to_gray()
        .save(out_mask)
        .map_err(|e| Error::image(out_mask, e))?;

    let mut report = String::new();
    writeln!(report, "image\t{}", image_path.display()).unwrap();
    writeln!(report, "model\t{}", model_path.display()).unwrap();
    writeln!(report, "mode\t{}", model.mode).unwrap();
    writeln!(report, "patch\t{}", cfg.tile.patch).unwrap();
    writeln!(report, "stride\t{}", cfg.tile.stride).unwrap();
    writeln!(report, "t_star\t{}", inference.t_star).unwrap();
    writeln!(report, "draws\t{}", inference.draws).unwrap();
    writeln!(report, "seed\t{}", inference.seed).unwrap();
    writeln!(report, "sigma\t{:.6}", cfg.postprocess.sigma).unwrap();
    writeln!(report, "v_min\t{:.6}", cfg.postprocess.v_min).unwrap();
    writeln!(report, "v_max\t{:.6}", cfg.postprocess.v_max).unwrap();
    writeln!(report, "bins\t{}", cfg.postprocess.bins).unwrap();
    writeln!(report, "morph_radius\t{}", cfg.postprocess.morph_radius).unwrap();
    writeln!(report, "threshold_used\t{:.6}", outcome.mask.threshold_used).unwrap();
    writeln!(report, "mask_area_fraction\t{:.6}", outcome.mask.area_fraction()).unwrap();
    writeln!(report, "heatmap_mean\t{:.6}", outcome.heatmap.mean()).unwrap();
    writeln!(report, "heatmap_max\t{:.6}", outcome.heatmap.max()).unwrap();
    std::fs::write(out_report, report).map_err(|e| Error::io(out_report, e))?;
    cfg.emit(&sibling(out_report, ".config.toml"))?;

    println!(
        "wrote mask to {} (threshold {:.6}, area {:.4})",
        out_mask.display(),
        outcome.mask.threshold_used,
        outcome.mask.area_fraction()
    );
    Ok(())
}

/// Evaluate predicted masks against a ground-truth split and write the
/// metrics report.
pub fn cmd_eval(cfg: &RunConfig, pred_dir: &Path, gt_dir: &Path, out_report: &Path) -> Result<()> {
    let report = dqc_core::eval::evaluate_corpus(pred_dir, gt_dir)?;
    std::fs::write(out_report, report.render()).map_err(|e| Error::io(out_report, e))?;
    cfg.emit(&sibling(out_report, ".config.toml"))?;
    println!(
        "evaluated {} images: sensitivity {:.4}, precision {:.4}, f1 {:.4}",
        report.images, report.sensitivity, report.precision, report.f1
    );
    Ok(())
}
