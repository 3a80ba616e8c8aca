use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use daf3d::config::{ExperimentConfig, VolumeFormat};
use daf3d::data::{
    load_mask, load_volume, make_folds, save_mask, save_volume, synth_phantom, DatasetManifest, FileFormat,
    ManifestEntry, Volume,
};
use daf3d::metrics::{
    aggregate, anova_f, evaluate_case_with_spacing, format_table, rank_sum_test, read_reports_csv, write_reports_csv,
    METRIC_NAMES,
};
use daf3d::seed;
use daf3d::train::{self, crossval, load_cases, predict_volume, Checkpoint, TrainOutputs};

use crate::{Cli, Command, CrossvalArgs, EvaluateArgs, PredictArgs, StatsArgs, SynthArgs, TrainArgs};

pub enum CliError {
    Usage(String),
    Runtime(daf3d::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<daf3d::Error> for CliError {
    fn from(e: daf3d::Error) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e)
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(daf3d::Error::Io { path: path.to_path_buf(), source: e })
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

/// Validates the final settings and snapshots them into the output directory.
fn finish_config(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    cfg.save_resolved(&cfg.output.dir)?;
    Ok(())
}

fn manifest_path(cfg: &ExperimentConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| cfg.data.manifest.clone())
        .ok_or_else(|| CliError::Usage("no manifest given (use --manifest or set data.manifest)".into()))
}

fn extension(cfg: &ExperimentConfig) -> &'static str {
    match cfg.data.format {
        VolumeFormat::Nifti => FileFormat::Nifti.extension(),
        VolumeFormat::Raw => FileFormat::Raw.extension(),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth(a) => synth(&mut cfg, a),
        Command::Train(a) => train_cmd(&mut cfg, a),
        Command::Crossval(a) => crossval_cmd(&mut cfg, a),
        Command::Predict(a) => predict(&mut cfg, a),
        Command::Evaluate(a) => evaluate(&mut cfg, a),
        Command::Stats(a) => stats(&cfg, a),
    }
}

fn synth(cfg: &mut ExperimentConfig, a: &SynthArgs) -> Result<()> {
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", out.display())))?;
    finish_config(cfg)?;
    let ext = extension(cfg);
    let mut entries = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let spec = cfg.data.phantom.with_seed(seed::derive_str(cfg.seed, "phantom", &[i as u64]));
        let (mut v, m) = synth_phantom(&spec)?;
        let id = format!("phantom_{i:03}");
        v.id = id.clone();
        let vp = out.join(format!("{id}.{ext}"));
        let mp = out.join(format!("{id}_mask.{ext}"));
        save_volume(&vp, &v)?;
        save_mask(&mp, &m)?;
        entries.push(ManifestEntry { case_id: id, volume_path: vp, mask_path: mp, fold: None });
    }
    let manifest = DatasetManifest::new(entries)?;
    let path = out.join("manifest.csv");
    manifest.save(&path)?;
    println!("wrote {} phantom pairs and {}", a.count, path.display());
    Ok(())
}

fn train_cmd(cfg: &mut ExperimentConfig, a: &TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    let mpath = manifest_path(cfg, &a.manifest)?;
    cfg.data.manifest = Some(mpath.clone());
    finish_config(cfg)?;
    let manifest = DatasetManifest::load(&mpath)?;
    let tc = cfg.train_config();
    let out = &cfg.output.dir;
    let outcome = train::train_manifest(&tc, &manifest, &TrainOutputs::in_dir(out, &tc))?;
    let final_path = out.join("final.ckpt");
    Checkpoint { epoch: outcome.epochs_completed, config: tc, model: outcome.model, optimizer: outcome.optimizer }
        .save(&final_path)?;
    for (e, m) in outcome.epoch_means.iter().enumerate() {
        println!("epoch {:>3}  mean loss {:.5}", e + 1, m);
    }
    println!("checkpoint: {}", final_path.display());
    Ok(())
}

fn crossval_cmd(cfg: &mut ExperimentConfig, a: &CrossvalArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(k) = a.folds {
        cfg.train.folds = k;
    }
    let mpath = manifest_path(cfg, &a.manifest)?;
    cfg.data.manifest = Some(mpath.clone());
    finish_config(cfg)?;
    let mut manifest = DatasetManifest::load(&mpath)?;
    if !manifest.has_folds() {
        manifest = make_folds(&manifest, cfg.train.folds, cfg.seed)?;
        manifest.save(cfg.output.dir.join("folds.csv"))?;
    }
    manifest.check_files()?;
    let cases = load_cases(&manifest)?;
    let folds: Vec<usize> = manifest.entries.iter().map(|e| e.fold.unwrap_or_default()).collect();
    let result = crossval(&cfg.train_config(), &cases, &folds, Some(&cfg.output.dir))?;
    print!("{}", result.table());
    Ok(())
}

fn predict(cfg: &mut ExperimentConfig, a: &PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    cfg.seed = ck.config.seed;
    cfg.network = ck.config.network.clone();
    cfg.loss = ck.config.loss.clone();
    cfg.train = ck.config.train.clone();
    if let Some(t) = a.threshold {
        cfg.train.threshold = t;
    }
    finish_config(cfg)?;
    let inputs: Vec<(String, PathBuf)> = match (&a.input, &a.manifest) {
        (Some(p), _) => vec![(daf3d::data::io::stem_id(p), p.clone())],
        (None, Some(m)) => {
            DatasetManifest::load(m)?.entries.into_iter().map(|e| (e.case_id, e.volume_path)).collect()
        }
        (None, None) => return Err(CliError::Usage("give --input or --manifest".into())),
    };
    let out = cfg.output.dir.join("predictions");
    let ext = extension(cfg);
    let mut timing = String::from("case_id,seconds\n");
    for (id, path) in inputs {
        let v = load_volume(&path)?;
        let p = predict_volume(&ck.model, &v, cfg.train.threshold, a.dump_attention.is_some())?;
        save_mask(out.join(format!("{id}.{ext}")), &p.mask)?;
        let probs = Volume { id: id.clone(), data: p.probabilities, spacing: v.spacing };
        save_volume(out.join(format!("{id}_prob.{ext}")), &probs)?;
        if let (Some(dir), Some(maps)) = (&a.dump_attention, p.attention) {
            let scale = [4.0, 4.0, 2.0];
            let spacing = std::array::from_fn(|i| v.spacing[i] * scale[i]);
            for (k, m) in maps.into_iter().enumerate() {
                let att = Volume { id: format!("{id}_attention{}", k + 1), data: m, spacing };
                save_volume(dir.join(format!("{id}_attention{}.raw", k + 1)), &att)?;
            }
        }
        println!("{id}: inference {:.3} s, {} foreground voxels", p.seconds, p.mask.count());
        timing.push_str(&format!("{id},{:?}\n", p.seconds));
    }
    let tpath = cfg.output.dir.join("timing.csv");
    fs::write(&tpath, timing).map_err(|e| io_err(&tpath, e))?;
    Ok(())
}

fn find_prediction(dir: &Path, id: &str) -> Option<PathBuf> {
    ["nii.gz", "nii", "raw"].iter().map(|e| dir.join(format!("{id}.{e}"))).find(|p| p.exists())
}

fn evaluate(cfg: &mut ExperimentConfig, a: &EvaluateArgs) -> Result<()> {
    if a.mm {
        cfg.eval.distances_mm = true;
    }
    let mpath = manifest_path(cfg, &a.manifest)?;
    cfg.data.manifest = Some(mpath.clone());
    finish_config(cfg)?;
    let manifest = DatasetManifest::load(&mpath)?;
    let mut reports = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let g = load_mask(&e.mask_path)?;
        let pp = find_prediction(&a.predictions, &e.case_id).ok_or_else(|| {
            CliError::Runtime(daf3d::Error::Io {
                path: a.predictions.join(&e.case_id),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no predicted mask for this case"),
            })
        })?;
        let s = load_mask(&pp)?;
        let spacing = if cfg.eval.distances_mm { g.spacing.map(f64::from) } else { [1.0; 3] };
        reports.push(evaluate_case_with_spacing(&e.case_id, &s, &g, spacing)?);
    }
    let path = cfg.output.dir.join("metrics.csv");
    write_reports_csv(&path, &reports)?;
    print!("{}", format_table(&[("evaluated".to_string(), aggregate(&reports))]));
    println!("per-case metrics: {}", path.display());
    Ok(())
}

fn stats(cfg: &ExperimentConfig, a: &StatsArgs) -> Result<()> {
    finish_config(cfg)?;
    let sets = a.csv.iter().map(read_reports_csv).collect::<daf3d::Result<Vec<_>>>()?;
    let mut out = String::from("metric,n_a,n_b,u,p_value,exact,anova_f\n");
    println!("{:<10} {:>4} {:>4} {:>8} {:>10} {:>6} {:>10}", "metric", "n_a", "n_b", "U", "p", "exact", "F");
    for (i, m) in METRIC_NAMES.iter().enumerate() {
        let values: Vec<Vec<f64>> = sets.iter().map(|s| s.iter().filter_map(|r| r.values()[i]).collect()).collect();
        let rs = rank_sum_test(&values[0], &values[1]).ok();
        let f = anova_f(&values).ok();
        let fmt_opt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        println!(
            "{:<10} {:>4} {:>4} {:>8} {:>10} {:>6} {:>10}",
            m,
            values[0].len(),
            values[1].len(),
            fmt_opt(rs.map(|r| r.u)),
            fmt_opt(rs.map(|r| r.p_value)),
            rs.map_or("n/a".to_string(), |r| r.exact.to_string()),
            fmt_opt(f),
        );
        let csv_opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:?}"));
        out.push_str(&format!(
            "{m},{},{},{},{},{},{}\n",
            values[0].len(),
            values[1].len(),
            csv_opt(rs.map(|r| r.u)),
            csv_opt(rs.map(|r| r.p_value)),
            rs.map_or(String::new(), |r| r.exact.to_string()),
            csv_opt(f)
        ));
    }
    let path = cfg.output.dir.join("stats.csv");
    fs::write(&path, out).map_err(|e| io_err(&path, e))?;
    Ok(())
}
