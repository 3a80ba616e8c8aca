//! Optimization loop, cross-validation and inference.

pub mod adam;
pub mod checkpoint;
pub mod crossval;
pub mod predict;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use daf3d_tensor::{Graph, Scalar, Tensor};
use rand::seq::SliceRandom;

use crate::config::{LossConfig, LrSchedule, TrainConfig};
use crate::data::{augment, load_mask, load_volume, normalize, DatasetManifest, Mask, Volume};
use crate::error::{Error, Result};
use crate::loss::{total_loss_grad, TotalLoss};
use crate::model::Model;
use crate::seed;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use crossval::{crossval, CrossvalResult, FoldResult};
pub use predict::{predict_volume, Prediction};

/// One training or evaluation case held in memory.
#[derive(Clone, Debug)]
pub struct Case {
    pub volume: Volume,
    pub mask: Mask,
}

impl Case {
    pub fn id(&self) -> &str {
        &self.volume.id
    }
}

pub fn load_cases(manifest: &DatasetManifest) -> Result<Vec<Case>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let mut volume = load_volume(&e.volume_path)?;
            volume.id = e.case_id.clone();
            let mask = load_mask(&e.mask_path)?;
            mask.check_pair(&volume)?;
            Ok(Case { volume, mask })
        })
        .collect()
}

/// A volume as a `(1, 1, W, H, L)` network input.
pub fn volume_tensor<F: Scalar>(v: &Volume) -> Tensor<F> {
    let [w, h, l] = v.shape();
    let data = v.data.iter().map(|&x| F::from_f64_lossy(x as f64)).collect();
    Tensor::from_vec(&[1, 1, w, h, l], data).expect("volume extent matches its data")
}

pub fn mask_values<F: Scalar>(m: &Mask) -> Vec<F> {
    m.data.iter().map(|&x| if x == 1 { F::one() } else { F::zero() }).collect()
}

/// Loss of one case and the gradient of every parameter.
pub fn loss_and_grads<F: Scalar>(
    model: &Model<F>,
    x: &Tensor<F>,
    g: &[F],
    loss: &LossConfig,
) -> Result<(TotalLoss, Vec<Option<Tensor<F>>>)> {
    let mut graph = Graph::new(&model.params);
    let xv = graph.constant(x.clone());
    let vars = model.net.forward(&mut graph, xv)?;
    let preds = vars.predictions();
    let values: [&[F]; 9] = std::array::from_fn(|i| graph.value(preds[i]).data());
    let (total, grads) = total_loss_grad(values, g, &loss.weights, loss.bce_reduction)?;
    let seeds = preds
        .iter()
        .zip(grads)
        .map(|(&v, gr)| Ok((v, Tensor::from_vec(graph.shape(v), gr)?)))
        .collect::<Result<Vec<_>>>()?;
    let grads = graph.backward(seeds)?;
    Ok((total, grads.into_params()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub epoch: usize,
    pub total_loss: f64,
    pub dice_loss_final: f64,
    pub bce_loss_final: f64,
}

pub const CURVE_HEADER: &str = "iteration,epoch,total_loss,dice_loss_final,bce_loss_final";

impl CurveRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?}",
            self.iteration, self.epoch, self.total_loss, self.dice_loss_final, self.bce_loss_final
        )
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub optimizer: Adam<f32>,
    pub curve: Vec<CurveRow>,
    /// Mean total loss of each completed epoch.
    pub epoch_means: Vec<f64>,
    pub epochs_completed: usize,
    pub checkpoints: Vec<PathBuf>,
}

/// Where [`train`] writes its curve and checkpoints; all optional.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub curve_csv: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainOutputs {
    /// `curve.csv` and `checkpoints/` inside `dir`, unless the config names
    /// its own checkpoint directory.
    pub fn in_dir(dir: &Path, cfg: &TrainConfig) -> Self {
        Self {
            curve_csv: Some(dir.join("curve.csv")),
            checkpoint_dir: Some(cfg.train.checkpoint_dir.clone().unwrap_or_else(|| dir.join("checkpoints"))),
        }
    }
}

struct Sample {
    case_id: String,
    x: Tensor<f32>,
    g: Vec<f32>,
}

fn prepare(case: &Case, cfg: &TrainConfig, epoch: usize) -> Sample {
    let (v, m) = if cfg.train.augment {
        let s = seed::derive_str(cfg.seed, &format!("augment:{}", case.id()), &[epoch as u64]);
        augment(&case.volume, &case.mask, s)
    } else {
        (case.volume.clone(), case.mask.clone())
    };
    let v = normalize(&v);
    Sample { case_id: case.id().to_string(), x: volume_tensor(&v), g: mask_values(&m) }
}

fn learning_rate(cfg: &TrainConfig, iteration: usize, planned: usize) -> f64 {
    match cfg.train.lr_schedule {
        LrSchedule::Constant => cfg.train.lr,
        LrSchedule::Cosine => {
            let t = (iteration as f64 / planned.max(1) as f64).min(1.0);
            0.5 * cfg.train.lr * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

fn signal_diagnostics(l: &TotalLoss) -> String {
    let names = ["slf1", "slf2", "slf3", "slf4", "att1", "att2", "att3", "att4", "final"];
    names
        .iter()
        .zip(&l.signals)
        .map(|(n, s)| format!("{n}: dice {} bce {}", s.dice, s.bce))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Runs the optimization. Each epoch visits every case once in a seeded
/// shuffled order; `batch_size` cases are accumulated per Adam step. An
/// optional `init` model replaces the seeded initialization.
pub fn train(cfg: &TrainConfig, cases: &[Case], outputs: &TrainOutputs, init: Option<Model<f32>>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut model = match init {
        Some(m) => m,
        None => Model::<f32>::new(&cfg.network, cfg.seed)?,
    };
    let t = &cfg.train;
    let mut optimizer = Adam::new(&model.params, t.beta1, t.beta2, t.adam_eps);
    let steps_per_epoch = cases.len().div_ceil(t.batch_size);
    let planned = if t.max_iterations > 0 { t.max_iterations.min(t.epochs * steps_per_epoch) } else { t.epochs * steps_per_epoch };

    let mut curve_file = match &outputs.curve_csv {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let mut f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
            writeln!(f, "{CURVE_HEADER}").map_err(|e| Error::io(p, e))?;
            Some((f, p.clone()))
        }
        None => None,
    };
    if let Some(dir) = &outputs.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut curve = Vec::new();
    let mut epoch_means = Vec::new();
    let mut checkpoints = Vec::new();
    let mut iteration = 0;
    let mut epochs_completed = 0;
    'epochs: for epoch in 1..=t.epochs {
        let mut order: Vec<usize> = (0..cases.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive_str(cfg.seed, "shuffle", &[epoch as u64])));
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0;
        let result = std::thread::scope(|scope| -> Result<bool> {
            let (tx, rx) = mpsc::sync_channel::<Sample>(t.prefetch_depth.max(1));
            let order_ref = &order;
            let producer = scope.spawn(move || {
                for &i in order_ref {
                    if tx.send(prepare(&cases[i], cfg, epoch)).is_err() {
                        break;
                    }
                }
            });
            let mut stop = false;
            for _ in 0..steps_per_epoch {
                let batch: Vec<Sample> = rx.iter().take(t.batch_size).collect();
                if batch.is_empty() {
                    break;
                }
                let mut acc: Vec<Option<Tensor<f32>>> = Vec::new();
                let mut mean = [0.0f64; 3];
                for s in &batch {
                    let (loss, grads) = loss_and_grads(&model, &s.x, &s.g, &cfg.loss)?;
                    if !loss.total.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            iteration: iteration + 1,
                            epoch,
                            case_id: s.case_id.clone(),
                            detail: signal_diagnostics(&loss),
                        });
                    }
                    mean[0] += loss.total;
                    mean[1] += loss.final_signal().dice;
                    mean[2] += loss.final_signal().bce;
                    if acc.is_empty() {
                        acc = grads;
                    } else {
                        for (a, g) in acc.iter_mut().zip(grads) {
                            match (a.as_mut(), g) {
                                (Some(a), Some(g)) => a.add_assign(&g),
                                (None, Some(g)) => *a = Some(g),
                                _ => {}
                            }
                        }
                    }
                }
                let b = batch.len() as f64;
                if batch.len() > 1 {
                    for g in acc.iter_mut().flatten() {
                        g.scale(1.0 / b as f32);
                    }
                }
                if acc.iter().flatten().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        iteration: iteration + 1,
                        epoch,
                        case_id: batch[0].case_id.clone(),
                        detail: "non-finite gradient".into(),
                    });
                }
                let lr = learning_rate(cfg, iteration, planned);
                optimizer.update(&mut model.params, &acc, lr)?;
                iteration += 1;
                let row = CurveRow {
                    iteration,
                    epoch,
                    total_loss: mean[0] / b,
                    dice_loss_final: mean[1] / b,
                    bce_loss_final: mean[2] / b,
                };
                if let Some((f, p)) = curve_file.as_mut() {
                    writeln!(f, "{}", row.csv_line()).map_err(|e| Error::io(p.as_path(), e))?;
                }
                epoch_sum += row.total_loss;
                epoch_count += 1;
                curve.push(row);
                if t.max_iterations > 0 && iteration >= t.max_iterations {
                    stop = true;
                    break;
                }
            }
            drop(rx);
            producer.join().expect("prefetch thread panicked");
            Ok(stop)
        });
        let stop = result?;
        if epoch_count > 0 {
            epoch_means.push(epoch_sum / epoch_count as f64);
            log::info!("epoch {epoch}: mean loss {:.5} over {epoch_count} steps", epoch_sum / epoch_count as f64);
        }
        epochs_completed = epoch;
        if let Some(dir) = &outputs.checkpoint_dir {
            let path = dir.join(format!("epoch_{epoch:03}.ckpt"));
            Checkpoint { epoch, config: cfg.clone(), model: model.clone(), optimizer: optimizer.clone() }.save(&path)?;
            checkpoints.push(path);
        }
        if stop {
            break 'epochs;
        }
    }
    Ok(TrainOutcome { model, optimizer, curve, epoch_means, epochs_completed, checkpoints })
}

/// Loads every case of `manifest` and trains on it.
pub fn train_manifest(cfg: &TrainConfig, manifest: &DatasetManifest, outputs: &TrainOutputs) -> Result<TrainOutcome> {
    manifest.check_files()?;
    let cases = load_cases(manifest)?;
    train(cfg, &cases, outputs, None)
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<CurveRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CURVE_HEADER {
        return Err(Error::format(path, format!("expected header {CURVE_HEADER}")));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec.get(i).unwrap_or("").parse::<f64>().map_err(|e| Error::format(path, e.to_string()));
        out.push(CurveRow {
            iteration: num(0)? as usize,
            epoch: num(1)? as usize,
            total_loss: num(2)?,
            dice_loss_final: num(3)?,
            bce_loss_final: num(4)?,
        });
    }
    Ok(out)
}
