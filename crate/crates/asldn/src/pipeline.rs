//! The four pipeline stages behind the command line: simulate, train,
//! eval and report, plus the network description.

use std::fs;
use std::path::{Path, PathBuf};

use asldn_core::metrics::{self, Aggregate, EvaluationContext, MetricRow, MetricsReport};
use asldn_core::trainer::{self, EpochReport};
use asldn_core::{Dwan, Error as CoreError, NetworkParameters, Tensor};
use rayon::prelude::*;

use crate::config::{RunConfig, TrainMode};
use crate::dataset::{self, Dataset, Role};
use crate::error::{Error, IoContext, Result};
use crate::format;
use crate::pgm;
use crate::runner::Parallel;

pub const CONFIG_ECHO: &str = "config.txt";
pub const LOSS_CSV: &str = "loss.csv";
pub const CHECKPOINTS_CSV: &str = "checkpoints.csv";
pub const FINAL_WEIGHTS: &str = "final.aslw";
pub const LAST_GOOD_WEIGHTS: &str = "last_good.aslw";
pub const METRICS_CSV: &str = "metrics.csv";
pub const REPORT_CSV: &str = "report.csv";
/// Suffix of methods scored against the clean image instead of the pseudo gold standard.
pub const CLEAN_SUFFIX: &str = "@clean";

fn echo_config(dir: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    let text = format!(
        "# asldn {} {command}\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.to_text()
    );
    format::write_atomic(&dir.join(CONFIG_ECHO), text.as_bytes())
}

/// `simulate`: writes the dataset plus a config echo.
pub fn simulate(cfg: &RunConfig, force: bool) -> Result<Dataset> {
    let ds = dataset::build_dataset(cfg, force)?;
    echo_config(&ds.root, cfg, "simulate")?;
    Ok(ds)
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_step{step:08}.aslw")
}

fn to_network(image: &Tensor<f64>, scale: f64) -> Tensor<f32> {
    image.map(|v| v / scale).cast()
}

/// Runs the network on one `[H, W]` image in CBF units.
pub fn denoise(net: &Dwan, params: &NetworkParameters<f32>, image: &Tensor<f64>, scale: f64) -> Result<Tensor<f64>> {
    let [h, w] = image.dims2("denoise")?;
    let x = to_network(image, scale).into_reshaped(&[1, 1, h, w])?;
    let y = net.forward(params, &x)?;
    Ok(y.cast::<f64>().map(|v| v * scale).into_reshaped(&[h, w])?)
}

struct Scored {
    image: Tensor<f64>,
    truth: Tensor<f64>,
    gm: Tensor<f64>,
    wm: Tensor<f64>,
    range: f64,
}

impl Scored {
    fn against<'a>(&'a self, truth: &'a Tensor<f64>) -> EvaluationContext<'a> {
        EvaluationContext {
            truth,
            gm_mask: &self.gm,
            wm_mask: &self.wm,
            data_range: self.range,
        }
    }
}

fn load_scored(ds: &Dataset, id: &str) -> Result<Scored> {
    let truth = ds.image(id, "pgs")?;
    Ok(Scored {
        image: ds.image(id, "input1")?,
        range: truth.max_value(),
        truth,
        gm: ds.image(id, "gm_mask")?,
        wm: ds.image(id, "wm_mask")?,
    })
}

fn mean_psnr(net: &Dwan, params: &NetworkParameters<f32>, set: &[Scored], scale: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in set {
        let out = denoise(net, params, &s.image, scale)?;
        total += s.against(&s.truth).row("", "", &out)?.psnr_db;
    }
    Ok(total / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub step: u64,
    /// Mean validation PSNR against the pseudo gold standard (NaN without validation subjects).
    pub val_psnr_db: f64,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub loss_trace: Vec<f64>,
    pub steps: u64,
    pub checkpoints: Vec<Checkpoint>,
    /// Index into `checkpoints` of the weights saved as `final.aslw`.
    pub selected: usize,
    pub final_weights: PathBuf,
}

fn loss_csv(trace: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, l) in trace.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", i + 1));
    }
    s
}

fn checkpoints_csv(cps: &[Checkpoint]) -> String {
    let mut s = String::from("epoch,step,val_psnr_db,file\n");
    for c in cps {
        let file = c.path.file_name().map(|f| f.to_string_lossy()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{file}\n", c.epoch, c.step, c.val_psnr_db));
    }
    s
}

/// `train`: fits a DWAN on the training split and keeps the checkpoint with
/// the best validation PSNR as `final.aslw`.
///
/// Checkpoints are written every `checkpoint_every` epochs and after the last
/// epoch. On a non-finite loss the run stops, the untouched parameters are
/// saved as `last_good.aslw`, earlier checkpoints are kept and the error is
/// returned.
pub fn train(cfg: &RunConfig, runner: &Parallel) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = Dataset::open(&cfg.dataset)?;
    let scale = cfg.intensity_scale;
    let train_ids: Vec<&str> = ds.manifest.with_role(Role::Train).map(|e| e.id.as_str()).collect();
    if train_ids.is_empty() {
        return Err(CoreError::EmptyDataset.into());
    }
    let mut pairs = Vec::with_capacity(2 * train_ids.len());
    for id in &train_ids {
        let (t1, t2) = match cfg.mode {
            TrainMode::Lfn => (ds.image(id, "ref1")?, ds.image(id, "ref2")?),
            TrainMode::Gold => {
                let g = ds.image(id, "pgs")?;
                (g.clone(), g)
            }
        };
        pairs.push((to_network(&ds.image(id, "input1")?, scale), to_network(&t1, scale)));
        pairs.push((to_network(&ds.image(id, "input2")?, scale), to_network(&t2, scale)));
    }
    let val: Vec<Scored> = ds
        .manifest
        .with_role(Role::Val)
        .map(|e| load_scored(&ds, &e.id))
        .collect::<Result<_>>()?;

    let out = &cfg.run_dir;
    fs::create_dir_all(out).at(out)?;
    echo_config(out, cfg, "train")?;

    let net = Dwan::new(cfg.dwan_spec())?;
    let mut params = net.init::<f32>(cfg.init_seed());
    let tc = cfg.train_config();
    let mut trace = Vec::new();
    let mut checkpoints: Vec<Checkpoint> = Vec::new();
    let mut best: Option<(usize, f64, NetworkParameters<f32>)> = None;

    let mut on_epoch = |r: &EpochReport, p: &NetworkParameters<f32>| -> Result<()> {
        trace.push(r.mean_loss);
        let due = (tc.checkpoint_every > 0 && r.epoch % tc.checkpoint_every == 0) || r.epoch == tc.epochs;
        if !due {
            return Ok(());
        }
        let path = out.join(checkpoint_name(r.steps));
        format::save_params(&path, p)?;
        let v = if val.is_empty() {
            f64::NAN
        } else {
            mean_psnr(&net, p, &val, scale)?
        };
        // Ties and missing validation favour the later checkpoint.
        if best.as_ref().is_none_or(|(_, b, _)| !(v < *b)) {
            best = Some((checkpoints.len(), v, p.clone()));
        }
        checkpoints.push(Checkpoint {
            epoch: r.epoch,
            step: r.steps,
            val_psnr_db: v,
            path,
        });
        Ok(())
    };

    let mut io_error = None;
    let result = trainer::train(&net, &mut params, &pairs, &tc, runner, |r, p| {
        on_epoch(r, p).map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            CoreError::InvalidArgument(msg)
        })
    });
    format::write_atomic(&out.join(LOSS_CSV), loss_csv(&trace).as_bytes())?;
    format::write_atomic(&out.join(CHECKPOINTS_CSV), checkpoints_csv(&checkpoints).as_bytes())?;
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            if let Some(e) = io_error {
                return Err(e);
            }
            if matches!(e, CoreError::NonFiniteLoss { .. }) {
                format::save_params(&out.join(LAST_GOOD_WEIGHTS), &params)?;
            }
            return Err(e.into());
        }
    };

    let final_weights = out.join(FINAL_WEIGHTS);
    let (selected, params) = match best {
        Some((i, _, p)) => (i, p),
        None => {
            // No epochs ran: the initial weights are the only candidate.
            let path = out.join(checkpoint_name(0));
            format::save_params(&path, &params)?;
            checkpoints.push(Checkpoint {
                epoch: 0,
                step: 0,
                val_psnr_db: f64::NAN,
                path,
            });
            format::write_atomic(&out.join(CHECKPOINTS_CSV), checkpoints_csv(&checkpoints).as_bytes())?;
            (0, params)
        }
    };
    format::save_params(&final_weights, &params)?;
    Ok(TrainSummary {
        loss_trace: outcome.loss_trace,
        steps: outcome.steps,
        checkpoints,
        selected,
        final_weights,
    })
}

fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject_id", "method", "psnr_db", "ssim", "snr", "gmwm_contrast"])?;
    for r in rows {
        w.write_record([
            r.subject_id.clone(),
            r.method.clone(),
            r.psnr_db.to_string(),
            r.ssim.to_string(),
            r.snr.to_string(),
            r.gmwm_contrast.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    format::write_atomic(path, &bytes)
}

/// `eval`: denoises each test subject's first segment mean and scores input,
/// output and pseudo gold standard.
///
/// Methods `input` and `<method>` are scored against the pseudo gold
/// standard; `input@clean`, `<method>@clean` and `pgs@clean` against the
/// clean image. All PSNR/SSIM use the subject's pseudo-gold-standard maximum
/// as data range. Writes `metrics.csv`, one PGM panel per subject
/// (input / pseudo gold standard / output) and a correlation map per method.
pub fn eval(cfg: &RunConfig, runner: &Parallel) -> Result<MetricsReport> {
    let ds = Dataset::open(&cfg.dataset)?;
    let net = Dwan::new(cfg.dwan_spec())?;
    let params: NetworkParameters<f32> = format::load_params(&cfg.weights_path())?;
    net.check_params(&params)?;
    let method = cfg.method_name();
    let ids: Vec<&str> = ds.manifest.with_role(Role::Test).map(|e| e.id.as_str()).collect();
    if ids.is_empty() {
        return Err(Error::Manifest("no test subjects".into()));
    }
    let out = &cfg.eval_dir;
    fs::create_dir_all(out.join("panels")).at(out)?;
    echo_config(out, cfg, "eval")?;

    struct PerSubject {
        rows: Vec<MetricRow>,
        input: Tensor<f64>,
        output: Tensor<f64>,
        pgs: Tensor<f64>,
    }
    let per: Vec<PerSubject> = runner.install(|| {
        ids.par_iter()
            .map(|&id| -> Result<PerSubject> {
                let s = load_scored(&ds, id)?;
                let clean = ds.image(id, "clean")?;
                let output = denoise(&net, &params, &s.image, cfg.intensity_scale)?;
                let vs = |truth| s.against(truth);
                let rows = vec![
                    vs(&s.truth).row(id, "input", &s.image)?,
                    vs(&s.truth).row(id, &method, &output)?,
                    vs(&clean).row(id, &format!("input{CLEAN_SUFFIX}"), &s.image)?,
                    vs(&clean).row(id, &format!("{method}{CLEAN_SUFFIX}"), &output)?,
                    vs(&clean).row(id, &format!("pgs{CLEAN_SUFFIX}"), &s.truth)?,
                ];
                pgm::write_panel(
                    &out.join("panels").join(format!("{id}.pgm")),
                    &[&s.image, &s.truth, &output],
                    cfg.display_max,
                )?;
                Ok(PerSubject {
                    rows,
                    input: s.image,
                    output,
                    pgs: s.truth,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut report = MetricsReport::default();
    for p in &per {
        report.rows.extend(p.rows.iter().cloned());
    }
    write_metrics_csv(&out.join(METRICS_CSV), &report.rows)?;

    let pgs: Vec<Tensor<f64>> = per.iter().map(|p| p.pgs.clone()).collect();
    for (name, images) in [
        ("input".to_string(), per.iter().map(|p| p.input.clone()).collect::<Vec<_>>()),
        (method.clone(), per.iter().map(|p| p.output.clone()).collect()),
    ] {
        if images.len() < 3 {
            break;
        }
        let map = metrics::correlation_map(&images, &pgs, cfg.correlation_threshold)?;
        format::write_tensor(&out.join(format!("corr_{name}.aslt")), &map)?;
        let [h, w] = map.dims2("correlation map")?;
        format::write_atomic(
            &out.join(format!("corr_{name}.pgm")),
            &pgm::encode(h, w, &pgm::correlation_levels(&map, cfg.correlation_threshold)),
        )?;
        report.correlation_maps.push((name, map));
    }
    Ok(report)
}

/// Reads metric rows from one or more evaluation CSVs.
pub fn read_metrics(paths: &[PathBuf]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for path in paths {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["subject_id", "method", "psnr_db", "ssim", "snr", "gmwm_contrast"] {
            return Err(Error::Invalid(format!("{}: unexpected header", path.display())));
        }
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| {
                    Error::Invalid(format!("{}: line {}: bad number {:?}", path.display(), rec.position().map_or(0, |p| p.line()), &rec[i]))
                })
            };
            rows.push(MetricRow {
                subject_id: rec[0].to_string(),
                method: rec[1].to_string(),
                psnr_db: num(2)?,
                ssim: num(3)?,
                snr: num(4)?,
                gmwm_contrast: num(5)?,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Invalid("no metric rows".into()));
    }
    Ok(rows)
}

pub fn report_csv(aggs: &[Aggregate]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method", "n", "psnr_db_mean", "psnr_db_std", "ssim_mean", "ssim_std", "snr_mean", "snr_std",
        "gmwm_contrast_mean", "gmwm_contrast_std",
    ])?;
    for a in aggs {
        let mut rec = vec![a.method.clone(), a.count.to_string()];
        for k in 0..4 {
            rec.push(a.mean[k].to_string());
            rec.push(a.std[k].to_string());
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

/// Human-readable `mean ± std` table.
pub fn report_table(aggs: &[Aggregate]) -> String {
    let mut s = format!(
        "{:<20} {:>3}  {:>16}  {:>15}  {:>15}  {:>15}\n",
        "method", "n", "PSNR (dB)", "SSIM", "SNR", "GM/WM"
    );
    for a in aggs {
        s.push_str(&format!(
            "{:<20} {:>3}  {:>7.2} ± {:<6.2}  {:>6.3} ± {:<6.3}  {:>6.2} ± {:<6.2}  {:>6.3} ± {:<6.3}\n",
            a.method, a.count, a.mean[0], a.std[0], a.mean[1], a.std[1], a.mean[2], a.std[2], a.mean[3], a.std[3]
        ));
    }
    s
}

/// `report`: aggregates CSVs and optionally writes the aggregate CSV.
pub fn report(paths: &[PathBuf], out: Option<&Path>) -> Result<Vec<Aggregate>> {
    let aggs = metrics::aggregate(&read_metrics(paths)?);
    if let Some(out) = out {
        format::write_atomic(out, &report_csv(&aggs)?)?;
    }
    Ok(aggs)
}

/// `describe`: audit of the configured network, using saved weights when given.
pub fn describe(cfg: &RunConfig, weights: Option<&Path>) -> Result<String> {
    let net = Dwan::new(cfg.dwan_spec())?;
    let params: NetworkParameters<f32> = match weights {
        Some(p) => format::load_params(p)?,
        None => net.init(cfg.init_seed()),
    };
    Ok(net.audit(&params)?.to_string())
}
