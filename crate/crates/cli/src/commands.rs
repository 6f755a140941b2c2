use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clickseg_core::augment::{augment_sample, StandardAugConfig, SuemConfig};
use clickseg_core::bench::{evaluate_dataset, render_report, DatasetReport, EvalConfig, References, ReportEntry};
use clickseg_core::dataset::{load_dataset, synthetic_dataset, write_dataset, write_sample, AnnotatedSample};
use clickseg_core::formats::{encode_cspm, read_image, write_mask};
use clickseg_core::seed::stream;
use clickseg_core::segmenter::{load_params, persist_params, ConstantSegmenter, ExternalSegmenter, OracleSegmenter};
use clickseg_core::train::{metrics_csv, train, AdamConfig, IclConfig};
use clickseg_core::{SegmentationSession, Segmenter, SegmenterError, ToyModel, ToyModelParams};
use clickseg_service::{AppState, ServiceConfig, SharedFactory};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::manifest::Manifest;

/// Runs one parsed invocation inside a rayon pool of `--jobs` threads.
pub fn execute(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs as usize)
        .build()?;
    pool.install(|| run(cli))
}

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Augment(a) => augment(cli, a),
        Command::TrainToy(a) => train_toy(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Segment(a) => segment(cli, a),
        Command::Serve(a) => serve(g, a),
        Command::Rerun(a) => rerun(a),
    }
}

fn load(source: &DataSource) -> Result<Vec<AnnotatedSample>> {
    let samples = match source {
        DataSource::Dir(p) => load_dataset(p).with_context(|| format!("loading dataset {}", p.display()))?,
        DataSource::Synth { count, size, seed } => synthetic_dataset(*count, *size, *seed),
    };
    if samples.is_empty() {
        bail!("dataset {source} has no usable samples");
    }
    Ok(samples)
}

fn read_params(path: &Path) -> Result<ToyModelParams> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    load_params(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Builds per-worker segmenters for a selector. Toy parameters are read
/// once up front.
fn factory(spec: &SegmenterSpec, timeout: Duration) -> Result<SharedFactory> {
    Ok(match spec {
        SegmenterSpec::Toy(path) => {
            let params = match path {
                Some(p) => read_params(p)?,
                None => ToyModelParams::click_prior(),
            };
            Arc::new(move || -> Result<Box<dyn Segmenter>, SegmenterError> { Ok(Box::new(ToyModel::new(params))) })
        }
        SegmenterSpec::External(cmd) => {
            let cmd = cmd.clone();
            Arc::new(move || -> Result<Box<dyn Segmenter>, SegmenterError> {
                Ok(Box::new(ExternalSegmenter::spawn_shell(&cmd, timeout)?))
            })
        }
        SegmenterSpec::Oracle => {
            Arc::new(|| -> Result<Box<dyn Segmenter>, SegmenterError> { Ok(Box::new(OracleSegmenter::new())) })
        }
        SegmenterSpec::Empty => {
            Arc::new(|| -> Result<Box<dyn Segmenter>, SegmenterError> { Ok(Box::new(ConstantSegmenter(0.0))) })
        }
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    if a.count == 0 || a.size < 8 {
        bail!("synth needs --count >= 1 and --size >= 8");
    }
    out_dir(&a.out)?;
    let samples = synthetic_dataset(a.count, a.size, cli.global.seed);
    write_dataset(&a.out, &samples)?;
    Manifest::new(cli, json!({"count": a.count, "size": a.size, "seed": cli.global.seed})).write_in(&a.out)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn augment(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let pool = load(&a.data)?;
    let cfg = SuemConfig {
        mode_probs: a
            .mode_probs
            .clone()
            .try_into()
            .map_err(|_| anyhow::anyhow!("--mode-probs takes 4 values"))?,
        apply_prob: a.apply_prob,
        standard: StandardAugConfig {
            output_size: a.output_size,
            ..StandardAugConfig::default()
        },
        seed: cli.global.seed,
        ..SuemConfig::default()
    };
    cfg.validate()?;
    out_dir(&a.out)?;
    let count = a.count.unwrap_or(pool.len());
    let mut failures = 0;
    for i in 0..count {
        let mut rng = stream(cli.global.seed, &[i as u64]);
        match augment_sample(&pool, i % pool.len(), &mut rng, &cfg) {
            Ok((mut sample, prov)) => {
                sample.id = format!("aug{i:05}");
                write_sample(&a.out, &sample, Some(&prov))?;
            }
            Err(e) => {
                failures += 1;
                tracing::warn!("sample {i} ({}): {e}", pool[i % pool.len()].id);
            }
        }
    }
    if failures == count {
        bail!("every augmentation failed");
    }
    Manifest::new(cli, json!({ "suem": cfg, "count": count, "failures": failures })).write_in(&a.out)?;
    println!(
        "wrote {} augmented samples ({failures} failed) to {}",
        count - failures,
        a.out.display()
    );
    Ok(())
}

fn train_toy(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let data = load(&a.data)?;
    let holdout = match &a.holdout {
        Some(h) => load(h)?,
        None => Vec::new(),
    };
    let cfg = IclConfig {
        t: a.t,
        betas: a.betas.clone(),
        initial_beta: a.initial_beta,
        nfl_alpha: a.alpha,
        nfl_gamma: a.gamma,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: cli.global.seed,
        radius: a.radius,
        eval_every: if holdout.is_empty() { 0 } else { a.eval_every },
        ..IclConfig::default()
    };
    let suem = a.suem.then(|| SuemConfig {
        apply_prob: a.suem_apply_prob,
        standard: StandardAugConfig {
            output_size: data[0].image.width().max(data[0].image.height()),
            ..StandardAugConfig::default()
        },
        seed: cli.global.seed,
        ..SuemConfig::default()
    });
    let init = match &a.init {
        Some(p) => read_params(p)?,
        None => ToyModelParams::default(),
    };
    out_dir(&a.out)?;
    let out = train(init, &data, &holdout, &cfg, suem.as_ref(), |m| {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        tracing::info!(
            "epoch {:>3}  loss {:.5}  NoC@90 {}  IoU@1 {}  IoU@3 {}",
            m.epoch,
            m.mean_loss,
            fmt(m.holdout_noc90),
            fmt(m.holdout_iou1),
            fmt(m.holdout_iou3)
        );
    })?;
    fs::write(a.out.join("params.cstm"), persist_params(&out.params))?;
    fs::write(a.out.join("metrics.csv"), metrics_csv(&out.metrics))?;
    Manifest::new(cli, json!({ "icl": cfg, "suem": suem, "init": init.weights }))
        .with_outputs(json!({
            "weights": out.params.weights,
            "skipped_samples": out.skipped_samples,
            "augment_failures": out.augment_failures,
            "skipped_updates": out.skipped_updates,
        }))
        .write_in(&a.out)?;
    println!("weights {:?}", out.params.weights);
    println!("wrote {}", a.out.join("params.cstm").display());
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let data = load(&a.data)?;
    let make = factory(&a.segmenter, Duration::from_secs(a.timeout_secs))?;
    out_dir(&a.out)?;
    let model = a.model_name.clone().unwrap_or_else(|| a.segmenter.to_string());
    let dataset = a.dataset_name.clone().unwrap_or_else(|| a.data.to_string());
    let mut reports: Vec<DatasetReport> = Vec::new();
    let mut entries = Vec::new();
    for &cfr in &a.cfr {
        let cfg = EvalConfig {
            thresholds: a.thresholds.clone(),
            max_clicks: a.max_clicks,
            cfr,
            radius: a.radius,
        };
        let report = evaluate_dataset(make.as_ref(), &data, &cfg, cli.global.jobs as usize)?;
        if report.evaluated == 0 {
            bail!("{}: every instance failed", cfr.label());
        }
        entries.push(ReportEntry {
            model: model.clone(),
            mode: cfr.label(),
            dataset: dataset.clone(),
            noc90: report.noc_at(0.9).unwrap_or(f64::NAN),
            noc95: report.noc_at(0.95).unwrap_or(f64::NAN),
        });
        for (t, m) in report.thresholds.iter().zip(&report.mean_noc) {
            println!("{:<10} NoC@{:<4} {m:.2}", cfr.label(), (t * 100.0).round());
        }
        if report.failures > 0 {
            println!("{:<10} {} instances failed", cfr.label(), report.failures);
        }
        reports.push(report);
    }
    write_json(&a.out.join("eval.json"), &reports)?;
    let refs = a.reference_model.as_deref().map(References::builtin);
    if a.report {
        let rendered = render_report(&entries, refs.as_ref());
        fs::write(a.out.join("report.md"), &rendered.markdown)?;
        fs::write(a.out.join("report.csv"), &rendered.csv)?;
        print!("{}", rendered.markdown);
    }
    Manifest::new(
        cli,
        json!({ "segmenter": a.segmenter, "cfr": a.cfr, "thresholds": a.thresholds }),
    )
    .with_outputs(json!({ "entries": entries }))
    .write_in(&a.out)?;
    Ok(())
}

fn segment(cli: &Cli, a: &SegmentArgs) -> Result<()> {
    let image = read_image(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let (w, h) = image.dims();
    a.clicks.check_bounds(w, h)?;
    if a.clicks.is_empty() {
        bail!("--clicks is empty");
    }
    let mut seg = factory(&a.segmenter, Duration::from_secs(a.timeout_secs))?.create()?;
    let mut session = SegmentationSession::with_radius(image, a.radius);
    for &c in &a.clicks {
        session.interact(seg.as_mut(), c, &a.cfr)?;
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(parent)?;
    }
    let mask = session.binary_mask();
    write_mask(&mask, &a.out)?;
    if let Some(p) = &a.prob_map {
        fs::write(p, encode_cspm(session.current_mask())?)?;
    }
    Manifest::new(
        cli,
        json!({ "segmenter": a.segmenter, "cfr": a.cfr, "radius": a.radius }),
    )
    .with_outputs(json!({ "foreground_pixels": mask.count(), "step": session.step() }))
    .write_to(&sibling_manifest(&a.out))?;
    println!(
        "wrote {}x{} mask with {} foreground pixels to {}",
        w,
        h,
        mask.count(),
        a.out.display()
    );
    Ok(())
}

/// `out/m.png` -> `out/m.manifest.json`.
pub fn sibling_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn serve(g: &Global, a: &ServeArgs) -> Result<()> {
    let spec = match (&a.segmenter, &a.model) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => SegmenterSpec::Toy(Some(p.clone())),
        (None, None) => SegmenterSpec::Toy(None),
    };
    let make = factory(&spec, Duration::from_secs(a.timeout_secs))?;
    let config = ServiceConfig {
        max_dimension: a.max_dimension,
        idle_ttl: Duration::from_secs(a.ttl_secs),
        default_cfr: a.cfr,
        static_dir: a.static_dir.clone(),
        ..ServiceConfig::default()
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(g.jobs.max(2) as usize)
        .enable_all()
        .build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("binding {}:{}", a.host, a.port))?;
        println!("serving on http://{} with {spec}", listener.local_addr()?);
        clickseg_service::serve(listener, AppState::new(config, make)).await?;
        Ok(())
    })
}

fn rerun(a: &RerunArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let mut cli = manifest.invocation;
    if let Some(out) = &a.out {
        match &mut cli.command {
            Command::Synth(x) => x.out = out.clone(),
            Command::Augment(x) => x.out = out.clone(),
            Command::TrainToy(x) => x.out = out.clone(),
            Command::Eval(x) => x.out = out.clone(),
            Command::Segment(x) => x.out = out.clone(),
            Command::Serve(_) | Command::Rerun(_) => bail!("manifest does not describe a rerunnable command"),
        }
    }
    if matches!(cli.command, Command::Rerun(_) | Command::Serve(_)) {
        bail!("manifest does not describe a rerunnable command");
    }
    execute(&cli)
}
