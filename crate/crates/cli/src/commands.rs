use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use overtake_core::experiment::{emit_reports, model_hash, monte_carlo, report_from_logs, MetricsReport, RunOptions};
use overtake_core::gp::{FitConfig, GpMode};
use overtake_core::predict::PredictorKind;
use overtake_core::sim::{derive_seed, generate_dataset, random_race, run_race};
use overtake_core::track::{random_track, TrackSpec};
use overtake_core::{Dataset, Error, GpModel, TrackModel};

use crate::config::{AppConfig, Stream};
use crate::{DataCmd, Global, GpCmd, McCmd, RaceCmd, ReportCmd, TrackCmd};

fn setup(g: &Global) -> Result<AppConfig> {
    if g.workers > 0 {
        // Only fails if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(g.workers).build_global();
    }
    Ok(AppConfig::load(g.config.as_deref(), g.seed)?)
}

fn out_dir(g: &Global) -> Result<PathBuf> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_track(path: &Path) -> Result<TrackModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: TrackSpec = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(TrackModel::from_spec(&spec)?)
}

fn load_model(path: &Path) -> Result<GpModel> {
    GpModel::load(path).with_context(|| format!("loading GP model {}", path.display()))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Dataset::read_csv(BufReader::new(f))?)
}

pub fn track(g: &Global, cmd: TrackCmd) -> Result<()> {
    let cfg = setup(g)?;
    match cmd {
        TrackCmd::Gen => {
            let track = random_track(cfg.seed, &cfg.tracks)?;
            let path = out_dir(g)?.join("track.json");
            std::fs::write(&path, serde_json::to_string_pretty(&track.to_spec())? + "\n")?;
            log::info!("track of {:.2} m, width {} m -> {}", track.length(), track.width(), path.display());
        }
        TrackCmd::Show { track, spacing } => {
            if !(spacing > 0.0) {
                return Err(Error::Config("spacing must be positive".into()).into());
            }
            let model = read_track(&track)?;
            let sink: Box<dyn Write> = match &g.out {
                Some(_) => {
                    let stem = track.file_stem().and_then(|s| s.to_str()).unwrap_or("track");
                    Box::new(create(&out_dir(g)?.join(format!("{stem}.csv")))?)
                }
                None => Box::new(std::io::stdout().lock()),
            };
            let mut w = csv::Writer::from_writer(sink);
            w.write_record(["s", "x", "y", "heading", "curvature", "left_x", "left_y", "right_x", "right_y"])?;
            for (s, c, l, r) in model.sample_boundaries(spacing) {
                let p = model.centerline(s);
                w.write_record(
                    [s, c.x, c.y, p.heading, model.curvature(s), l.x, l.y, r.x, r.y].map(|v| format!("{v:.6}")),
                )?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn data(g: &Global, cmd: DataCmd) -> Result<()> {
    let mut cfg = setup(g)?;
    let DataCmd::Generate { rows } = cmd;
    if let Some(r) = rows {
        cfg.data.target_rows = r;
    }
    let (ds, logs) = generate_dataset(&cfg.data, cfg.stream(Stream::Data))?;
    let path = out_dir(g)?.join("dataset.csv");
    ds.write_csv(create(&path)?)?;
    log::info!("{} rows from {} rollouts -> {}", ds.len(), logs.len(), path.display());
    Ok(())
}

pub fn gp(g: &Global, cmd: GpCmd) -> Result<()> {
    let cfg = setup(g)?;
    match cmd {
        GpCmd::Fit { data, exact } => {
            let ds = read_dataset(&data)?;
            let fit = FitConfig { mode: if exact { GpMode::Exact } else { cfg.fit.mode }, ..cfg.fit.clone() };
            let fit = match fit.mode {
                GpMode::Inducing { count } if count > ds.len() => {
                    log::warn!("{count} inducing points for {} rows; using all rows", ds.len());
                    FitConfig { mode: GpMode::Inducing { count: ds.len() }, ..fit }
                }
                _ => fit,
            };
            let model = GpModel::fit(&ds, &fit)?;
            let path = out_dir(g)?.join("gp_model.json");
            model.save(&path)?;
            for (name, h) in model.target_names().iter().zip(&model.hyperparams().outputs) {
                log::info!(
                    "{name}: length {:.4}, noise {:.3e}, signal {:.4}",
                    h.length_scale,
                    h.noise_std,
                    h.signal_var
                );
            }
            log::info!("model -> {} ({})", path.display(), model_hash(&model)?);
        }
        GpCmd::Eval { model, data } => {
            let model = load_model(&model)?;
            let ds = read_dataset(&data)?;
            if ds.input_dim() != model.input_dim() || ds.output_dim() != model.output_dim() {
                return Err(Error::DimensionMismatch { expected: model.input_dim(), got: ds.input_dim() }.into());
            }
            let (mean, var) = model.posterior_batch(ds.inputs())?;
            let n = ds.len() as f64;
            let path = out_dir(g)?.join("gp_eval.csv");
            let mut w = csv::Writer::from_writer(create(&path)?);
            w.write_record(["output", "rows", "rmse", "mean_abs_error", "mean_std"])?;
            for (j, name) in model.target_names().iter().enumerate() {
                let err = ds.targets().column(j) - mean.column(j);
                let rmse = (err.norm_squared() / n).sqrt();
                let mae = err.abs().sum() / n;
                let sd = var.column(j).iter().map(|v| v.sqrt()).sum::<f64>() / n;
                println!("{name:>8}  rmse {rmse:.4e}  mae {mae:.4e}  mean std {sd:.4e}");
                w.write_record([name.clone(), ds.len().to_string(), format!("{rmse:e}"), format!("{mae:e}"), format!("{sd:e}")])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn race(g: &Global, cmd: RaceCmd) -> Result<()> {
    let cfg = setup(g)?;
    let RaceCmd::Run { track, predictor, q_y, model } = cmd;
    let predictor = PredictorKind::parse_label(predictor.as_deref().unwrap_or(&cfg.race.predictor))?;
    let q_y = q_y.unwrap_or(cfg.race.q_y);
    let seed = cfg.stream(Stream::Race);
    let track_seed = derive_seed(seed, 0);
    let track = match track {
        Some(p) => read_track(&p)?,
        None => random_track(track_seed, &cfg.tracks)?,
    };
    let gp = match (&predictor, model.or(cfg.experiment.gp_model.clone())) {
        (PredictorKind::Gp { .. }, Some(p)) => Some(Arc::new(load_model(&p)?)),
        (PredictorKind::Gp { .. }, None) => {
            return Err(Error::Config("GP predictor needs --model".into()).into());
        }
        _ => None,
    };
    let rc = random_race(Arc::new(track), track_seed, predictor, q_y, cfg.race.settings.clone(), seed, gp);
    let log = run_race(&rc)?;
    let path = out_dir(g)?.join("race.ndjson");
    log.write_ndjson(create(&path)?)?;
    let s = &log.summary;
    println!(
        "{} q_y={} outcome={} steps={} overtake={:?} crash={:?} off_track={:?}{}",
        predictor.label(),
        q_y,
        serde_json::to_value(s.outcome)?.as_str().unwrap_or_default(),
        s.steps,
        s.overtake_step,
        s.crash_step,
        s.off_track_step,
        if s.solver_abort { " (solver abort)" } else { "" }
    );
    log::info!("log -> {}", path.display());
    Ok(())
}

fn print_report(report: &MetricsReport) {
    println!("{:<10} {:>6} {:>6} {:>8} {:>8} {:>10} {:>9}", "predictor", "q_y", "races", "win", "crash", "wins/crash", "min a_x");
    for c in &report.cells {
        match &c.outcomes {
            Some(m) => println!(
                "{:<10} {:>6} {:>6} {:>8.3} {:>8.3} {:>10.3} {:>9.3}",
                c.label(),
                c.q_y,
                m.races,
                m.win_rate,
                m.crash_rate,
                m.wins_per_crash,
                m.mean_min_ax
            ),
            None => println!("{:<10} {:>6} {:>6}  all races failed", c.label(), c.q_y, 0),
        }
        if !c.failed.is_empty() {
            println!("  {} failed race(s) in {}", c.failed.len(), c.key());
        }
    }
}

pub fn mc(g: &Global, cmd: McCmd) -> Result<()> {
    let mut cfg = setup(g)?;
    let McCmd::Sweep { model, races } = cmd;
    if let Some(r) = races {
        cfg.experiment.races = r;
    }
    if model.is_some() {
        cfg.experiment.gp_model = model;
    }
    let exp = &cfg.experiment;
    let gp = match (&exp.gp_model, exp.needs_gp()) {
        (Some(p), true) => Some(Arc::new(load_model(p)?)),
        (None, true) => return Err(Error::Config("the sweep has GP cells; pass --model".into()).into()),
        _ => None,
    };
    let out = out_dir(g)?;
    let opts = RunOptions { workers: g.workers, log_dir: Some(out.join("logs")) };
    let report = monte_carlo(exp, gp, &opts)?;
    let files = emit_reports(&report, &out.join("report"))?;
    print_report(&report);
    log::info!("{} report files under {}", files.len(), out.join("report").display());
    Ok(())
}

pub fn report(g: &Global, cmd: ReportCmd) -> Result<()> {
    setup(g)?;
    let ReportCmd::Emit { logs, model } = cmd;
    let hash = model.as_deref().map(load_model).transpose()?.map(|m| model_hash(&m)).transpose()?;
    let report = report_from_logs(&logs, hash)?;
    let out = out_dir(g)?;
    let files = emit_reports(&report, &out)?;
    print_report(&report);
    log::info!("{} report files under {}", files.len(), out.display());
    Ok(())
}
