//! Command-line front end: corpus generation, corpus statistics,
//! receptive-field reports, training, evaluation, and the context-block
//! position sweep.
//!
//! Every subcommand takes the same four flags. Inputs and hyperparameters
//! come from a `key = value` config file plus `--set` overrides; any key
//! no command consumed is rejected by name, so typos fail loudly instead
//! of training the wrong model. All outputs are CSV or checkpoint files
//! with no timestamps, so identical inputs and seeds reproduce identical
//! bytes.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::mixsim::{
    build_corpus, corpus_manifest_path, load_corpus, synth_pool, two_band_pool, MixSpec,
    MixtureSet, SourcePool,
};
use crate::models::{
    load_checkpoint, receptive_field, save_checkpoint, ModelConfig, SeparationModel, TrainerMeta,
};
use crate::sampling::{length_stats, SamplerConfig, StartMode, FIXED_CROP_START};
use crate::trainer::{
    evaluate, sweep_gc_position, train, write_eval_csv, write_reports_csv, write_sweep_csv,
    EpochReport, TrainConfig, TrainSource,
};

#[derive(Parser)]
#[command(name = "sepkit", version, about = "Time-domain speech-separation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file, one `key = value` per line, `#` comments.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override or add a config key (repeatable), e.g. `--set epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory for generated files.
    #[arg(long, value_name = "DIR", default_value = "sepkit-out")]
    out: PathBuf,
    /// Shorthand for `--set seed=N`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-speaker mixture corpus (WAVs + manifest).
    Mix(CommonArgs),
    /// Report mixture-length statistics of a corpus.
    Stats(CommonArgs),
    /// Print the analytic receptive field of a model config.
    Rf(CommonArgs),
    /// Train a separation model; writes a checkpoint and epoch reports.
    Train(CommonArgs),
    /// Evaluate a checkpoint on a corpus at full length.
    Eval(CommonArgs),
    /// Train one model per GRU-block position and tabulate the results.
    Sweep(CommonArgs),
}

/// Parses argv and runs one subcommand; returns the process exit code
/// (0 success, 2 config error, 3 runtime/numeric error).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version land on stdout and exit 0; usage errors
            // match the config-error code.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Mix(a) => cmd_mix(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Rf(a) => cmd_rf(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn load_config(args: &CommonArgs) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::parse("")?,
    };
    cfg.apply_overrides(&args.set)?;
    if let Some(seed) = args.seed {
        cfg.apply_overrides(&[format!("seed={seed}")])?;
    }
    Ok(cfg)
}

fn range_pair(cfg: &Config, lo_key: &str, hi_key: &str) -> Result<Option<(f64, f64)>> {
    match (cfg.get::<f64>(lo_key)?, cfg.get::<f64>(hi_key)?) {
        (None, None) => Ok(None),
        (Some(lo), Some(hi)) => Ok(Some((lo, hi))),
        _ => Err(Error::Config(format!("`{lo_key}` and `{hi_key}` must be given together"))),
    }
}

fn mix_spec_from(cfg: &Config) -> Result<MixSpec> {
    let d = MixSpec::default();
    Ok(MixSpec {
        n_mixtures: cfg.get_or("n_mixtures", d.n_mixtures)?,
        ssr_range: (cfg.get_or("ssr_lo", d.ssr_range.0)?, cfg.get_or("ssr_hi", d.ssr_range.1)?),
        snr_range: range_pair(cfg, "snr_lo", "snr_hi")?,
        rt60_range: range_pair(cfg, "rt60_lo", "rt60_hi")?,
        peak_limit: cfg.get_or("peak_limit", d.peak_limit)?,
    })
}

fn pool_from(cfg: &Config, seed: u64) -> Result<SourcePool> {
    let kind: String = cfg.get_or("pool", "two_band".to_string())?;
    let sample_rate: u32 = cfg.get_or("sample_rate", 8000)?;
    let utts: usize = cfg.get_or("utts_per_speaker", 10)?;
    match kind.as_str() {
        "two_band" => {
            let dur: f64 = cfg.get_or("utt_secs", 1.0)?;
            two_band_pool(utts, dur, sample_rate, seed)
        }
        "multi" => {
            let n: usize = cfg.get_or("n_speakers", 8)?;
            let lo: f64 = cfg.get_or("utt_secs_lo", 2.0)?;
            let hi: f64 = cfg.get_or("utt_secs_hi", 8.0)?;
            synth_pool(n, utts, lo, hi, sample_rate, seed)
        }
        other => Err(Error::Config(format!("unknown pool `{other}` (two_band or multi)"))),
    }
}

fn sampler_from(cfg: &Config) -> Result<SamplerConfig> {
    let d = SamplerConfig::default();
    let start_mode = match cfg.get_or("start_mode", "random".to_string())?.as_str() {
        "random" => StartMode::Random,
        "fixed" => StartMode::Fixed {
            start_sample: cfg.get_or("start_sample", FIXED_CROP_START)?,
        },
        other => {
            return Err(Error::Config(format!("unknown start_mode `{other}` (random or fixed)")))
        }
    };
    Ok(SamplerConfig {
        t_lim_s: cfg.get("t_lim_s")?,
        start_mode,
        split_factor: cfg.get_or("split_factor", d.split_factor)?,
        dynamic_mixing: cfg.get_or("dynamic_mixing", d.dynamic_mixing)?,
        seed: d.seed,
        batch_size: d.batch_size,
    })
}

fn train_config_from(cfg: &Config) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        epochs: cfg.get_or("epochs", d.epochs)?,
        lr: cfg.get_or("lr", d.lr)?,
        batch_size: cfg.get_or("batch_size", d.batch_size)?,
        patience_epochs: cfg.get_or("patience_epochs", d.patience_epochs)?,
        lr_halving_factor: cfg.get_or("lr_halving_factor", d.lr_halving_factor)?,
        grad_clip: cfg.get_or("grad_clip", d.grad_clip)?,
        sampler: sampler_from(cfg)?,
        seed: cfg.get_or("seed", 0)?,
    })
}

fn cmd_mix(args: &CommonArgs) -> Result<String> {
    let cfg = load_config(args)?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let spec = mix_spec_from(&cfg)?;
    let pool = pool_from(&cfg, seed)?;
    cfg.reject_unknown()?;
    std::fs::create_dir_all(&args.out)?;
    let set = build_corpus(&pool, &spec, seed, &args.out)?;
    let mut out = String::new();
    writeln!(out, "mixtures = {}", set.len()).unwrap();
    writeln!(out, "sample_rate = {}", set.sample_rate).unwrap();
    writeln!(out, "manifest = {}", corpus_manifest_path(&args.out).display()).unwrap();
    Ok(out)
}

fn cmd_stats(args: &CommonArgs) -> Result<String> {
    let cfg = load_config(args)?;
    let corpus: PathBuf = cfg.require("corpus")?;
    cfg.reject_unknown()?;
    let set = load_corpus(&corpus)?;
    let st = length_stats(&set)?;
    std::fs::create_dir_all(&args.out)?;

    let summary = format!(
        "mean_s,std_s,min_s,q1_s,median_s,q3_s,max_s\n{},{},{},{},{},{},{}\n",
        st.mean_s, st.std_s, st.edges[0], st.edges[1], st.edges[2], st.edges[3], st.edges[4]
    );
    std::fs::write(args.out.join("length_summary.csv"), &summary)?;
    let mut density = String::from("length_s,density\n");
    for (x, y) in st.grid.iter().zip(&st.density) {
        writeln!(density, "{x},{y}").unwrap();
    }
    std::fs::write(args.out.join("length_density.csv"), density)?;

    let mut out = String::new();
    writeln!(out, "mixtures = {}", set.len()).unwrap();
    writeln!(out, "mean_s = {}", st.mean_s).unwrap();
    writeln!(out, "std_s = {}", st.std_s).unwrap();
    writeln!(out, "min_s = {}", st.edges[0]).unwrap();
    writeln!(out, "q1_s = {}", st.edges[1]).unwrap();
    writeln!(out, "median_s = {}", st.edges[2]).unwrap();
    writeln!(out, "q3_s = {}", st.edges[3]).unwrap();
    writeln!(out, "max_s = {}", st.edges[4]).unwrap();
    Ok(out)
}

fn cmd_rf(args: &CommonArgs) -> Result<String> {
    let cfg = load_config(args)?;
    let mc = ModelConfig::from_config(&cfg)?;
    cfg.reject_unknown()?;
    let rf = receptive_field(&mc);
    let mut out = String::new();
    writeln!(out, "frames = {}", rf.frames).unwrap();
    writeln!(out, "seconds = {}", rf.seconds).unwrap();
    writeln!(out, "global = {}", rf.global).unwrap();
    Ok(out)
}

/// Data plumbing shared by `train` and `sweep`: fixed corpora from disk,
/// or a dynamic-mixing pool when the sampler asks for it.
struct TrainData {
    train_set: Option<MixtureSet>,
    val_set: MixtureSet,
    pool_spec: Option<(SourcePool, MixSpec)>,
}

impl TrainData {
    fn source(&self) -> TrainSource<'_> {
        match (&self.train_set, &self.pool_spec) {
            (Some(set), _) => TrainSource::Fixed(set),
            (None, Some((pool, spec))) => TrainSource::Dynamic { pool, spec },
            (None, None) => unreachable!("load_train_data always fills one side"),
        }
    }
}

fn load_train_data(cfg: &Config, tc: &TrainConfig) -> Result<TrainData> {
    let val_corpus: PathBuf = cfg.require("val_corpus")?;
    let val_set = load_corpus(&val_corpus)?;
    if tc.sampler.dynamic_mixing {
        let pool = pool_from(cfg, tc.seed)?;
        let spec = mix_spec_from(cfg)?;
        Ok(TrainData { train_set: None, val_set, pool_spec: Some((pool, spec)) })
    } else {
        let train_corpus: PathBuf = cfg.require("train_corpus")?;
        Ok(TrainData {
            train_set: Some(load_corpus(&train_corpus)?),
            val_set,
            pool_spec: None,
        })
    }
}

fn epoch_lines(out: &mut String, reports: &[EpochReport]) {
    for r in reports {
        writeln!(
            out,
            "epoch {}: train_loss = {} val_delta_si_sdr_db = {} lr = {}",
            r.epoch, r.train_loss, r.val_delta_si_sdr_db, r.lr
        )
        .unwrap();
    }
}

fn best_report(reports: &[EpochReport]) -> Option<&EpochReport> {
    reports.iter().max_by(|a, b| {
        a.val_delta_si_sdr_db
            .partial_cmp(&b.val_delta_si_sdr_db)
            .expect("validation scores are finite")
    })
}

fn cmd_train(args: &CommonArgs) -> Result<String> {
    let cfg = load_config(args)?;
    let mc = ModelConfig::from_config(&cfg)?;
    let tc = train_config_from(&cfg)?;
    let data = load_train_data(&cfg, &tc)?;
    cfg.reject_unknown()?;

    let model = SeparationModel::new(mc, tc.seed)?;
    let (best, reports) = train(model, data.source(), &data.val_set, &tc)?;

    std::fs::create_dir_all(&args.out)?;
    write_reports_csv(args.out.join("epochs.csv"), &reports)?;
    let meta = best_report(&reports).map(|r| TrainerMeta {
        epoch: r.epoch,
        lr: r.lr,
        best_val_db: r.val_delta_si_sdr_db,
    });
    let ckpt_path = args.out.join("model.ckpt");
    save_checkpoint(&ckpt_path, &best, meta.as_ref())?;

    let mut out = String::new();
    epoch_lines(&mut out, &reports);
    if let Some(r) = best_report(&reports) {
        writeln!(out, "best_val_delta_si_sdr_db = {}", r.val_delta_si_sdr_db).unwrap();
    }
    writeln!(out, "checkpoint = {}", ckpt_path.display()).unwrap();
    Ok(out)
}

fn cmd_eval(args: &CommonArgs) -> Result<String> {
    let cfg = load_config(args)?;
    let checkpoint: PathBuf = cfg.require("checkpoint")?;
    let corpus: PathBuf = cfg.require("corpus")?;
    cfg.reject_unknown()?;
    let ck = load_checkpoint(&checkpoint)?;
    let set = load_corpus(&corpus)?;
    let eval = evaluate(&ck.model, &set)?;
    std::fs::create_dir_all(&args.out)?;
    write_eval_csv(args.out.join("per_mixture.csv"), &eval)?;

    let mut out = String::new();
    writeln!(out, "mixtures = {}", eval.rows.len()).unwrap();
    writeln!(out, "mean_delta_si_sdr_db = {}", eval.mean_delta_db).unwrap();
    if let Some(q) = eval.quartile_delta_db {
        for (k, v) in q.iter().enumerate() {
            writeln!(out, "quartile_{}_delta_si_sdr_db = {}", k + 1, v).unwrap();
        }
    }
    Ok(out)
}

fn positions_from(cfg: &Config) -> Result<Vec<usize>> {
    let raw: String = cfg.get_or("positions", "0".to_string())?;
    raw.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("positions entry {p:?}: {e}")))
        })
        .collect()
}

fn cmd_sweep(args: &CommonArgs) -> Result<String> {
    let cfg = load_config(args)?;
    let mc = ModelConfig::from_config(&cfg)?;
    let tc = train_config_from(&cfg)?;
    let positions = positions_from(&cfg)?;
    let data = load_train_data(&cfg, &tc)?;
    cfg.reject_unknown()?;

    let rows = sweep_gc_position(&mc, &positions, data.source(), &data.val_set, &tc)?;
    std::fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("sweep.csv");
    write_sweep_csv(&csv_path, &rows)?;

    let mut out = String::new();
    for r in &rows {
        writeln!(
            out,
            "position {}: delta_si_sdr_db = {} params = {} rf_seconds = {}",
            r.position, r.delta_si_sdr_db, r.params, r.rf_seconds
        )
        .unwrap();
    }
    writeln!(out, "table = {}", csv_path.display()).unwrap();
    Ok(out)
}
