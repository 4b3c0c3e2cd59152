use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use toml::Table;

use super::{
    check_exists, create_out_dir, load_wav, need, stft_config, write_audio, write_text, SceneDir,
};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use mcsep::align::CorrAlignConfig;
use mcsep::metrics::report;
use mcsep::signal::{istft_channels, stft_channels};
use mcsep::{
    corr_freq_align, oracle_freq_align, solve, AlsConfig, FcpConfig, FrequencyPermutation, Init,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    None,
    Oracle,
    Corr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Random,
    Oracle,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparateOpts {
    /// Multichannel mixture WAV, reference microphone first.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<PathBuf>,
    /// Scene directory with speaker images, for oracle steps and metrics.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Number of speakers to recover.
    #[arg(long, visible_alias = "C")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speakers: Option<usize>,
    /// Frequency permutation repair after solving.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub align: Option<AlignMode>,
    /// Start from a random mixture split or from the true images.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<InitMode>,
    /// Iteration cap.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    /// Stop when the objective drops by less than this fraction of the mixture energy.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_rel: Option<f64>,
    /// Past FCP taps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub past: Option<usize>,
    /// Future FCP taps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub future: Option<usize>,
    /// Filter ridge, relative to per-bin mixture energy.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fcp_ridge: Option<f64>,
    /// Ridge on the source estimates.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_ridge: Option<f64>,
    /// Iterations with per-speaker filter fits before joint updates.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_iters: Option<usize>,
    /// Seed for the random initialization.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Refinement sweeps of correlation alignment.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sweeps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl SeparateOpts {
    fn defaults() -> Self {
        let als = AlsConfig::default();
        Self {
            mixture: None,
            truth: None,
            speakers: Some(2),
            align: Some(AlignMode::None),
            init: Some(InitMode::Random),
            max_iters: Some(als.max_iters),
            tol_rel: Some(als.tol_rel),
            past: Some(als.fcp.past),
            future: Some(als.fcp.future),
            fcp_ridge: Some(als.fcp.ridge),
            source_ridge: Some(als.source_ridge),
            warmup_iters: Some(als.warmup_iters),
            seed: Some(als.seed),
            max_sweeps: Some(CorrAlignConfig::default().max_sweeps),
            out: None,
        }
    }
}

pub fn run(cli: &SeparateOpts, file: Option<&Table>) -> CliResult<()> {
    let o: SeparateOpts = resolve("separate", &SeparateOpts::defaults(), file, cli)?;
    let mixture_path = need(o.mixture.clone(), "mixture")?;
    let out = need(o.out.clone(), "out")?;
    let speakers = need(o.speakers, "speakers")?;
    let align = need(o.align, "align")?;
    let init = need(o.init, "init")?;
    let seed = need(o.seed, "seed")?;
    if o.truth.is_none() && (align == AlignMode::Oracle || init == InitMode::Oracle) {
        return Err(CliError::Validation(
            "oracle alignment and oracle initialization need --truth".into(),
        ));
    }
    check_exists(&mixture_path)?;
    if let Some(t) = &o.truth {
        check_exists(t)?;
    }
    let fcp = FcpConfig {
        past: need(o.past, "past")?,
        future: need(o.future, "future")?,
        ridge: need(o.fcp_ridge, "fcp_ridge")?,
        ..FcpConfig::default()
    };
    let mut als = AlsConfig {
        max_iters: need(o.max_iters, "max_iters")?,
        tol_rel: need(o.tol_rel, "tol_rel")?,
        fcp,
        init: Init::MixtureSplitRandom,
        source_ridge: need(o.source_ridge, "source_ridge")?,
        seed,
        warmup_iters: need(o.warmup_iters, "warmup_iters")?,
    };
    als.validate()?;
    create_out_dir(&out)?;
    let mut manifest = Manifest::new("separate", Some(seed), &o, &out)?;

    let mix = load_wav(&mixture_path, &mut manifest)?;
    let len = mix.channels[0].len();
    let stft = stft_config(mix.sample_rate);
    let truth = o
        .truth
        .as_deref()
        .map(|t| SceneDir::load(t, &mut manifest))
        .transpose()?;
    let refs_time = match &truth {
        Some(t) => {
            if t.num_speakers() != speakers
                || t.sample_rate != mix.sample_rate
                || t.mixtures[0].len() != len
            {
                return Err(CliError::Validation(format!(
                    "truth has {} speakers at {} Hz, {} samples; separating {speakers} at {} Hz, {len} samples",
                    t.num_speakers(),
                    t.sample_rate,
                    t.mixtures[0].len(),
                    mix.sample_rate
                )));
            }
            Some(t.reference_images())
        }
        None => None,
    };
    let refs = refs_time
        .as_ref()
        .map(|r| stft_channels(r, &stft))
        .transpose()?;
    if init == InitMode::Oracle {
        als.init = Init::Oracle(refs.clone().expect("checked above"));
    }

    let mixtures = stft_channels(&mix.channels, &stft)?;
    let sol = solve(&mixtures, speakers, &als)?;
    log::info!(
        "ALS stopped after {} iterations (converged: {}), objective {:.6e}",
        sol.trace.iterations,
        sol.trace.converged,
        sol.trace.objective.last().copied().unwrap_or(f64::NAN)
    );
    let (estimates, perm) = match align {
        AlignMode::None => {
            let bins = mixtures[0].num_bins();
            (
                sol.estimate.sources,
                FrequencyPermutation::identity(bins, speakers),
            )
        }
        AlignMode::Oracle => {
            oracle_freq_align(&sol.estimate.sources, refs.as_ref().expect("checked above"))?
        }
        AlignMode::Corr => {
            let cfg = CorrAlignConfig {
                max_sweeps: need(o.max_sweeps, "max_sweeps")?,
                ..CorrAlignConfig::default()
            };
            let a = corr_freq_align(&sol.estimate.sources, &cfg)?;
            log::info!(
                "correlation alignment: {:?} after {} sweeps",
                a.status,
                a.sweeps
            );
            (a.aligned, a.perm)
        }
    };
    let est_time = istft_channels(&estimates, &stft, len)?;
    for (c, e) in est_time.iter().enumerate() {
        write_audio(
            &mut manifest,
            &format!("estimate_s{c}.wav"),
            std::slice::from_ref(e),
            mix.sample_rate,
        )?;
    }
    write_text(&mut manifest, "trace.csv", &sol.trace.to_csv())?;
    write_text(&mut manifest, "permutation.csv", &perm.to_csv())?;
    match &refs_time {
        Some(r) => {
            let rep = report(&est_time, r, &mix.channels[0])?;
            log::info!("mean SI-SDR improvement {:.2} dB", rep.mean_si_sdr_delta());
            write_text(&mut manifest, "metrics.csv", &rep.to_csv())?;
        }
        None => log::info!("no truth given; metrics omitted"),
    }
    manifest.write()?;
    Ok(())
}
