use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use toml::Table;

use super::{check_exists, create_out_dir, load_channels, load_wav, need, stft_config, write_text};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use mcsep::wiener::{iras_loss, taps_from_stft_filter};
use mcsep::WienerConfig;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WienerOpts {
    /// Multichannel mixture WAV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<PathBuf>,
    /// Estimate WAVs; channels of all files are taken in order.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<PathBuf>>,
    /// Filter length in samples.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taps: Option<usize>,
    /// Derive the filter length from a K-tap sub-band filter; overrides `taps`.
    #[arg(long = "taps-from-K", visible_alias = "taps-from-k")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taps_from_k: Option<usize>,
    /// Taps that look ahead of the current sample.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub future_taps: Option<usize>,
    /// Diagonal loading relative to the mean Gram diagonal.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    /// Per-microphone weights, comma separated.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub fn run(cli: &WienerOpts, file: Option<&Table>) -> CliResult<()> {
    let d = WienerConfig::default();
    let defaults = WienerOpts {
        taps: Some(d.taps),
        future_taps: Some(d.future_taps),
        ridge: Some(d.ridge),
        ..WienerOpts::default()
    };
    let mut o: WienerOpts = resolve("wiener", &defaults, file, cli)?;
    let mixture_path = need(o.mixture.clone(), "mixture")?;
    let estimate_paths = need(o.estimates.clone(), "estimates")?;
    let out = need(o.out.clone(), "out")?;
    check_exists(&mixture_path)?;
    for p in &estimate_paths {
        check_exists(p)?;
    }
    create_out_dir(&out)?;

    // The derived length needs the sample rate, so read the mixture first.
    let mix = mcsep::read_wav(&mixture_path)?;
    if let Some(k) = o.taps_from_k {
        let stft = stft_config(mix.sample_rate);
        let m = taps_from_stft_filter(k, stft.hop_ms(), stft.win_ms(), mix.sample_rate)?;
        log::info!("K = {k} sub-band taps span M = {m} samples");
        o.taps = Some(m);
    }
    let cfg = WienerConfig {
        taps: need(o.taps, "taps")?,
        future_taps: need(o.future_taps, "future_taps")?,
        ridge: need(o.ridge, "ridge")?,
    };
    cfg.validate()?;
    let mut manifest = Manifest::new("wiener", None, &o, &out)?;
    let mix = load_wav(&mixture_path, &mut manifest)?;
    let est = load_channels(&estimate_paths, &mut manifest)?;
    if est.sample_rate != mix.sample_rate {
        return Err(CliError::Validation(
            "estimates and mixture differ in sample rate".into(),
        ));
    }
    let alpha = o.alpha.clone().unwrap_or_default();
    let b = iras_loss(&mix.channels, &est.channels, &cfg, &alpha)?;
    log::info!("iRAS loss {:.6e} with M = {}", b.total, cfg.taps);

    let mut csv = String::from("mic,taps,value\n");
    for (p, v) in b.per_mic.iter().enumerate() {
        csv.push_str(&format!("{p},{},{v:.12e}\n", cfg.taps));
    }
    csv.push_str(&format!("all,{},{:.12e}\n", cfg.taps, b.total));
    write_text(&mut manifest, "iras.csv", &csv)?;
    manifest.write()?;
    Ok(())
}
