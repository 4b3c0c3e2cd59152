use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use toml::Table;

use super::{
    check_exists, create_out_dir, load_channels, need, stft_config, write_audio, write_text,
    SceneDir,
};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use mcsep::align::CorrAlignConfig;
use mcsep::signal::{istft_channels, stft_channels};
use mcsep::{corr_freq_align, oracle_freq_align};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMethod {
    Corr,
    Oracle,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignOpts {
    /// Estimate WAVs; channels of all files are taken in order.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<PathBuf>>,
    /// Oracle matching against references or blind correlation.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<AlignMethod>,
    /// Scene directory, required by oracle alignment.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Refinement sweeps of correlation alignment.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sweeps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub fn run(cli: &AlignOpts, file: Option<&Table>) -> CliResult<()> {
    let defaults = AlignOpts {
        method: Some(AlignMethod::Corr),
        max_sweeps: Some(CorrAlignConfig::default().max_sweeps),
        ..AlignOpts::default()
    };
    let o: AlignOpts = resolve("align", &defaults, file, cli)?;
    let estimate_paths = need(o.estimates.clone(), "estimates")?;
    let out = need(o.out.clone(), "out")?;
    let method = need(o.method, "method")?;
    if method == AlignMethod::Oracle && o.truth.is_none() {
        return Err(CliError::Validation(
            "oracle alignment needs --truth".into(),
        ));
    }
    for p in estimate_paths.iter().chain(o.truth.as_ref()) {
        check_exists(p)?;
    }
    create_out_dir(&out)?;
    let mut manifest = Manifest::new("align", None, &o, &out)?;
    let est = load_channels(&estimate_paths, &mut manifest)?;
    let len = est.channels[0].len();
    let cfg = stft_config(est.sample_rate);
    let specs = stft_channels(&est.channels, &cfg)?;
    let (aligned, perm) = match method {
        AlignMethod::Corr => {
            let a = corr_freq_align(
                &specs,
                &CorrAlignConfig {
                    max_sweeps: need(o.max_sweeps, "max_sweeps")?,
                    ..CorrAlignConfig::default()
                },
            )?;
            log::info!("{:?} after {} sweeps", a.status, a.sweeps);
            (a.aligned, a.perm)
        }
        AlignMethod::Oracle => {
            let truth = SceneDir::load(o.truth.as_deref().expect("checked above"), &mut manifest)?;
            if truth.sample_rate != est.sample_rate || truth.mixtures[0].len() != len {
                return Err(CliError::Validation(
                    "estimates and truth differ in sample rate or length".into(),
                ));
            }
            let refs = stft_channels(&truth.reference_images(), &cfg)?;
            oracle_freq_align(&specs, &refs)?
        }
    };
    log::info!(
        "{} of {} bins relabeled",
        perm.changed_bins(),
        perm.num_bins()
    );
    let time = istft_channels(&aligned, &cfg, len)?;
    for (c, x) in time.iter().enumerate() {
        write_audio(
            &mut manifest,
            &format!("aligned_s{c}.wav"),
            std::slice::from_ref(x),
            est.sample_rate,
        )?;
    }
    write_text(&mut manifest, "permutation.csv", &perm.to_csv())?;
    manifest.write()?;
    Ok(())
}
