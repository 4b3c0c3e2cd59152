use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use toml::Table;

use super::{
    check_exists, create_out_dir, load_channels, load_wav, need, stft_config, write_text, SceneDir,
};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use mcsep::losses::{combined_loss, loss_surface_from, SurfaceOptions, LOG_FLOOR};
use mcsep::signal::stft_channels;
use mcsep::{stft, FcpConfig, LossWeights, McVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Reference microphone compared against the unfiltered sum.
    #[value(alias = "ref-unfiltered")]
    #[serde(alias = "ref-unfiltered")]
    Eq4,
    /// Every microphone compared against filtered estimates.
    #[value(alias = "all-filtered")]
    #[serde(alias = "all-filtered")]
    Eq9,
}

impl From<Variant> for McVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Eq4 => McVariant::RefUnfiltered,
            Variant::Eq9 => McVariant::AllFiltered,
        }
    }
}

/// FCP taps for a variant, with explicit past/future taking precedence.
fn fcp_for(variant: McVariant, past: Option<usize>, future: Option<usize>) -> FcpConfig {
    let d = variant.default_fcp();
    FcpConfig {
        past: past.unwrap_or(d.past),
        future: future.unwrap_or(d.future),
        ..d
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceOpts {
    /// Scene directory of a two-speaker simulation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    /// Grid points per axis.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    /// Loss form: eq4 (reference unfiltered) or eq9 (all filtered).
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    /// Past FCP taps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub past: Option<usize>,
    /// Future FCP taps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub future: Option<usize>,
    /// Reuse the filters fit at the oracle corner for every grid point.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze_filters: Option<bool>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub fn run_surface(cli: &SurfaceOpts, file: Option<&Table>) -> CliResult<()> {
    let defaults = SurfaceOpts {
        grid: Some(21),
        variant: Some(Variant::Eq4),
        freeze_filters: Some(false),
        ..SurfaceOpts::default()
    };
    let o: SurfaceOpts = resolve("loss-surface", &defaults, file, cli)?;
    let scene_dir = need(o.scene.clone(), "scene")?;
    let out = need(o.out.clone(), "out")?;
    let variant: McVariant = need(o.variant, "variant")?.into();
    let opts = SurfaceOptions {
        grid_n: need(o.grid, "grid")?,
        fcp: fcp_for(variant, o.past, o.future),
        freeze_filters: need(o.freeze_filters, "freeze_filters")?,
        ..SurfaceOptions::new(variant, 2)
    };
    opts.fcp.validate()?;
    check_exists(&scene_dir)?;
    create_out_dir(&out)?;
    let mut manifest = Manifest::new("loss-surface", None, &o, &out)?;

    let scene = SceneDir::load(&scene_dir, &mut manifest)?;
    if scene.num_speakers() != 2 {
        return Err(CliError::Validation(format!(
            "the loss surface needs two speakers, scene has {}",
            scene.num_speakers()
        )));
    }
    let cfg = stft_config(scene.sample_rate);
    let mixtures = stft_channels(&scene.mixtures, &cfg)?;
    let x1 = stft(&scene.images[0][0], &cfg)?;
    let x2 = stft(&scene.images[1][0], &cfg)?;
    let noise = stft(&scene.noise[0], &cfg)?;
    let surface = loss_surface_from(&mixtures, [&x1, &x2], &noise, &opts)?;
    let best = surface.smallest(2);
    log::info!(
        "two smallest grid points (mu,nu): {:?}",
        best.iter()
            .map(|&(i, j)| (surface.grid[i], surface.grid[j]))
            .collect::<Vec<_>>()
    );
    write_text(&mut manifest, "surface.csv", &surface.to_csv())?;
    manifest.write()?;
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOpts {
    /// Multichannel mixture WAV, reference microphone first.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture: Option<PathBuf>,
    /// Estimate WAVs; channels of all files are taken in order.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<PathBuf>>,
    /// Loss form: eq4 (reference unfiltered) or eq9 (all filtered).
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    /// Past FCP taps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub past: Option<usize>,
    /// Future FCP taps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub future: Option<usize>,
    /// Weight of the magnitude-scattering term.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Per-microphone weights, comma separated.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub fn run_eval(cli: &EvalOpts, file: Option<&Table>) -> CliResult<()> {
    let defaults = EvalOpts {
        variant: Some(Variant::Eq4),
        gamma: Some(LossWeights::default().gamma),
        ..EvalOpts::default()
    };
    let o: EvalOpts = resolve("loss-eval", &defaults, file, cli)?;
    let mixture_path = need(o.mixture.clone(), "mixture")?;
    let estimate_paths = need(o.estimates.clone(), "estimates")?;
    let out = need(o.out.clone(), "out")?;
    let variant_opt = need(o.variant, "variant")?;
    let variant: McVariant = variant_opt.into();
    let fcp = fcp_for(variant, o.past, o.future);
    fcp.validate()?;
    let weights = LossWeights {
        alpha: o.alpha.clone().unwrap_or_default(),
        gamma: need(o.gamma, "gamma")?,
    };
    check_exists(&mixture_path)?;
    for p in &estimate_paths {
        check_exists(p)?;
    }
    create_out_dir(&out)?;
    let mut manifest = Manifest::new("loss-eval", None, &o, &out)?;

    let mix = load_wav(&mixture_path, &mut manifest)?;
    let est = load_channels(&estimate_paths, &mut manifest)?;
    if est.sample_rate != mix.sample_rate || est.channels[0].len() != mix.channels[0].len() {
        return Err(CliError::Validation(
            "estimates and mixture differ in sample rate or length".into(),
        ));
    }
    weights.validate(mix.channels.len())?;
    let cfg = stft_config(mix.sample_rate);
    let mixtures = stft_channels(&mix.channels, &cfg)?;
    let zhats = stft_channels(&est.channels, &cfg)?;
    let b = combined_loss(&mixtures, &zhats, variant, &fcp, &weights, LOG_FLOOR)?;
    let name = variant.name();
    log::info!(
        "{name}: mc {:.6e}, isms {:.6e}, combined {:.6e}",
        b.mc_total,
        b.isms_total,
        b.combined
    );

    let mut csv = String::from("variant,term,mic,value\n");
    for (p, v) in b.mc_per_mic.iter().enumerate() {
        csv.push_str(&format!("{name},mc,{p},{v:.12e}\n"));
    }
    for (p, v) in b.isms_per_mic.iter().enumerate() {
        csv.push_str(&format!("{name},isms,{p},{v:.12e}\n"));
    }
    csv.push_str(&format!("{name},mc,all,{:.12e}\n", b.mc_total));
    csv.push_str(&format!("{name},isms,all,{:.12e}\n", b.isms_total));
    csv.push_str(&format!("{name},combined,all,{:.12e}\n", b.combined));
    write_text(&mut manifest, "loss.csv", &csv)?;
    manifest.write()?;
    Ok(())
}
