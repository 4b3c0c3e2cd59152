use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use toml::Table;

use super::{create_out_dir, image_name, need, write_audio};
use crate::config::resolve;
use crate::error::CliResult;
use crate::manifest::Manifest;
use mcsep::{random_scene, render, RirModel, SceneParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RirKind {
    Exponential,
    HopAligned,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOpts {
    /// Number of speakers.
    #[arg(long, visible_alias = "C")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speakers: Option<usize>,
    /// Number of microphones.
    #[arg(long, visible_alias = "P")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mics: Option<usize>,
    /// Dry source length in samples.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Sample rate in Hz.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
    /// Room impulse response length in taps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rir_len: Option<usize>,
    /// Time for the reverberant tail to decay by 20 dB.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_ms: Option<f64>,
    /// Largest direct-path delay in samples.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_delay: Option<usize>,
    /// Tail amplitude relative to the unit direct path.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reverb_gain: Option<f64>,
    /// Add white noise at this SNR (dB) relative to the summed images.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Room impulse response family.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rir_model: Option<RirKind>,
    /// Tap spacing of hop-aligned RIRs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hop: Option<usize>,
    /// Seed for sources, rooms and noise.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl SimulateOpts {
    fn defaults() -> Self {
        let p = SceneParams::default();
        Self {
            speakers: Some(p.speakers),
            mics: Some(p.mics),
            samples: Some(p.num_samples),
            sample_rate: Some(p.sample_rate),
            rir_len: Some(p.rir_len),
            decay_ms: Some(p.decay_ms),
            max_delay: Some(p.max_delay),
            reverb_gain: Some(p.reverb_gain),
            snr_db: None,
            rir_model: Some(RirKind::Exponential),
            hop: Some(64),
            seed: Some(p.seed),
            out: None,
        }
    }
}

pub fn run(cli: &SimulateOpts, file: Option<&Table>) -> CliResult<()> {
    let o: SimulateOpts = resolve("simulate", &SimulateOpts::defaults(), file, cli)?;
    let out = need(o.out.clone(), "out")?;
    let params = SceneParams {
        speakers: need(o.speakers, "speakers")?,
        mics: need(o.mics, "mics")?,
        num_samples: need(o.samples, "samples")?,
        sample_rate: need(o.sample_rate, "sample_rate")?,
        rir_len: need(o.rir_len, "rir_len")?,
        decay_ms: need(o.decay_ms, "decay_ms")?,
        max_delay: need(o.max_delay, "max_delay")?,
        reverb_gain: need(o.reverb_gain, "reverb_gain")?,
        noise_snr_db: o.snr_db,
        rir_model: match need(o.rir_model, "rir_model")? {
            RirKind::Exponential => RirModel::Exponential,
            RirKind::HopAligned => RirModel::HopAligned {
                hop: need(o.hop, "hop")?,
            },
        },
        seed: need(o.seed, "seed")?,
    };
    params.validate()?;
    create_out_dir(&out)?;
    let mut manifest = Manifest::new("simulate", Some(params.seed), &o, &out)?;

    let truth = render(&random_scene(&params)?)?;
    let sr = truth.sample_rate;
    write_audio(&mut manifest, "mixture.wav", &truth.mixtures, sr)?;
    for (c, per_mic) in truth.images.iter().enumerate() {
        for (p, img) in per_mic.iter().enumerate() {
            write_audio(
                &mut manifest,
                &image_name(c, p),
                std::slice::from_ref(img),
                sr,
            )?;
        }
    }
    if params.noise_snr_db.is_some() {
        write_audio(&mut manifest, "noise.wav", &truth.noise, sr)?;
    }
    let path = manifest.write()?;
    log::info!("scene written; manifest {}", path.display());
    Ok(())
}
