//! One module per subcommand plus the file plumbing they share.
//!
//! A scene directory, as written by `simulate`, holds `mixture.wav` (one
//! channel per microphone), `image_s{c}_m{p}.wav` per speaker and microphone,
//! and `noise.wav` when noise was added.

pub mod align;
pub mod losses;
pub mod metrics;
pub mod separate;
pub mod simulate;
pub mod wiener;

use std::path::{Path, PathBuf};

use mcsep::{read_wav, write_wav, StftConfig, WavEncoding};

use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

pub fn need<T>(value: Option<T>, name: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Validation(format!("missing required option `{name}`")))
}

pub fn check_exists(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{} does not exist", path.display())))
    }
}

pub fn create_out_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

pub fn stft_config(sample_rate: u32) -> StftConfig {
    StftConfig {
        sample_rate,
        ..StftConfig::default()
    }
}

pub struct Loaded {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

pub fn load_wav(path: &Path, manifest: &mut Manifest) -> CliResult<Loaded> {
    check_exists(path)?;
    let audio = read_wav(path)?;
    if audio.is_empty() {
        return Err(CliError::Validation(format!(
            "{} has no samples",
            path.display()
        )));
    }
    manifest.input(path);
    Ok(Loaded {
        sample_rate: audio.sample_rate,
        channels: audio.channels,
    })
}

/// Channels of several WAV files, concatenated in order. All files must
/// share the sample rate and length.
pub fn load_channels(paths: &[PathBuf], manifest: &mut Manifest) -> CliResult<Loaded> {
    if paths.is_empty() {
        return Err(CliError::Validation("no estimate files given".into()));
    }
    let mut out: Option<Loaded> = None;
    for p in paths {
        let l = load_wav(p, manifest)?;
        match &mut out {
            None => out = Some(l),
            Some(acc) => {
                if acc.sample_rate != l.sample_rate || acc.channels[0].len() != l.channels[0].len()
                {
                    return Err(CliError::Validation(format!(
                        "{} differs in sample rate or length from the first file",
                        p.display()
                    )));
                }
                acc.channels.extend(l.channels);
            }
        }
    }
    Ok(out.expect("at least one path"))
}

pub fn write_audio(
    manifest: &mut Manifest,
    name: &str,
    channels: &[Vec<f64>],
    sample_rate: u32,
) -> CliResult<()> {
    let path = manifest.output(name);
    write_wav(&path, channels, sample_rate, WavEncoding::Float32)?;
    Ok(())
}

pub fn write_text(manifest: &mut Manifest, name: &str, text: &str) -> CliResult<()> {
    let path = manifest.output(name);
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn image_name(speaker: usize, mic: usize) -> String {
    format!("image_s{speaker}_m{mic}.wav")
}

/// Ground truth read back from a scene directory.
pub struct SceneDir {
    pub sample_rate: u32,
    pub mixtures: Vec<Vec<f64>>,
    /// `images[c][p]`.
    pub images: Vec<Vec<Vec<f64>>>,
    /// Per-microphone noise, zeros for noiseless scenes.
    pub noise: Vec<Vec<f64>>,
}

impl SceneDir {
    pub fn load(dir: &Path, manifest: &mut Manifest) -> CliResult<Self> {
        check_exists(dir)?;
        let mix = load_wav(&dir.join("mixture.wav"), manifest)?;
        let (sr, len, mics) = (mix.sample_rate, mix.channels[0].len(), mix.channels.len());
        let mut images = Vec::new();
        while dir.join(image_name(images.len(), 0)).exists() {
            let c = images.len();
            let per_mic = (0..mics)
                .map(|p| {
                    let l = load_wav(&dir.join(image_name(c, p)), manifest)?;
                    if l.sample_rate != sr || l.channels.len() != 1 || l.channels[0].len() != len {
                        return Err(CliError::Validation(format!(
                            "{} does not match the mixture",
                            image_name(c, p)
                        )));
                    }
                    Ok(l.channels.into_iter().next().expect("one channel"))
                })
                .collect::<CliResult<Vec<_>>>()?;
            images.push(per_mic);
        }
        if images.is_empty() {
            return Err(CliError::Validation(format!(
                "{} holds no speaker images",
                dir.display()
            )));
        }
        let noise_path = dir.join("noise.wav");
        let noise = if noise_path.exists() {
            let l = load_wav(&noise_path, manifest)?;
            if l.channels.len() != mics || l.channels[0].len() != len {
                return Err(CliError::Validation(
                    "noise.wav does not match the mixture".into(),
                ));
            }
            l.channels
        } else {
            vec![vec![0.0; len]; mics]
        };
        Ok(Self {
            sample_rate: sr,
            mixtures: mix.channels,
            images,
            noise,
        })
    }

    pub fn num_speakers(&self) -> usize {
        self.images.len()
    }

    /// Reference-microphone image of every speaker.
    pub fn reference_images(&self) -> Vec<Vec<f64>> {
        self.images
            .iter()
            .map(|per_mic| per_mic[0].clone())
            .collect()
    }
}
