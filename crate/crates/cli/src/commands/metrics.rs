use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use toml::Table;

use super::{check_exists, create_out_dir, load_channels, need, write_text, SceneDir};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use mcsep::metrics::report;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsOpts {
    /// Estimate WAVs; channels of all files are taken in order.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<PathBuf>>,
    /// Scene directory holding the reference images and mixture.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

pub fn run(cli: &MetricsOpts, file: Option<&Table>) -> CliResult<()> {
    let o: MetricsOpts = resolve("metrics", &MetricsOpts::default(), file, cli)?;
    let estimate_paths = need(o.estimates.clone(), "estimates")?;
    let truth_dir = need(o.truth.clone(), "truth")?;
    let out = need(o.out.clone(), "out")?;
    for p in estimate_paths.iter().chain([&truth_dir]) {
        check_exists(p)?;
    }
    create_out_dir(&out)?;
    let mut manifest = Manifest::new("metrics", None, &o, &out)?;
    let est = load_channels(&estimate_paths, &mut manifest)?;
    let truth = SceneDir::load(&truth_dir, &mut manifest)?;
    if est.sample_rate != truth.sample_rate {
        return Err(CliError::Validation(
            "estimates and truth differ in sample rate".into(),
        ));
    }
    let rep = report(&est.channels, &truth.reference_images(), &truth.mixtures[0])?;
    log::info!(
        "mean SI-SDR {:.2} dB, improvement {:.2} dB",
        rep.mean_si_sdr(),
        rep.mean_si_sdr_delta()
    );
    write_text(&mut manifest, "metrics.csv", &rep.to_csv())?;
    manifest.write()?;
    Ok(())
}
