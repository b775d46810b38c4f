use std::path::Path;

use umri::physics::{make_equispaced_mask, AcsSpec, SamplingMask};

use crate::config::format_acs;
use crate::error::{CliError, Result};
use crate::output::write_atomic;

/// Text form: a `#` header line, then one `0`/`1` character per column.
pub fn mask_file_text(mask: &SamplingMask) -> String {
    let bits: String = mask.columns().iter().map(|&s| if s { '1' } else { '0' }).collect();
    format!(
        "# width={} acceleration={} acs={}\n{bits}\n",
        mask.width(),
        mask.acceleration(),
        format_acs(&mask.acs_spec())
    )
}

pub fn parse_mask_file(text: &str) -> Result<Vec<bool>> {
    let line = text
        .lines()
        .find(|l| !l.starts_with('#') && !l.trim().is_empty())
        .ok_or_else(|| CliError::Runtime("mask file has no column line".into()))?;
    line.trim()
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(CliError::Runtime(format!("unexpected mask character '{other}'"))),
        })
        .collect()
}

pub fn column_listing(mask: &SamplingMask) -> String {
    let cols: Vec<String> = mask.sampled_indices().iter().map(usize::to_string).collect();
    format!(
        "columns: {}\nsampled: {}/{}\nnet_acceleration: {}\n",
        cols.join(" "),
        mask.sampled_count(),
        mask.width(),
        mask.net_acceleration()
    )
}

pub fn maskgen(width: usize, acceleration: usize, acs: AcsSpec, out: Option<&Path>) -> Result<SamplingMask> {
    let mask = make_equispaced_mask(width, acceleration, acs)?;
    if let Some(path) = out {
        write_atomic(path, mask_file_text(&mask).as_bytes())?;
    }
    Ok(mask)
}
