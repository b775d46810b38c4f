use rayon::prelude::*;
use umri::data::{
    build_manifest, generate_phantom, simulate_coils, synthesize_kspace, write_volume, DatasetManifest, Metadata,
    PhantomSpec, Split, SplitFractions,
};

use crate::config::RunConfig;
use crate::dataset::{volume_file, write_manifest, ManifestRow, VOLUME_DIR};
use crate::error::{CliError, Result};
use crate::output::OutputDir;

/// Salt separating the noise stream from the phantom stream of a sample.
pub const NOISE_SALT: u64 = 0x5EED;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenDataSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub fn manifest_rows(cfg: &RunConfig) -> Result<Vec<ManifestRow>> {
    let d = &cfg.data;
    let main = build_manifest(&[(d.family, d.count)], d.fractions, d.seed)?;
    let held_out: Vec<_> = d.ood_families.iter().map(|&f| (f, d.ood_count)).collect();
    let ood = build_manifest(&held_out, SplitFractions::new(0.0, 0.0, 1.0)?, d.seed)?;
    let rows = |m: DatasetManifest| {
        m.entries.into_iter().map(|e| ManifestRow {
            file: volume_file(&e.id),
            id: e.id,
            family: e.family,
            split: e.split,
            seed: e.seed,
        })
    };
    Ok(rows(main).chain(rows(ood)).collect())
}

/// Writes the manifest, one k-space volume per sample and `run.cfg` into `data.dir`.
pub fn gen_data(cfg: &RunConfig) -> Result<GenDataSummary> {
    let d = &cfg.data;
    let rows = manifest_rows(cfg)?;
    let out = OutputDir::create(&d.dir)?;
    let volumes = out.join(VOLUME_DIR);
    std::fs::create_dir_all(&volumes).map_err(|e| CliError::io(&volumes, e))?;
    let sens = simulate_coils(d.coils, d.size, d.size)?;
    rows.par_iter().try_for_each(|r| -> Result<()> {
        let image = generate_phantom(&PhantomSpec::new(r.family, d.size, r.seed));
        let kspace = synthesize_kspace(&image, &sens, d.noise_std, r.seed ^ NOISE_SALT)?;
        let meta: Metadata = [
            ("id", r.id.clone()),
            ("family", r.family.to_string()),
            ("split", r.split.to_string()),
            ("seed", r.seed.to_string()),
            ("noise_std", d.noise_std.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        write_volume(&out.join(&r.file), &kspace, &meta)?;
        Ok(())
    })?;
    write_manifest(out.path(), &rows)?;
    cfg.write_to_dir(out.path())?;
    out.finish()?;
    let count = |s: Split| rows.iter().filter(|r| r.split == s).count();
    Ok(GenDataSummary {
        train: count(Split::Train),
        val: count(Split::Val),
        test: count(Split::Test),
    })
}
