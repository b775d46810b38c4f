//! Run configuration: an INI file layered over built-in defaults, then
//! `UMRI_<SECTION>_<KEY>` environment variables, then `--set` overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, WriteOption};
use umri::data::{Family, SplitFractions};
use umri::denoiser::{Denoiser, DenoiserConfig};
use umri::nn::{UnetConfig, VitConfig};
use umri::physics::{make_equispaced_mask, AcsSpec, SamplingMask};
use umri::recon::{ReconConfig, Schedule, SmeConfig};

use crate::error::{CliError, Result};

pub const ENV_PREFIX: &str = "UMRI_";
pub const CONFIG_FILE: &str = "run.cfg";

/// Every recognized key with its default, in serialization order.
const KEYS: &[(&str, &str, &str)] = &[
    ("model", "variant", "vit-fusion"),
    ("model", "encoder", "desk"),
    ("model", "encoder_seed", "0"),
    ("model", "encoder_weights", ""),
    ("model", "cascades", "4"),
    ("model", "shared_denoiser", "true"),
    ("model", "residual", "false"),
    ("model", "cnn_chans", "16"),
    ("model", "cnn_pools", "3"),
    ("model", "sme_pools", "4"),
    ("model", "sme_chans", "8"),
    ("mask", "acceleration", "4"),
    ("mask", "acs", "lines:8"),
    ("data", "dir", "data"),
    ("data", "size", "64"),
    ("data", "coils", "4"),
    ("data", "noise_std", "0.003"),
    ("data", "family", "A"),
    ("data", "count", "320"),
    ("data", "fractions", "0.625, 0.125, 0.25"),
    ("data", "ood_families", "B, C"),
    ("data", "ood_count", "80"),
    ("data", "seed", "0"),
    ("train", "lr", "0.001"),
    ("train", "decay_epoch", "40"),
    ("train", "decay_factor", "0.1"),
    ("train", "epochs", "50"),
    ("train", "patience", "5"),
    ("train", "batch_size", "1"),
    ("train", "seed", "0"),
    ("run", "out", "runs/default"),
    ("run", "deterministic", "true"),
    ("eval", "accelerations", "4, 8"),
    ("eval", "acs", "fraction:0.08, fraction:0.04"),
    ("eval", "families", "B, C"),
    ("eval", "limit", "0"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    VitFusion,
    BaselineCnn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::VitFusion => "vit-fusion",
            Variant::BaselineCnn => "baseline-cnn",
        })
    }
}

impl FromStr for Variant {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vit-fusion" => Ok(Variant::VitFusion),
            "baseline-cnn" => Ok(Variant::BaselineCnn),
            other => Err(CliError::config(format!("unknown model variant '{other}'"))),
        }
    }
}

/// `lines:<n>` or `fraction:<f>`.
pub fn parse_acs(s: &str) -> Result<AcsSpec> {
    let bad = || CliError::config(format!("ACS spec '{s}' is not lines:<n> or fraction:<f>"));
    let (kind, value) = s.trim().split_once(':').ok_or_else(bad)?;
    let spec = match kind.trim() {
        "lines" => AcsSpec::Lines(value.trim().parse().map_err(|_| bad())?),
        "fraction" => AcsSpec::CenterFraction(value.trim().parse().map_err(|_| bad())?),
        _ => return Err(bad()),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn format_acs(spec: &AcsSpec) -> String {
    match spec {
        AcsSpec::Lines(n) => format!("lines:{n}"),
        AcsSpec::CenterFraction(f) => format!("fraction:{f}"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub variant: Variant,
    pub encoder: String,
    pub encoder_seed: u64,
    pub encoder_weights: Option<PathBuf>,
    pub cascades: usize,
    pub shared_denoiser: bool,
    pub residual: bool,
    pub cnn_chans: usize,
    pub cnn_pools: usize,
    pub sme: SmeConfig,
}

impl ModelSection {
    pub fn recon_config(&self) -> Result<ReconConfig> {
        let denoiser = match self.variant {
            Variant::VitFusion => {
                let mut d = DenoiserConfig::for_encoder(VitConfig::preset(&self.encoder)?);
                d.encoder_seed = self.encoder_seed;
                d.residual = self.residual;
                Denoiser::VitFusion(d)
            }
            Variant::BaselineCnn => Denoiser::Cnn(UnetConfig {
                in_chans: 2,
                out_chans: 2,
                chans: self.cnn_chans,
                pools: self.cnn_pools,
            }),
        };
        let mut cfg = ReconConfig::new(self.cascades, denoiser);
        cfg.shared_denoiser = self.shared_denoiser;
        cfg.sme = self.sme;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSection {
    pub acceleration: usize,
    pub acs: AcsSpec,
}

impl MaskSection {
    pub fn build(&self, width: usize) -> Result<SamplingMask> {
        Ok(make_equispaced_mask(width, self.acceleration, self.acs)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSection {
    pub dir: PathBuf,
    pub size: usize,
    pub coils: usize,
    pub noise_std: f64,
    pub family: Family,
    pub count: usize,
    pub fractions: SplitFractions,
    /// Held-out families, written entirely to the test split.
    pub ood_families: Vec<Family>,
    pub ood_count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub out: PathBuf,
    pub deterministic: bool,
}

/// One evaluation setting: acceleration, ACS size and test family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalCell {
    pub acceleration: usize,
    pub acs: AcsSpec,
    pub family: Family,
}

impl EvalCell {
    pub fn label(&self) -> String {
        format!("R{}-{}-{}", self.acceleration, self.acs, self.family)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    pub cells: Vec<EvalCell>,
    /// Samples per cell; 0 evaluates the whole test split of the family.
    pub limit: usize,
}

impl EvalGrid {
    /// Cells in family-major, then acceleration, then ACS order.
    pub fn product(accelerations: &[usize], acs: &[AcsSpec], families: &[Family], limit: usize) -> Self {
        let mut cells = Vec::new();
        for &family in families {
            for &acceleration in accelerations {
                for &spec in acs {
                    cells.push(EvalCell {
                        acceleration,
                        acs: spec,
                        family,
                    });
                }
            }
        }
        Self { cells, limit }
    }

    pub fn validate(&self, width: usize) -> Result<()> {
        if self.cells.is_empty() {
            return Err(CliError::config("the evaluation grid is empty"));
        }
        for cell in &self.cells {
            make_equispaced_mask(width, cell.acceleration, cell.acs)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelSection,
    pub mask: MaskSection,
    pub data: DataSection,
    pub schedule: Schedule,
    pub run: RunSection,
    pub eval: EvalGrid,
    values: BTreeMap<(String, String), String>,
}

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|(s, k, _)| *s == section && *k == key)
}

fn list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty())
}

impl RunConfig {
    /// Resolves a configuration from optional INI text, environment pairs and
    /// `section.key=value` overrides, in increasing precedence.
    pub fn resolve<I>(text: Option<&str>, env: I, sets: &[String]) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut values: BTreeMap<(String, String), String> = KEYS
            .iter()
            .map(|(s, k, v)| ((s.to_string(), k.to_string()), v.to_string()))
            .collect();
        let mut set = |section: &str, key: &str, value: &str, origin: &str| -> Result<()> {
            if !known(section, key) {
                return Err(CliError::config(format!("unknown key '{section}.{key}' ({origin})")));
            }
            values.insert((section.to_string(), key.to_string()), value.trim().to_string());
            Ok(())
        };
        if let Some(text) = text {
            let ini = Ini::load_from_str(text).map_err(|e| CliError::config(format!("config file: {e}")))?;
            for (section, props) in ini.iter() {
                let Some(section) = section else {
                    if let Some((key, _)) = props.iter().next() {
                        return Err(CliError::config(format!("key '{key}' outside of any section")));
                    }
                    continue;
                };
                for (key, value) in props.iter() {
                    set(section, key, value, "config file")?;
                }
            }
        }
        for (name, value) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let (section, key) = rest
                .split_once('_')
                .ok_or_else(|| CliError::config(format!("environment variable {name} names no key")))?;
            set(&section.to_lowercase(), &key.to_lowercase(), &value, &name)?;
        }
        for item in sets {
            let (path, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("override '{item}' is not section.key=value")))?;
            let (section, key) = path
                .split_once('.')
                .ok_or_else(|| CliError::config(format!("override '{item}' is not section.key=value")))?;
            set(section.trim(), key.trim(), value, "override")?;
        }
        Self::from_values(values)
    }

    /// Reads `path` (if given) and applies the process environment and `sets`.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
            None => None,
        };
        Self::resolve(text.as_deref(), std::env::vars(), sets)
    }

    fn from_values(values: BTreeMap<(String, String), String>) -> Result<Self> {
        let raw = |s: &str, k: &str| -> &str { values[&(s.to_string(), k.to_string())].as_str() };
        fn parse<T: FromStr>(s: &str, k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| CliError::config(format!("{s}.{k}: cannot parse '{v}'")))
        }
        macro_rules! typed {
            ($s:literal, $k:literal) => {
                parse($s, $k, raw($s, $k))?
            };
        }
        let families =
            |s: &str, k: &str| -> Result<Vec<Family>> { list(raw(s, k)).map(|f| Ok(f.parse::<Family>()?)).collect() };

        let encoder_weights = raw("model", "encoder_weights");
        let model = ModelSection {
            variant: raw("model", "variant").parse()?,
            encoder: raw("model", "encoder").to_string(),
            encoder_seed: typed!("model", "encoder_seed"),
            encoder_weights: (!encoder_weights.is_empty()).then(|| PathBuf::from(encoder_weights)),
            cascades: typed!("model", "cascades"),
            shared_denoiser: typed!("model", "shared_denoiser"),
            residual: typed!("model", "residual"),
            cnn_chans: typed!("model", "cnn_chans"),
            cnn_pools: typed!("model", "cnn_pools"),
            sme: SmeConfig {
                pools: typed!("model", "sme_pools"),
                chans: typed!("model", "sme_chans"),
            },
        };
        let mask = MaskSection {
            acceleration: typed!("mask", "acceleration"),
            acs: parse_acs(raw("mask", "acs"))?,
        };
        let fractions: Vec<f64> = list(raw("data", "fractions"))
            .map(|v| parse("data", "fractions", v))
            .collect::<Result<_>>()?;
        let [train, val, test] = fractions[..] else {
            return Err(CliError::config("data.fractions needs three values: train, val, test"));
        };
        let data = DataSection {
            dir: PathBuf::from(raw("data", "dir")),
            size: typed!("data", "size"),
            coils: typed!("data", "coils"),
            noise_std: typed!("data", "noise_std"),
            family: raw("data", "family").parse()?,
            count: typed!("data", "count"),
            fractions: SplitFractions::new(train, val, test)?,
            ood_families: families("data", "ood_families")?,
            ood_count: typed!("data", "ood_count"),
            seed: typed!("data", "seed"),
        };
        let schedule = Schedule {
            lr: typed!("train", "lr"),
            decay_epoch: typed!("train", "decay_epoch"),
            decay_factor: typed!("train", "decay_factor"),
            epochs: typed!("train", "epochs"),
            patience: typed!("train", "patience"),
            batch_size: typed!("train", "batch_size"),
            seed: typed!("train", "seed"),
        };
        let run = RunSection {
            out: PathBuf::from(raw("run", "out")),
            deterministic: typed!("run", "deterministic"),
        };
        let accelerations: Vec<usize> = list(raw("eval", "accelerations"))
            .map(|v| parse("eval", "accelerations", v))
            .collect::<Result<_>>()?;
        let acs: Vec<AcsSpec> = list(raw("eval", "acs")).map(parse_acs).collect::<Result<_>>()?;
        let eval = EvalGrid::product(
            &accelerations,
            &acs,
            &families("eval", "families")?,
            typed!("eval", "limit"),
        );

        let cfg = Self {
            model,
            mask,
            data,
            schedule,
            run,
            eval,
            values,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.size == 0 || d.coils == 0 {
            return Err(CliError::config("data.size and data.coils must be positive"));
        }
        if d.ood_families.contains(&d.family) {
            return Err(CliError::config(format!(
                "family {} is both in-distribution and held out",
                d.family
            )));
        }
        if !(d.noise_std >= 0.0 && d.noise_std.is_finite()) {
            return Err(CliError::config(format!(
                "data.noise_std must be finite and nonnegative, got {}",
                d.noise_std
            )));
        }
        let pools = self.model.sme.pools.max(match self.model.variant {
            Variant::BaselineCnn => self.model.cnn_pools,
            Variant::VitFusion => 0,
        });
        if !d.size.is_multiple_of(1 << pools) {
            return Err(CliError::config(format!(
                "data.size {} is not divisible by 2^{pools}",
                d.size
            )));
        }
        self.model.recon_config()?;
        self.mask.build(d.size)?;
        self.schedule.validate()?;
        self.eval.validate(d.size)
    }

    /// Effective value of `section.key` as text.
    pub fn value(&self, section: &str, key: &str) -> Option<&str> {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
    }

    /// Canonical INI text of every effective value; loading it reproduces this config.
    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        for (section, key, _) in KEYS {
            ini.with_section(Some(*section))
                .set(*key, self.value(section, key).unwrap_or_default());
        }
        let mut buf = Vec::new();
        let opt = WriteOption {
            kv_separator: " = ",
            ..WriteOption::default()
        };
        ini.write_to_opt(&mut buf, opt).expect("writing to memory");
        String::from_utf8(buf).expect("INI output is UTF-8")
    }

    /// Writes the canonical configuration as `run.cfg` inside `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, self.to_ini_string()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// All keys with their defaults, for documentation and templates.
    pub fn defaults() -> impl Iterator<Item = (&'static str, &'static str, &'static str)> {
        KEYS.iter().copied()
    }
}
