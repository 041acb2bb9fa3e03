//! Runtime settings: a flat `key = value` file plus command-line overrides.
//! Keys mirror the field names of the training, synthetic-graph and runtime
//! configurations; `seed` applies to both training and generation.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use edgekg_core::config::{lookup, parse_kv};
use edgekg_core::pdqa::DEFAULT_THRESHOLD;
use edgekg_core::synth::SynthConfig;
use edgekg_core::{Error, Profile, Result, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub model_checkpoint_path: Option<PathBuf>,
    /// Dataset directory or triple file supplying the label dictionaries.
    pub data_path: Option<PathBuf>,
    /// Frozen score distribution; fitted on the training split when absent.
    pub reference_distribution_path: Option<PathBuf>,
    pub bind_address: String,
    pub max_batch: usize,
    pub top_k_default: usize,
    pub pdqa_threshold: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            model_checkpoint_path: None,
            data_path: None,
            reference_distribution_path: None,
            bind_address: "127.0.0.1:8080".into(),
            max_batch: 1024,
            top_k_default: 10,
            pdqa_threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl RuntimeConfig {
    pub const KEYS: [&'static str; 7] = [
        "model_checkpoint_path",
        "data_path",
        "reference_distribution_path",
        "bind_address",
        "max_batch",
        "top_k_default",
        "pdqa_threshold",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model_checkpoint_path" => self.model_checkpoint_path = Some(value.into()),
            "data_path" => self.data_path = Some(value.into()),
            "reference_distribution_path" => self.reference_distribution_path = Some(value.into()),
            "bind_address" => self.bind_address = value.to_owned(),
            "max_batch" => self.max_batch = num(key, value)?,
            "top_k_default" => self.top_k_default = num(key, value)?,
            "pdqa_threshold" => self.pdqa_threshold = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown runtime key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_batch == 0 {
            return Err(Error::Config("max_batch must be >= 1".into()));
        }
        if self.top_k_default == 0 {
            return Err(Error::Config("top_k_default must be >= 1".into()));
        }
        if !self.pdqa_threshold.is_finite() {
            return Err(Error::Config("pdqa_threshold must be finite".into()));
        }
        Ok(())
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

/// Every configurable value of one CLI invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub profile: Profile,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub runtime: RuntimeConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl Settings {
    pub fn for_profile(profile: Profile) -> Self {
        Self {
            profile,
            train: TrainConfig::profile(profile),
            synth: SynthConfig::default(),
            runtime: RuntimeConfig::default(),
        }
    }

    /// Builds settings from an optional config file and `key=value`
    /// overrides, applied in that order. A `profile` key (or the
    /// `profile` argument, which wins) selects the training base before
    /// any other key is applied.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)], profile: Option<Profile>) -> Result<Self> {
        let mut pairs = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                parse_kv(&text)?
            }
            None => Vec::new(),
        };
        pairs.extend(overrides.iter().cloned());
        let profile = match (profile, lookup(&pairs, "profile")) {
            (Some(p), _) => p,
            (None, Some(name)) => name.parse()?,
            (None, None) => Profile::Desk,
        };
        let mut settings = Self::for_profile(profile);
        for (k, v) in &pairs {
            settings.set(k, v)?;
        }
        Ok(settings)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "profile" {
            return Ok(());
        }
        let mut known = false;
        if TrainConfig::KEYS.contains(&key) {
            self.train.set(key, value)?;
            known = true;
        }
        if SynthConfig::KEYS.contains(&key) {
            self.synth.set(key, value)?;
            known = true;
        }
        if RuntimeConfig::KEYS.contains(&key) {
            self.runtime.set(key, value)?;
            known = true;
        }
        if known {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown configuration key {key:?}")))
        }
    }
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    Ok((k.to_owned(), v.trim().to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_then_overrides_then_profile() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "profile = paper-basic\ndim = 32\nseed = 4\nmax_batch = 7\nnum_people = 90").unwrap();
        let s = Settings::load(Some(f.path()), &[("dim".into(), "16".into())], None).unwrap();
        assert_eq!(s.profile, Profile::PaperBasic);
        assert_eq!(s.train.dim, 16);
        assert_eq!(s.train.batch_size, 5000);
        assert_eq!((s.train.seed, s.synth.seed), (4, 4));
        assert_eq!(s.runtime.max_batch, 7);
        assert_eq!(s.synth.num_people, 90);
        let s = Settings::load(Some(f.path()), &[], Some(Profile::Desk)).unwrap();
        assert_eq!(s.train.batch_size, 1024);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(Settings::load(None, &[("bogus".into(), "1".into())], None).is_err());
        assert!(Settings::load(None, &[("dim".into(), "x".into())], None).is_err());
        assert!(parse_override("novalue").is_err());
        assert_eq!(parse_override(" a = b ").unwrap(), ("a".into(), "b".into()));
    }
}
