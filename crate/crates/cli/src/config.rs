//! Effective configuration: built-in defaults, then the JSON file, then
//! `SYNERMED_SEED` for seeds the file leaves unset, then `--set` overrides.

use crate::error::CliError;
use medsyn_core::forge::ForgeConfig;
use medsyn_core::metrics::SsimParams;
use medsyn_core::synergy::{ToyCorpusConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const SEED_ENV: &str = "SYNERMED_SEED";

const SEED_PATHS: [&str; 3] = ["forge.seed", "toy.seed", "train.seed"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub forge: ForgeConfig,
    pub ssim: SsimParams,
    pub toy: ToyCorpusConfig,
    pub train: TrainConfig,
}

impl CliConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.forge.validate()?;
        self.ssim.validate()?;
        self.toy.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Canonical JSON of the effective config.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn lookup<'a>(v: &'a Value, dotted: &str) -> Option<&'a Value> {
    dotted.split('.').try_fold(v, |cur, key| cur.get(key))
}

/// Sets `dotted` in `v`, creating objects along the way.
fn assign(v: &mut Value, dotted: &str, value: Value) -> Result<(), CliError> {
    let mut cur = v;
    let keys: Vec<&str> = dotted.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::usage(format!("bad config key {dotted:?}")));
    }
    for key in &keys[..keys.len() - 1] {
        let obj = cur.as_object_mut().ok_or_else(|| CliError::usage(format!("{dotted}: {key} is not an object")))?;
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = cur.as_object_mut().ok_or_else(|| CliError::usage(format!("{dotted}: parent is not an object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Recursively overlays `top` onto `base`; non-object values replace.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// `key=value`; the value is parsed as JSON when it parses, else taken as a string.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::usage(format!("--set expects key=value, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
    Ok((k.trim().to_owned(), value))
}

fn decode(v: Value, origin: &str) -> Result<CliConfig, CliError> {
    serde_path_to_error::deserialize::<_, CliConfig>(v)
        .map_err(|e| CliError::usage(format!("{origin}: {} at {}", e.inner(), e.path())))
}

/// Builds the effective config. `env_seed` is the value of `SYNERMED_SEED`, if any.
pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, overrides: &[String]) -> Result<CliConfig, CliError> {
    let file_value = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            decode(v.clone(), &p.display().to_string())?;
            v
        }
        None => Value::Object(Default::default()),
    };
    let mut v = serde_json::to_value(CliConfig::default()).expect("config serializes");
    let explicit: Vec<bool> = SEED_PATHS.iter().map(|p| lookup(&file_value, p).is_some()).collect();
    merge(&mut v, file_value);
    if let Some(raw) = env_seed {
        let seed: u64 = raw.trim().parse().map_err(|_| CliError::usage(format!("{SEED_ENV}={raw:?} is not a u64")))?;
        for (path, set) in SEED_PATHS.iter().zip(explicit) {
            if !set {
                assign(&mut v, path, Value::from(seed))?;
            }
        }
    }
    for o in overrides {
        let (k, val) = parse_override(o)?;
        assign(&mut v, &k, val)?;
    }
    let cfg = decode(v, "effective config")?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> std::path::PathBuf {
        let p = dir.join("c.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_without_file() {
        assert_eq!(resolve(None, None, &[]).unwrap(), CliConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), r#"{"train": {"stage1": {"epochs": 3, "epoch": 4}}}"#);
        let e = resolve(Some(&p), None, &[]).unwrap_err();
        assert_eq!(e.kind.exit_code(), 1);
        assert!(e.message.contains("epoch"), "{}", e.message);
        assert!(resolve(None, None, &["train.nope=1".into()]).is_err());
    }

    #[test]
    fn file_then_overrides() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), r#"{"train": {"stage1": {"epochs": 3}}, "toy": {"n_volumes": 8}}"#);
        let c = resolve(Some(&p), None, &["toy.n_volumes=12".into(), "forge.balance_by=dataset".into()]).unwrap();
        assert_eq!(c.train.stage1.epochs, 3);
        assert_eq!(c.train.stage1.batch_size, TrainConfig::default().stage1.batch_size);
        assert_eq!(c.toy.n_volumes, 12);
        assert_eq!(c.forge.balance_by, medsyn_core::forge::BalanceBy::Dataset);
    }

    #[test]
    fn env_seed_fills_only_unset_seeds() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), r#"{"forge": {"seed": 3}}"#);
        let c = resolve(Some(&p), Some("42"), &[]).unwrap();
        assert_eq!((c.forge.seed, c.toy.seed, c.train.seed), (3, 42, 42));
        let c = resolve(Some(&p), Some("42"), &["train.seed=9".into()]).unwrap();
        assert_eq!(c.train.seed, 9);
        assert!(resolve(None, Some("x"), &[]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = CliConfig::default();
        let mut b = a.clone();
        b.forge.seed = 1;
        assert_eq!(a.sha256(), CliConfig::default().sha256());
        assert_ne!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
    }
}
