//! Run configuration: a JSON file layered under command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rabin_mutex::adversary::AdversarySpec;
use rabin_mutex::experiment::{Event, ExperimentSpec, Mode};
use rabin_mutex::protocol::{ceil_log2, mass_serde, ProtocolParams, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Variable holding the default master seed.
pub const SEED_ENV: &str = "RABIN_LAB_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Flags shared by `simulate`, `estimate` and `exact`. Every field is
/// optional so that unset flags fall through to the config file.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Layer {
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub b: Option<u32>,
    #[arg(long)]
    pub r: Option<u32>,
    /// optimized, deoptimized or ben-or
    #[arg(long)]
    pub variant: Option<String>,
    /// Probability of lottery value 1 in the boolean variant, e.g. 1/2
    #[arg(long)]
    pub p1: Option<String>,
    #[arg(long)]
    pub adversary: Option<String>,
    /// Adversary parameter as key=value; repeatable
    #[arg(long = "adversary-arg", value_name = "KEY=VALUE")]
    #[serde(skip)]
    pub adversary_arg: Vec<String>,
    #[arg(skip)]
    pub adversary_args: Option<BTreeMap<String, String>>,
    /// Round index used by the default condition and target
    #[arg(long)]
    pub k: Option<u32>,
    /// Process id used by the default condition and target
    #[arg(long)]
    pub i: Option<u32>,
    /// Restrict the default condition to rounds with m participants
    #[arg(long)]
    pub m: Option<u32>,
    /// Condition event; see `list predicates`
    #[arg(long)]
    pub condition: Option<String>,
    /// Target event; see `list predicates`
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub trials: Option<u64>,
    /// Maximum number of steps per trace
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Stop each trace after this many completed rounds
    #[arg(long)]
    pub stop_after: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; never changes results
    #[arg(long)]
    pub workers: Option<usize>,
    /// Maximum number of enumerated leaves
    #[arg(long)]
    pub leaf_cap: Option<u64>,
    /// Config file (JSON); flags override its values
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// Fully resolved configuration, echoed in every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Config {
    pub n: u32,
    pub b: u32,
    pub r: u32,
    pub variant: Variant,
    pub p1: String,
    pub adversary: String,
    pub adversary_args: BTreeMap<String, String>,
    pub k: u32,
    pub i: u32,
    pub m: Option<u32>,
    pub condition: String,
    pub target: String,
    pub trials: u64,
    pub horizon: u64,
    pub stop_after: Option<u32>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub leaf_cap: u64,
    /// Not echoed, so that outputs written to different files are identical.
    #[serde(skip_serializing, default)]
    pub out: Option<PathBuf>,
    pub format: Format,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads a config file. Outputs of this tool are accepted as well: their
/// `config` member is used.
pub fn read_layer(path: &Path) -> Result<Layer, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_owned(), source: e })?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(inner) = value.get_mut("config") {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Default master seed: the environment variable, else 1.
pub fn default_seed() -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV}={v} is not an integer"))),
        Err(_) => Ok(1),
    }
}

impl Layer {
    /// `self` wins over `base` field by field.
    fn over(self, base: Layer) -> Layer {
        let mut args = base.adversary_args.unwrap_or_default();
        args.extend(self.adversary_args.unwrap_or_default());
        Layer {
            n: self.n.or(base.n),
            b: self.b.or(base.b),
            r: self.r.or(base.r),
            variant: self.variant.or(base.variant),
            p1: self.p1.or(base.p1),
            adversary: self.adversary.or(base.adversary),
            adversary_arg: Vec::new(),
            adversary_args: Some(args),
            k: self.k.or(base.k),
            i: self.i.or(base.i),
            m: self.m.or(base.m),
            condition: self.condition.or(base.condition),
            target: self.target.or(base.target),
            trials: self.trials.or(base.trials),
            horizon: self.horizon.or(base.horizon),
            stop_after: self.stop_after.or(base.stop_after),
            seed: self.seed.or(base.seed),
            workers: self.workers.or(base.workers),
            leaf_cap: self.leaf_cap.or(base.leaf_cap),
            config: None,
            out: self.out.or(base.out),
            format: self.format.or(base.format),
        }
    }

    /// Applies the config file named by `--config`, then the defaults.
    /// With `stop_at_k`, traces stop after round k unless configured otherwise.
    pub fn resolve(mut self, stop_at_k: bool) -> Result<Config, CliError> {
        let mut args = BTreeMap::new();
        for kv in std::mem::take(&mut self.adversary_arg) {
            let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--adversary-arg `{kv}` is not key=value")))?;
            args.insert(k.trim().to_string(), v.trim().to_string());
        }
        self.adversary_args = Some(args);
        let l = match self.config.take() {
            Some(path) => self.over(read_layer(&path)?),
            None => self.over(Layer::default()),
        };
        let variant: Variant = match &l.variant {
            Some(v) => v.parse().map_err(|e| usage(format!("{e}")))?,
            None => Variant::RabinOptimized,
        };
        let n = l.n.unwrap_or(4);
        if n == 0 {
            return Err(usage("--n must be at least 1"));
        }
        let (b, r) = match variant {
            Variant::BenOr => (1, 2),
            _ => (ceil_log2(u64::from(n)) + 4, 100),
        };
        let k = l.k.unwrap_or(1);
        let i = l.i.unwrap_or(1);
        let condition = match (&l.condition, l.m) {
            (Some(c), _) => c.clone(),
            (None, Some(m)) => Event::and([Event::participates(i, k), Event::size(k, m)]).to_string(),
            (None, None) => Event::participates(i, k).to_string(),
        };
        let target = l.target.clone().unwrap_or_else(|| Event::win(i, k).to_string());
        Ok(Config {
            n,
            b: l.b.unwrap_or(b),
            r: l.r.unwrap_or(r),
            variant,
            p1: l.p1.clone().unwrap_or_else(|| "1/2".into()),
            adversary: l.adversary.clone().unwrap_or_else(|| "round-robin".into()),
            adversary_args: l.adversary_args.clone().unwrap_or_default(),
            k,
            i,
            m: l.m,
            condition,
            target,
            trials: l.trials.unwrap_or(10_000),
            horizon: l.horizon.unwrap_or(10_000),
            stop_after: l.stop_after.or(stop_at_k.then_some(k)),
            seed: match l.seed {
                Some(s) => s,
                None => default_seed()?,
            },
            workers: l.workers,
            leaf_cap: l.leaf_cap.unwrap_or(5_000_000),
            out: l.out.clone(),
            format: l.format.unwrap_or_default(),
        })
    }
}

impl Config {
    pub fn params(&self) -> Result<ProtocolParams, CliError> {
        let p = ProtocolParams::new(self.n, self.b, self.r, self.variant).map_err(|e| usage(e.to_string()))?;
        let p1 = mass_serde::parse(&self.p1).ok_or_else(|| usage(format!("--p1 `{}` is not a fraction", self.p1)))?;
        p.with_p1(p1).map_err(|e| usage(e.to_string()))
    }

    pub fn adversary_spec(&self) -> Result<AdversarySpec, CliError> {
        let mut spec = AdversarySpec::new(&self.adversary);
        for (k, v) in &self.adversary_args {
            spec = spec.with(k, v);
        }
        // Surface unknown names and parameters as usage errors up front.
        spec.build(self.n).map_err(|e| usage(e.to_string()))?;
        Ok(spec)
    }

    pub fn spec(&self, mode: Mode) -> Result<ExperimentSpec, CliError> {
        let condition: Event = self.condition.parse().map_err(|e| usage(format!("condition: {e}")))?;
        let target: Event = self.target.parse().map_err(|e| usage(format!("target: {e}")))?;
        let mut spec = ExperimentSpec::new(self.params()?, self.adversary_spec()?, condition, target)
            .horizon(self.horizon)
            .trials(self.trials)
            .seed(self.seed)
            .mode(mode)
            .workers(self.workers)
            .leaf_cap(self.leaf_cap);
        spec.stop_after_rounds = self.stop_after;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 6, "seed": 9, "adversary": "random", "adversary-args": {"x": "1"}}"#).unwrap();
        let flags = Layer { n: Some(3), config: Some(path), ..Layer::default() };
        let c = flags.resolve(false).unwrap();
        assert_eq!((c.n, c.seed, c.adversary.as_str()), (3, 9, "random"));
        assert_eq!(c.adversary_args.get("x").map(String::as_str), Some("1"));
        assert_eq!(c.b, 6);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = Layer { m: Some(2), k: Some(3), seed: Some(4), ..Layer::default() }.resolve(true).unwrap();
        assert_eq!(c.condition, "and(participates(1,3),size(3,2))");
        assert_eq!(c.stop_after, Some(3));
        let back: Config = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let with_out = Config { out: Some("x.json".into()), ..c.clone() };
        assert_eq!(serde_json::to_string(&with_out).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn bad_adversary_argument_is_a_usage_error() {
        let l = Layer { adversary_arg: vec!["nokey".into()], seed: Some(1), ..Layer::default() };
        assert!(matches!(l.resolve(false), Err(CliError::Usage(_))));
    }
}
