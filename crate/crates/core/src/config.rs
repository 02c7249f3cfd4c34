//! Flat `key=value` configuration with dotted section prefixes.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are matched
//! exactly; unknown keys are errors. Keys under `manifest.` are written by
//! the tools into run manifests and are skipped on load, so a manifest can
//! be fed back as a config.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bench::{RunConfig, TaskData, WarpSource};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::optim::{HyperParams, OptimizerKind, WarpPlacement};
use crate::tasks::{load_table, synth_proto_tasks, AlphabetSplit, SynthSpec};
use crate::warp::{EpisodeShape, FormPolicy, MetaConfig};

/// Splits config text into key/value pairs, in file order.
pub fn parse_kv(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::parse(origin, format!("line {}: {msg}", i + 1));
        let Some((k, v)) = line.split_once('=') else {
            return Err(err(format!("expected key=value, found {line:?}")));
        };
        let key = k.trim();
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '_' | '.' | '-'))
        {
            return Err(err(format!("invalid key {key:?}")));
        }
        if out.iter().any(|(seen, _)| seen == key) {
            return Err(err(format!("key {key:?} given twice")));
        }
        out.push((key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Where the effective seed came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedSource {
    Flag,
    File,
    Env,
    Default,
}

impl fmt::Display for SeedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeedSource::Flag => "flag",
            SeedSource::File => "file",
            SeedSource::Env => "env",
            SeedSource::Default => "default",
        })
    }
}

impl FromStr for SeedSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flag" => Ok(SeedSource::Flag),
            "file" => Ok(SeedSource::File),
            "env" => Ok(SeedSource::Env),
            "default" => Ok(SeedSource::Default),
            other => Err(Error::Config(format!("unknown seed source {other:?}"))),
        }
    }
}

const DEFAULTS: &[(&str, &str)] = &[
    ("optimizer", "warpadam"),
    ("optimizers", "sgd,momentum,radam,adamw,warpadam"),
    ("opt.eta", "0.001"),
    ("opt.beta1", "0.9"),
    ("opt.beta2", "0.999"),
    ("opt.epsilon", "1e-8"),
    ("opt.weight_decay", "0.01"),
    ("opt.momentum", "0.9"),
    ("inner.eta", "0.001"),
    ("inner.beta1", "0.9"),
    ("inner.beta2", "0.999"),
    ("inner.epsilon", "1e-8"),
    ("meta.inner_steps", "5"),
    ("meta.outer_eta", "0.001"),
    ("meta.tod_lambda", "0.001"),
    ("meta.first_order", "false"),
    ("meta.tasks_per_outer_step", "4"),
    ("meta.node_budget", "2000000"),
    ("meta.outer_steps", "50"),
    ("meta.eval_tasks", "20"),
    ("warp.source", "meta"),
    ("warp.checkpoint", ""),
    ("warp.form", "auto"),
    ("warp.dense_max", "256"),
    ("warp.placement", "gradient"),
    ("episode.n_way", "5"),
    ("episode.k_shot", "1"),
    ("episode.query_per_class", "15"),
    ("model.hidden", "64"),
    ("model.activation", "tanh"),
    ("run.n_tasks", "10"),
    ("run.steps_per_task", "30"),
    ("run.eval_every", "10"),
    ("run.fraction", "0.99"),
    ("sources", "synth"),
    ("import.root", ""),
    ("import.side", "28"),
];

const DEFAULT_SOURCE: &[(&str, &str)] = &[
    ("source.synth.kind", "synth"),
    ("source.synth.alphabets", "10"),
    ("source.synth.classes", "8"),
    ("source.synth.instances", "20"),
    ("source.synth.dim", "16"),
    ("source.synth.noise", "0.5"),
    (
        "source.synth.train_alphabets",
        "synth00,synth01,synth02,synth03,synth04,synth05,synth06,synth07",
    ),
    ("source.synth.eval_alphabets", "synth08,synth09"),
];

const SYNTH_FIELDS: &[(&str, &str)] = &[
    ("alphabets", "10"),
    ("classes", "8"),
    ("instances", "20"),
    ("dim", "16"),
    ("noise", "0.5"),
];

const SOURCE_FIELDS: &[&str] = &[
    "kind",
    "alphabets",
    "classes",
    "instances",
    "dim",
    "noise",
    "path",
    "train_alphabets",
    "eval_alphabets",
];

/// The layers a config is assembled from, lowest precedence first.
#[derive(Clone, Debug, Default)]
pub struct ConfigLayers {
    /// Pairs from `--config`.
    pub file: Vec<(String, String)>,
    /// `--set key=value` overrides.
    pub overrides: Vec<(String, String)>,
    /// `--seed`, which outranks everything.
    pub seed_flag: Option<u64>,
    /// The `WARP_SEED` environment variable, used only when nothing else
    /// names a seed.
    pub env_seed: Option<String>,
}

/// Every effective setting, as text, plus the typed view.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    pub seed: u64,
    pub seed_source: SeedSource,
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Config(format!("{key}={value:?}: {e}")))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl Settings {
    pub fn defaults() -> Self {
        Self::resolve(ConfigLayers::default()).expect("built-in defaults are valid")
    }

    pub fn resolve(layers: ConfigLayers) -> Result<Self> {
        let mut values: BTreeMap<String, String> = DEFAULTS
            .iter()
            .chain(DEFAULT_SOURCE)
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut seed = None;
        let mut seed_source = SeedSource::Default;
        let mut recorded_source = None;
        for (layer, pairs) in [(SeedSource::File, &layers.file), (SeedSource::Flag, &layers.overrides)] {
            for (k, v) in pairs {
                if k == "manifest.seed_source" && layer == SeedSource::File {
                    recorded_source = Some(v.parse::<SeedSource>()?);
                    continue;
                }
                if k.starts_with("manifest.") {
                    continue;
                }
                if k == "seed" {
                    seed = Some(parse_as::<u64>(k, v)?);
                    seed_source = layer;
                    continue;
                }
                values.insert(k.clone(), v.clone());
            }
        }
        if seed_source == SeedSource::File {
            // A manifest fed back in keeps the provenance it recorded.
            if let Some(src) = recorded_source {
                seed_source = src;
            }
        }
        if let Some(s) = layers.seed_flag {
            seed = Some(s);
            seed_source = SeedSource::Flag;
        }
        if seed.is_none() {
            if let Some(env) = &layers.env_seed {
                seed = Some(parse_as::<u64>("WARP_SEED", env.trim())?);
                seed_source = SeedSource::Env;
            }
        }

        // Drop the built-in source block when it is not listed, then fill
        // defaults for listed synthetic sources.
        let names = list(&values["sources"]);
        if names.is_empty() {
            return Err(Error::Config("sources must name at least one task source".into()));
        }
        if !names.iter().any(|n| n == "synth") {
            for (k, _) in DEFAULT_SOURCE {
                if !layers.file.iter().chain(&layers.overrides).any(|(u, _)| u == k) {
                    values.remove(*k);
                }
            }
        }
        for name in &names {
            let kind = values.get(&format!("source.{name}.kind")).cloned();
            if kind.as_deref() == Some("synth") {
                for (field, default) in SYNTH_FIELDS {
                    values
                        .entry(format!("source.{name}.{field}"))
                        .or_insert_with(|| default.to_string());
                }
            }
        }

        let settings = Self {
            values,
            seed: seed.unwrap_or(0),
            seed_source,
        };
        settings.check_keys(&names)?;
        settings.validate()?;
        Ok(settings)
    }

    fn check_keys(&self, names: &[String]) -> Result<()> {
        for key in self.values.keys() {
            if DEFAULTS.iter().any(|(k, _)| k == key) {
                continue;
            }
            let Some(rest) = key.strip_prefix("source.") else {
                return Err(Error::Config(format!("unknown key {key:?}")));
            };
            let Some((name, field)) = rest.rsplit_once('.') else {
                return Err(Error::Config(format!("unknown key {key:?}")));
            };
            if !names.iter().any(|n| n == name) {
                return Err(Error::Config(format!(
                    "key {key:?} configures source {name:?}, which is not listed in sources"
                )));
            }
            if !SOURCE_FIELDS.contains(&field) {
                return Err(Error::Config(format!("unknown source field in {key:?}")));
            }
        }
        Ok(())
    }

    /// Parses every typed view once so that bad values surface early.
    fn validate(&self) -> Result<()> {
        self.optimizer()?;
        let opts = self.optimizers()?;
        if opts.is_empty() {
            return Err(Error::Config("optimizers must not be empty".into()));
        }
        for (label, _) in &opts {
            if label.contains(',') || label.contains('\n') {
                return Err(Error::Config(format!("bad optimizer label {label:?}")));
            }
        }
        let run = self.run_config(OptimizerKind::WarpAdam)?;
        run.validate()?;
        run.meta.validate()?;
        self.fraction()?;
        self.meta_outer_steps()?;
        self.meta_eval_tasks()?;
        for name in self.source_names() {
            let kind = self.get(&format!("source.{name}.kind")).unwrap_or("");
            match kind {
                "synth" => {
                    self.synth_spec(&name)?;
                }
                "table" => {
                    if self.get(&format!("source.{name}.path")).unwrap_or("").is_empty() {
                        return Err(Error::Config(format!("source {name:?} needs a path")));
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "source {name:?} has kind {other:?}; expected synth or table"
                    )))
                }
            }
            for side in ["train_alphabets", "eval_alphabets"] {
                if list(self.get(&format!("source.{name}.{side}")).unwrap_or("")).is_empty() {
                    return Err(Error::Config(format!(
                        "source {name:?} needs an explicit {side} list"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn req(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing key {key:?}")))
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        parse_as(key, self.req(key)?)
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.req(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!("{key}={other:?}: expected true or false"))),
        }
    }

    /// All effective settings in key order, the seed included.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![("seed".to_string(), self.seed.to_string())];
        out.extend(self.values.iter().map(|(k, v)| (k.clone(), v.clone())));
        out.sort();
        out
    }

    pub fn optimizer(&self) -> Result<OptimizerKind> {
        self.typed("optimizer")
    }

    /// Labelled optimizers for a comparison. Entries are `kind` or
    /// `label:kind`; a bare kind is labelled with its display name.
    pub fn optimizers(&self) -> Result<Vec<(String, OptimizerKind)>> {
        list(self.req("optimizers")?)
            .into_iter()
            .map(|entry| match entry.split_once(':') {
                Some((label, kind)) => Ok((label.trim().to_string(), parse_as("optimizers", kind.trim())?)),
                None => {
                    let kind: OptimizerKind = parse_as("optimizers", &entry)?;
                    Ok((kind.label().to_string(), kind))
                }
            })
            .collect()
    }

    fn hyper(&self, prefix: &str) -> Result<HyperParams> {
        let d = HyperParams::default();
        let key = |f: &str| format!("{prefix}.{f}");
        let get = |f: &str, fallback: f64| -> Result<f64> {
            match self.get(&key(f)) {
                Some(v) => parse_as(&key(f), v),
                None => Ok(fallback),
            }
        };
        Ok(HyperParams {
            eta: get("eta", d.eta)?,
            beta1: get("beta1", d.beta1)?,
            beta2: get("beta2", d.beta2)?,
            epsilon: get("epsilon", d.epsilon)?,
            weight_decay: get("weight_decay", d.weight_decay)?,
            momentum: get("momentum", d.momentum)?,
        })
    }

    pub fn meta_config(&self) -> Result<MetaConfig> {
        Ok(MetaConfig {
            inner_steps: self.typed("meta.inner_steps")?,
            inner_hyper: self.hyper("inner")?,
            outer_eta: self.typed("meta.outer_eta")?,
            tod_lambda: self.typed("meta.tod_lambda")?,
            first_order: self.flag("meta.first_order")?,
            tasks_per_outer_step: self.typed("meta.tasks_per_outer_step")?,
            node_budget: self.typed("meta.node_budget")?,
            placement: self.typed::<WarpPlacement>("warp.placement")?,
        })
    }

    pub fn meta_outer_steps(&self) -> Result<usize> {
        self.typed("meta.outer_steps")
    }

    pub fn meta_eval_tasks(&self) -> Result<usize> {
        let n: usize = self.typed("meta.eval_tasks")?;
        if n == 0 {
            return Err(Error::Config("meta.eval_tasks must be positive".into()));
        }
        Ok(n)
    }

    pub fn fraction(&self) -> Result<f64> {
        let f: f64 = self.typed("run.fraction")?;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("run.fraction must lie in (0, 1], got {f}")));
        }
        Ok(f)
    }

    pub fn form_policy(&self) -> Result<FormPolicy> {
        let policy: FormPolicy = self.typed("warp.form")?;
        Ok(match policy {
            FormPolicy::Auto { .. } => FormPolicy::Auto {
                dense_max: self.typed("warp.dense_max")?,
            },
            fixed => fixed,
        })
    }

    pub fn warp_source(&self) -> Result<WarpSource> {
        match self.req("warp.source")? {
            "identity" => Ok(WarpSource::Identity),
            "meta" => Ok(WarpSource::MetaTrain {
                outer_steps: self.meta_outer_steps()?,
            }),
            "checkpoint" => {
                let path = self.req("warp.checkpoint")?;
                if path.is_empty() {
                    return Err(Error::Config(
                        "warp.source=checkpoint needs warp.checkpoint=<path>".into(),
                    ));
                }
                Ok(WarpSource::Checkpoint(PathBuf::from(path)))
            }
            other => Err(Error::Config(format!(
                "warp.source={other:?}: expected identity, meta or checkpoint"
            ))),
        }
    }

    pub fn episode(&self) -> Result<EpisodeShape> {
        Ok(EpisodeShape {
            n_way: self.typed("episode.n_way")?,
            k_shot: self.typed("episode.k_shot")?,
            query_per_class: self.typed("episode.query_per_class")?,
        })
    }

    /// The benchmark run for one optimizer under these settings.
    pub fn run_config(&self, optimizer: OptimizerKind) -> Result<RunConfig> {
        let activation = match self.req("model.activation")? {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            other => {
                return Err(Error::Config(format!(
                    "model.activation={other:?}: expected tanh or relu"
                )))
            }
        };
        let episode = self.episode()?;
        if episode.n_way == 0 || episode.k_shot == 0 || episode.query_per_class == 0 {
            return Err(Error::Config("episode sizes must be positive".into()));
        }
        Ok(RunConfig {
            optimizer,
            hyper: self.hyper("opt")?,
            warp_source: self.warp_source()?,
            form: self.form_policy()?,
            meta: self.meta_config()?,
            episode,
            hidden: self.typed("model.hidden")?,
            activation,
            n_tasks: self.typed("run.n_tasks")?,
            steps_per_task: self.typed("run.steps_per_task")?,
            eval_every: self.typed("run.eval_every")?,
            seed: self.seed,
        })
    }

    /// Directory tree and image side for `import`.
    pub fn import_args(&self) -> Result<(PathBuf, usize)> {
        let root = self.req("import.root")?;
        if root.is_empty() {
            return Err(Error::Config("import needs a root directory (import.root)".into()));
        }
        let side: usize = self.typed("import.side")?;
        if side == 0 {
            return Err(Error::Config("import.side must be positive".into()));
        }
        Ok((PathBuf::from(root), side))
    }

    pub fn source_names(&self) -> Vec<String> {
        list(self.get("sources").unwrap_or(""))
    }

    fn synth_spec(&self, name: &str) -> Result<SynthSpec> {
        let key = |f: &str| format!("source.{name}.{f}");
        let spec = SynthSpec {
            n_alphabets: self.typed(&key("alphabets"))?,
            classes_per_alphabet: self.typed(&key("classes"))?,
            instances_per_class: self.typed(&key("instances"))?,
            input_dim: self.typed(&key("dim"))?,
            noise_sigma: self.typed(&key("noise"))?,
        };
        if spec.n_alphabets == 0
            || spec.classes_per_alphabet == 0
            || spec.instances_per_class == 0
            || !(spec.noise_sigma >= 0.0)
        {
            return Err(Error::Config(format!(
                "source {name:?}: counts must be positive and noise non-negative"
            )));
        }
        Ok(spec)
    }

    /// Builds or loads every listed task source, in list order.
    ///
    /// Synthetic sources are generated from the seed, each on its own
    /// generator stream.
    pub fn load_sources(&self) -> Result<Vec<TaskData>> {
        self.source_names()
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let table = match self.req(&format!("source.{name}.kind"))? {
                    "synth" => {
                        let spec = self.synth_spec(&name)?;
                        let mut rng = crate::bench::source_rng(self.seed, i);
                        synth_proto_tasks(&spec, &mut rng)?
                    }
                    _ => load_table(Path::new(self.req(&format!("source.{name}.path"))?))?,
                };
                let train = list(self.req(&format!("source.{name}.train_alphabets"))?);
                let eval = list(self.req(&format!("source.{name}.eval_alphabets"))?);
                let split = AlphabetSplit::by_name(&table, &train, &eval)?;
                Ok(TaskData { name, table, split })
            })
            .collect()
    }

    /// Manifest text: a comment, `manifest.*` provenance lines, then every
    /// effective setting. Feeding it back through `--config` reproduces the
    /// run.
    pub fn manifest(&self, command: &str, extra: &[(&str, String)]) -> String {
        let mut out = String::from("# run manifest; pass this file to --config to repeat the run\n");
        out.push_str(&format!("manifest.command={command}\n"));
        out.push_str(&format!("manifest.seed_source={}\n", self.seed_source));
        out.push_str(&format!("manifest.version={}\n", env!("CARGO_PKG_VERSION")));
        for (k, v) in extra {
            out.push_str(&format!("manifest.{k}={v}\n"));
        }
        for (k, v) in self.pairs() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}
