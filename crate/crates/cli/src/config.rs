use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mixroute::env::EnvConfig;
use mixroute::eval::{BaselineSpec, RatioAveraging};
use mixroute::grpo::{GrpoConfig, RewardConfig};
use mixroute::klst::{KlstTrainConfig, LabelingConfig};
use mixroute::router::{RouteMode, RouterConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlstSection {
    /// Episodes rolled out for supervision (and for calibration).
    pub episodes: usize,
    pub first_episode: u64,
    pub labeling: LabelingConfig,
    pub train: KlstTrainConfig,
}

impl Default for KlstSection {
    fn default() -> Self {
        Self {
            episodes: 200,
            first_episode: 0,
            labeling: LabelingConfig::default(),
            train: KlstTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoSection {
    pub train: GrpoConfig,
    pub reward: RewardConfig,
    /// Retry at a larger learning rate when the router does not move.
    pub fallback: bool,
}

impl Default for GrpoSection {
    fn default() -> Self {
        Self {
            train: GrpoConfig::default(),
            reward: RewardConfig::default(),
            fallback: true,
        }
    }
}

/// A method to evaluate. Router checkpoints are relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub spec: BaselineSpec,
}

impl MethodSpec {
    fn plain(spec: BaselineSpec) -> Self {
        Self { name: None, spec }
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.spec {
            BaselineSpec::Router { checkpoint, .. } => {
                let stage = checkpoint
                    .parent()
                    .and_then(Path::file_name)
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                format!("{}@{stage}", self.spec.tag())
            }
            other => other.tag(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub first_episode: u64,
    pub averaging: RatioAveraging,
    pub specs: Vec<MethodSpec>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let mut specs = vec![
            MethodSpec::plain(BaselineSpec::FixedLow),
            MethodSpec::plain(BaselineSpec::FixedHigh),
        ];
        for p in [0.2, 0.4, 0.6, 0.8] {
            specs.push(MethodSpec::plain(BaselineSpec::Random { p }));
        }
        for stage in ["klst", "grpo"] {
            specs.push(MethodSpec::plain(BaselineSpec::Router {
                checkpoint: PathBuf::from(stage).join("router.ckpt"),
                mode: RouteMode::Greedy,
            }));
        }
        Self {
            episodes: 500,
            first_episode: 2_000_000,
            averaging: RatioAveraging::Micro,
            specs,
        }
    }
}

/// Everything one pipeline run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into every section.
    pub seed: u64,
    /// Output directory; not part of the config hash.
    pub out: PathBuf,
    pub env: EnvConfig,
    pub router: RouterConfig,
    pub klst: KlstSection,
    pub grpo: GrpoSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            env: EnvConfig::default(),
            router: RouterConfig::default(),
            klst: KlstSection::default(),
            grpo: GrpoSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Sections whose `seed` field is copied from the top level.
const SEEDED_SECTIONS: &[&[&str]] = &[&["env"], &["klst", "train"], &["grpo", "train"]];

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tau: Option<f64>,
    pub lambda_high: Option<f64>,
    pub beta: Option<f64>,
    pub group_size: Option<usize>,
}

/// Which count `--episodes` sets for the running command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeTarget {
    Collection,
    GrpoBudget,
    Evaluation,
}

impl RunConfig {
    /// Parses a TOML file. Seeds may only be given at the top level.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(vec![e.to_string()]))?;
        let mut problems = Vec::new();
        for path in SEEDED_SECTIONS {
            let mut node = Some(&value);
            for key in *path {
                node = node.and_then(|t| t.get(*key)).and_then(toml::Value::as_table);
            }
            if node.is_some_and(|t| t.contains_key("seed")) {
                problems.push(format!("[{}] sets `seed`; set it once at the top level", path.join(".")));
            }
        }
        if !problems.is_empty() {
            return Err(CliError::Config(problems));
        }
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        Self::from_toml(&text)
    }

    /// Writes the config in the form [`Self::from_toml`] accepts.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for path in SEEDED_SECTIONS {
            let mut node = Some(&mut table);
            for key in *path {
                node = node.and_then(|t| t.get_mut(*key)).and_then(toml::Value::as_table_mut);
            }
            if let Some(t) = node {
                t.remove("seed");
            }
        }
        toml::to_string(&table).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides, episodes: Option<(usize, EpisodeTarget)>) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(t) = o.tau {
            self.klst.labeling.tau = t;
        }
        if let Some(l) = o.lambda_high {
            self.grpo.reward.lambda_high = l;
        }
        if let Some(b) = o.beta {
            self.grpo.train.beta = b;
        }
        if let Some(g) = o.group_size {
            self.grpo.train.group_size = g;
        }
        match episodes {
            Some((n, EpisodeTarget::Collection)) => self.klst.episodes = n,
            Some((n, EpisodeTarget::GrpoBudget)) => self.grpo.train.episode_budget = n,
            Some((n, EpisodeTarget::Evaluation)) => self.eval.episodes = n,
            None => {}
        }
        self.env.seed = self.seed;
        self.klst.train.seed = self.seed;
        self.grpo.train.seed = self.seed;
    }

    /// Checks every section and their agreement; reports all problems at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        let mut push = |section: &str, r: Result<(), String>| {
            if let Err(e) = r {
                problems.push(format!("[{section}] {e}"));
            }
        };
        push("env", self.env.validate().map_err(|e| e.to_string()));
        push("router", self.router.validate().map_err(|e| e.to_string()));
        push("klst.labeling", self.klst.labeling.validate().map_err(|e| e.to_string()));
        push("klst.train", self.klst.train.validate().map_err(|e| e.to_string()));
        push("grpo.train", self.grpo.train.validate().map_err(|e| e.to_string()));
        push("grpo.reward", self.grpo.reward.validate());
        if self.klst.episodes == 0 {
            problems.push("[klst] episodes must be at least 1".into());
        }
        if self.eval.episodes == 0 {
            problems.push("[eval] episodes must be at least 1".into());
        }
        if self.eval.specs.is_empty() {
            problems.push("[eval] specs must not be empty".into());
        }
        let mut labels = BTreeMap::new();
        for (i, m) in self.eval.specs.iter().enumerate() {
            if let BaselineSpec::Random { p } = m.spec {
                if !(0.0..=1.0).contains(&p) {
                    problems.push(format!("[eval] specs[{i}]: random p = {p} outside [0, 1]"));
                }
            }
            if let Some(j) = labels.insert(m.label(), i) {
                problems.push(format!("[eval] specs[{j}] and specs[{i}] share the name `{}`", m.label()));
            }
        }
        if self.env.embed_dim != self.router.embed_dim {
            problems.push(format!(
                "env.embed_dim = {} but router.embed_dim = {}; the router reads the encoder's vectors",
                self.env.embed_dim, self.router.embed_dim
            ));
        }
        if self.router.num_precisions != 2 {
            problems.push(format!(
                "router.num_precisions = {} but the policy pair has 2 precision levels",
                self.router.num_precisions
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }

    /// Hash of each section, keyed by the names manifests use.
    pub fn section_hashes(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        out.insert("seed".to_string(), hash_json(&self.seed));
        out.insert("env".to_string(), hash_json(&self.env));
        out.insert("router".to_string(), hash_json(&self.router));
        out.insert(
            "klst.collect".to_string(),
            hash_json(&(self.klst.episodes, self.klst.first_episode)),
        );
        out.insert("klst.labeling".to_string(), hash_json(&self.klst.labeling));
        out.insert("klst.train".to_string(), hash_json(&self.klst.train));
        out.insert("grpo".to_string(), hash_json(&self.grpo));
        out.insert("eval".to_string(), hash_json(&self.eval));
        out
    }

    /// Hash of the whole resolved config, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        hash_json(&c)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}
