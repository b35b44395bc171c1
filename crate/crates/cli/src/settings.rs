//! Per-command configuration schemas and their typed, resolved form.

use std::path::PathBuf;

use sleepnet::config::{ConfigError, KvConfig};
use sleepnet::data::{SynthConfig, SYNTH_KEYS};
use sleepnet::eval::{SplitKind, SweepParam};
use sleepnet::models::{ModelConfig, ModelKind};
use sleepnet::nn::{LossKind, TrainConfig};
use sleepnet::robustness::{Scenario, DEFAULT_FEATURE_PERCENTS, DEFAULT_PERTURB_REPEATS, DEFAULT_TRAIN_REPEATS};

use crate::Command;

const EXPERIMENT_KEYS: [&str; 15] = [
    "data",
    "eta",
    "seq_len",
    "models",
    "trials",
    "lr",
    "patience",
    "min_delta",
    "max_epochs",
    "batch_size",
    "dropout",
    "loss",
    "graph_hidden",
    "graph_layers",
    "lstm_hidden",
];

const EXTRA_MODEL_KEYS: [&str; 1] = ["head_hidden"];

pub fn allowed_keys(cmd: Command) -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = match cmd {
        Command::Synth => return SYNTH_KEYS.to_vec(),
        Command::Graphs => {
            return vec!["events", "roster", "kind", "window_start", "window_end", "w1", "w2", "seed"]
        }
        _ => SYNTH_KEYS.to_vec(),
    };
    keys.extend(EXPERIMENT_KEYS);
    keys.extend(EXTRA_MODEL_KEYS);
    keys.extend(match cmd {
        Command::Train => vec!["split"],
        Command::Evaluate => vec!["splits", "loco_trials", "sweep_param", "sweep_values"],
        Command::Sweep => vec!["sweep_param", "sweep_values"],
        Command::Robustness => vec![
            "scenarios",
            "grid_features",
            "grid_users",
            "grid_days",
            "feature_percent",
            "train_repeats",
            "perturb_repeats",
        ],
        Command::Saliency => vec!["saliency_model", "saliency_folds"],
        Command::Ablate => vec!["variants", "split", "loco_trials"],
        Command::Synth | Command::Graphs => vec![],
    });
    keys
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_loss(s: &str) -> Result<LossKind, ConfigError> {
    match s {
        "bce" => Ok(LossKind::Bce),
        "l2" => Ok(LossKind::L2),
        _ => Err(invalid("loss", "expected bce or l2")),
    }
}

fn loss_name(l: LossKind) -> &'static str {
    match l {
        LossKind::Bce => "bce",
        LossKind::L2 => "l2",
    }
}

fn parse_sweep(s: &str) -> Result<SweepParam, ConfigError> {
    match s {
        "eta" => Ok(SweepParam::Eta),
        "seq_len" => Ok(SweepParam::SeqLen),
        _ => Err(invalid("sweep_param", "expected eta or seq_len")),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone)]
pub struct GraphSettings {
    pub events: PathBuf,
    pub roster: Option<PathBuf>,
    pub kind: String,
    pub window_start: Option<i64>,
    pub window_end: Option<i64>,
    pub w1: f64,
    pub w2: f64,
}

/// Fully resolved settings of one run; absent keys take defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    pub command: Command,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub synth: SynthConfig,
    pub eta: usize,
    pub seq_len: usize,
    pub models: Vec<ModelKind>,
    pub trials: usize,
    /// Held-out cohorts per LOCO run; all of them when unset.
    pub loco_trials: Option<usize>,
    pub train: TrainConfig,
    pub graph_hidden: usize,
    pub graph_layers: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub split: SplitKind,
    pub splits: Vec<SplitKind>,
    pub sweep_param: Option<SweepParam>,
    pub sweep_values: Vec<usize>,
    pub scenarios: Vec<Scenario>,
    pub grid_features: Vec<usize>,
    pub grid_users: Vec<usize>,
    pub grid_days: Vec<usize>,
    pub feature_percent: usize,
    pub train_repeats: usize,
    pub perturb_repeats: usize,
    pub saliency_model: ModelKind,
    pub saliency_folds: Option<usize>,
    pub variants: Vec<ModelKind>,
    pub graphs: Option<GraphSettings>,
}

impl Settings {
    /// Validate `kv` against the command's schema. `seed_override` wins over
    /// the file's `seed`.
    pub fn resolve(command: Command, kv: &KvConfig, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        kv.reject_unknown(&allowed_keys(command))?;
        let seed = match seed_override {
            Some(s) => s,
            None => kv.get_or("seed", 0u64)?,
        };
        let mut synth = SynthConfig::from_kv_lenient(kv)?;
        synth.seed = seed;
        let train_default = TrainConfig::default();
        let train = TrainConfig {
            lr: kv.get_or("lr", train_default.lr)?,
            patience: kv.get_or("patience", train_default.patience)?,
            min_delta: kv.get_or("min_delta", train_default.min_delta)?,
            max_epochs: kv.get_or("max_epochs", train_default.max_epochs)?,
            batch_size: kv.get_or("batch_size", train_default.batch_size)?,
            seed,
            dropout_rate: kv.get_or("dropout", train_default.dropout_rate)?,
            loss: match kv.raw("loss") {
                Some(s) => parse_loss(s)?,
                None => train_default.loss,
            },
        };
        train.validate().map_err(|e| invalid("training", e.to_string()))?;
        let models = kv.get_list("models")?.unwrap_or_else(|| ModelKind::ALL.to_vec());
        if models.is_empty() {
            return Err(invalid("models", "at least one model"));
        }
        let scenarios = match kv.get_list::<usize>("scenarios")? {
            Some(v) => v
                .into_iter()
                .map(|n| Scenario::from_number(n).ok_or_else(|| invalid("scenarios", "scenarios are 1, 2 or 3")))
                .collect::<Result<Vec<_>, _>>()?,
            None => Scenario::ALL.to_vec(),
        };
        let graphs = if command == Command::Graphs {
            let kind: String = kv.get_or("kind", "sms".to_string())?;
            if kind != "sms" && kind != "call" {
                return Err(invalid("kind", "expected call or sms"));
            }
            Some(GraphSettings {
                events: kv.require::<String>("events")?.into(),
                roster: kv.get::<String>("roster")?.map(PathBuf::from),
                kind,
                window_start: kv.get("window_start")?,
                window_end: kv.get("window_end")?,
                w1: kv.get_or("w1", sleepnet::commgraph::SMS_W1)?,
                w2: kv.get_or("w2", sleepnet::commgraph::SMS_W2)?,
            })
        } else {
            None
        };
        let s = Self {
            command,
            seed,
            data: kv.get::<String>("data")?.map(PathBuf::from),
            synth,
            eta: kv.get_or("eta", 15)?,
            seq_len: kv.get_or("seq_len", 3)?,
            models,
            trials: kv.get_or("trials", 25)?,
            loco_trials: kv.get("loco_trials")?,
            train,
            graph_hidden: kv.get_or("graph_hidden", 32)?,
            graph_layers: kv.get_or("graph_layers", 2)?,
            lstm_hidden: kv.get_or("lstm_hidden", 32)?,
            head_hidden: kv.get_or("head_hidden", 16)?,
            split: kv.get_or("split", SplitKind::Random)?,
            splits: kv
                .get_list("splits")?
                .unwrap_or_else(|| vec![SplitKind::Random, SplitKind::Loco]),
            sweep_param: kv.raw("sweep_param").map(parse_sweep).transpose()?,
            sweep_values: kv.get_list("sweep_values")?.unwrap_or_default(),
            scenarios,
            grid_features: kv
                .get_list("grid_features")?
                .unwrap_or_else(|| DEFAULT_FEATURE_PERCENTS.to_vec()),
            grid_users: kv.get_list("grid_users")?.unwrap_or_else(|| vec![0, 3, 6, 9, 12]),
            grid_days: kv.get_list("grid_days")?.unwrap_or_else(|| vec![0, 1, 2]),
            feature_percent: kv.get_or("feature_percent", 50)?,
            train_repeats: kv.get_or("train_repeats", DEFAULT_TRAIN_REPEATS)?,
            perturb_repeats: kv.get_or("perturb_repeats", DEFAULT_PERTURB_REPEATS)?,
            saliency_model: kv.get_or("saliency_model", ModelKind::GanLstm)?,
            saliency_folds: kv.get("saliency_folds")?,
            variants: kv
                .get_list("variants")?
                .unwrap_or_else(|| vec![ModelKind::GanLstm, ModelKind::GcnLstm]),
            graphs,
        };
        s.check()?;
        Ok(s)
    }

    fn echo_loco_trials(&self, kv: &mut KvConfig) {
        if let Some(t) = self.loco_trials {
            kv.set("loco_trials", t);
        }
    }

    /// Trial count of one split kind: `trials` for random splits, one trial
    /// per held-out cohort (never repeating a cohort) for LOCO.
    pub fn trials_for(&self, split: SplitKind, n_cohorts: usize) -> Result<usize, ConfigError> {
        match split {
            SplitKind::Random => Ok(self.trials),
            SplitKind::Loco => match self.loco_trials {
                None => Ok(n_cohorts),
                Some(t) if t <= n_cohorts => Ok(t),
                Some(t) => Err(invalid(
                    "loco_trials",
                    format!("{t} held-out cohorts requested but the data has {n_cohorts}"),
                )),
            },
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.eta == 0 {
            return Err(invalid("eta", "must be positive"));
        }
        if self.seq_len == 0 {
            return Err(invalid("seq_len", "must be positive"));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "must be positive"));
        }
        if self.loco_trials == Some(0) || self.saliency_folds == Some(0) {
            return Err(invalid("loco_trials", "held-out cohort counts must be positive"));
        }
        if self.command == Command::Sweep && (self.sweep_param.is_none() || self.sweep_values.is_empty()) {
            return Err(invalid("sweep_param", "sweep needs sweep_param and sweep_values"));
        }
        if self.sweep_param.is_some() && self.sweep_values.is_empty() {
            return Err(invalid("sweep_values", "needed with sweep_param"));
        }
        if self.train_repeats == 0 || self.perturb_repeats == 0 {
            return Err(invalid("train_repeats", "repeat counts must be positive"));
        }
        if self.feature_percent >= 100 || self.grid_features.iter().any(|&p| p >= 100) {
            return Err(invalid("grid_features", "percentages must stay below 100"));
        }
        if let Some(bad) = self
            .variants
            .iter()
            .find(|v| !matches!(v, ModelKind::GanLstm | ModelKind::GcnLstm))
        {
            return Err(invalid("variants", format!("{bad} has no graph branch to keep")));
        }
        if self.data.is_none() && self.command != Command::Graphs {
            self.synth.validate().map_err(|e| invalid("synthetic data", e.to_string()))?;
        }
        Ok(())
    }

    pub fn model_config(&self, features: usize) -> ModelConfig {
        ModelConfig {
            graph_hidden: self.graph_hidden,
            graph_layers: self.graph_layers,
            lstm_hidden: self.lstm_hidden,
            head_hidden: self.head_hidden,
            dropout: self.train.dropout_rate,
            ..ModelConfig::new(features, self.eta, self.seq_len)
        }
    }

    /// Every key of the command's schema with its effective value.
    pub fn echo(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        if self.command == Command::Graphs {
            let g = self.graphs.as_ref().expect("graphs settings");
            kv.set("events", g.events.display());
            if let Some(r) = &g.roster {
                kv.set("roster", r.display());
            }
            kv.set("kind", &g.kind);
            if let Some(v) = g.window_start {
                kv.set("window_start", v);
            }
            if let Some(v) = g.window_end {
                kv.set("window_end", v);
            }
            kv.set("w1", g.w1);
            kv.set("w2", g.w2);
            kv.set("seed", self.seed);
            return kv;
        }
        let synth = self.synth.to_kv();
        for k in synth.keys() {
            kv.set(k, synth.raw(k).expect("own key"));
        }
        if self.command == Command::Synth {
            return kv;
        }
        if let Some(d) = &self.data {
            kv.set("data", d.display());
        }
        kv.set("eta", self.eta);
        kv.set("seq_len", self.seq_len);
        kv.set("models", join(&self.models));
        kv.set("trials", self.trials);
        kv.set("lr", self.train.lr);
        kv.set("patience", self.train.patience);
        kv.set("min_delta", self.train.min_delta);
        kv.set("max_epochs", self.train.max_epochs);
        kv.set("batch_size", self.train.batch_size);
        kv.set("dropout", self.train.dropout_rate);
        kv.set("loss", loss_name(self.train.loss));
        kv.set("graph_hidden", self.graph_hidden);
        kv.set("graph_layers", self.graph_layers);
        kv.set("lstm_hidden", self.lstm_hidden);
        kv.set("head_hidden", self.head_hidden);
        match self.command {
            Command::Train => kv.set("split", self.split.name()),
            Command::Evaluate | Command::Sweep => {
                if self.command == Command::Evaluate {
                    kv.set("splits", self.splits.iter().map(|s| s.name()).collect::<Vec<_>>().join(","));
                    self.echo_loco_trials(&mut kv);
                }
                if let Some(p) = self.sweep_param {
                    kv.set("sweep_param", p.name());
                    kv.set("sweep_values", join(&self.sweep_values));
                }
            }
            Command::Robustness => {
                kv.set("scenarios", join(&self.scenarios.iter().map(|s| s.number()).collect::<Vec<_>>()));
                kv.set("grid_features", join(&self.grid_features));
                kv.set("grid_users", join(&self.grid_users));
                kv.set("grid_days", join(&self.grid_days));
                kv.set("feature_percent", self.feature_percent);
                kv.set("train_repeats", self.train_repeats);
                kv.set("perturb_repeats", self.perturb_repeats);
            }
            Command::Saliency => {
                kv.set("saliency_model", self.saliency_model);
                if let Some(f) = self.saliency_folds {
                    kv.set("saliency_folds", f);
                }
            }
            Command::Ablate => {
                kv.set("variants", join(&self.variants));
                kv.set("split", self.split.name());
                self.echo_loco_trials(&mut kv);
            }
            Command::Synth | Command::Graphs => {}
        }
        kv
    }
}
