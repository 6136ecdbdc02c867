//! Experiment configuration: a flat key=value file with bracketed sections,
//! parsed strictly (unknown keys are errors) and echoed back canonically so
//! a run can be reproduced from its own output directory.

use anyhow::{anyhow, bail, Context, Result};
use labelnoise_core::model::NoiseInit;
use labelnoise_core::text::SyntheticSpec;
use labelnoise_core::train::OptimizerKind;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Wonm,
    NmWoRegu,
    NmwRegu,
    TdwRegu,
    RandwRegu,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "wonm" => Ok(Variant::Wonm),
            "nmworegu" => Ok(Variant::NmWoRegu),
            "nmwregu" => Ok(Variant::NmwRegu),
            "tdwregu" => Ok(Variant::TdwRegu),
            "randwregu" => Ok(Variant::RandwRegu),
            other => bail!(
                "variant: {:?} is not one of wonm|nmworegu|nmwregu|tdwregu|randwregu",
                other
            ),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Wonm => "wonm",
            Variant::NmWoRegu => "nmworegu",
            Variant::NmwRegu => "nmwregu",
            Variant::TdwRegu => "tdwregu",
            Variant::RandwRegu => "randwregu",
        }
    }

    pub fn uses_noise_layer(&self) -> bool {
        !matches!(self, Variant::Wonm)
    }

    pub fn noise_init(&self) -> NoiseInit {
        match self {
            Variant::TdwRegu => NoiseInit::TrueDistribution,
            Variant::RandwRegu => NoiseInit::Random,
            _ => NoiseInit::IdentityGain,
        }
    }

    /// Default λ when the config leaves it unset.
    pub fn default_lambda(&self) -> f64 {
        match self {
            Variant::Wonm | Variant::NmWoRegu => 0.0,
            _ => 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataConfig {
    Files {
        train: PathBuf,
        dev: PathBuf,
        test: PathBuf,
        embeddings: Option<PathBuf>,
        min_count: usize,
    },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSpecKind {
    Uniform,
    Random,
    Custom,
}

impl NoiseSpecKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseSpecKind::Uniform => "uniform",
            NoiseSpecKind::Random => "random",
            NoiseSpecKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSection {
    pub kind: NoiseSpecKind,
    pub p: Option<f64>,
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub seed: u64,
    pub repeats: usize,
    pub data: DataConfig,
    pub noise: Option<NoiseSection>,
    pub d: usize,
    pub t_fixed: Option<usize>,
    pub windows: Vec<usize>,
    pub feature_maps: usize,
    pub dropout_keep: f64,
    pub lambda: f64,
    pub gain: Option<f64>,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

struct Section {
    name: &'static str,
    entries: BTreeMap<String, (usize, String)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("[{}] {}: {} ({:?})", self.name, key, e, v)),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            bail!("line {}: unknown key {:?} in section [{}]", line, key, self.name);
        }
        Ok(())
    }
}

fn parse_bool(section: &str, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => bail!("[{}] {}: expected true|false, got {:?}", section, key, other),
    }
}

fn split_sections(text: &str) -> Result<BTreeMap<String, BTreeMap<String, (usize, String)>>> {
    let known = ["run", "data", "noise", "model", "train"];
    let mut sections: BTreeMap<String, BTreeMap<String, (usize, String)>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            let name = line
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
                .ok_or_else(|| anyhow!("line {}: malformed section header {:?}", lineno, line))?
                .trim()
                .to_string();
            if !known.contains(&name.as_str()) {
                bail!("line {}: unknown section [{}]", lineno, name);
            }
            if sections.contains_key(&name) {
                bail!("line {}: duplicate section [{}]", lineno, name);
            }
            sections.insert(name.clone(), BTreeMap::new());
            current = Some(name);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value, got {:?}", lineno, line))?;
        let section = current
            .as_ref()
            .ok_or_else(|| anyhow!("line {}: key outside any [section]", lineno))?;
        let entries = sections.get_mut(section).expect("section exists");
        let key = key.trim().to_string();
        if entries.contains_key(&key) {
            bail!("line {}: duplicate key {:?} in [{}]", lineno, key, section);
        }
        entries.insert(key, (lineno, value.trim().to_string()));
    }
    Ok(sections)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut raw = split_sections(text)?;
    let mut section = |name: &'static str| Section {
        name,
        entries: raw.remove(name).unwrap_or_default(),
    };

    let mut run = section("run");
    let variant = Variant::parse(
        &run.take("variant")
            .ok_or_else(|| anyhow!("[run] variant is required"))?,
    )?;
    let seed = run.take_parsed::<u64>("seed")?.unwrap_or(0);
    let repeats = run.take_parsed::<usize>("repeats")?.unwrap_or(1);
    if repeats == 0 {
        bail!("[run] repeats must be at least 1");
    }
    run.finish()?;

    let mut data = section("data");
    let synthetic = data
        .take("synthetic")
        .map(|v| parse_bool("data", "synthetic", &v))
        .transpose()?
        .unwrap_or(false);
    let data_cfg = if synthetic {
        let k = data
            .take_parsed::<usize>("classes")?
            .ok_or_else(|| anyhow!("[data] classes is required for a synthetic corpus"))?;
        let n_train = data
            .take_parsed::<usize>("train_size")?
            .ok_or_else(|| anyhow!("[data] train_size is required for a synthetic corpus"))?;
        let mut spec = SyntheticSpec::with_train_size(k, n_train);
        if let Some(v) = data.take_parsed::<usize>("dev_size")? {
            spec.n_dev = v;
        }
        if let Some(v) = data.take_parsed::<usize>("test_size")? {
            spec.n_test = v;
        }
        if let Some(v) = data.take_parsed::<usize>("sentence_len")? {
            spec.sentence_len = v;
        }
        if let Some(v) = data.take_parsed::<usize>("vocab_size")? {
            spec.vocab_size = v;
        }
        if let Some(v) = data.take_parsed::<usize>("signal_tokens_per_class")? {
            spec.signal_tokens_per_class = v;
        }
        if let Some(v) = data.take_parsed::<f64>("filler_rate")? {
            spec.filler_rate = v;
        }
        DataConfig::Synthetic(spec)
    } else {
        let path = |key: &str, data: &mut Section| -> Result<PathBuf> {
            data.take(key)
                .map(PathBuf::from)
                .ok_or_else(|| anyhow!("[data] {} is required when synthetic = false", key))
        };
        DataConfig::Files {
            train: path("train", &mut data)?,
            dev: path("dev", &mut data)?,
            test: path("test", &mut data)?,
            embeddings: data.take("embeddings").map(PathBuf::from),
            min_count: data.take_parsed::<usize>("min_count")?.unwrap_or(1),
        }
    };
    data.finish()?;

    let mut noise = section("noise");
    let noise_cfg = match noise.take("kind").as_deref() {
        None | Some("none") => {
            if noise.take("p").is_some() || noise.take("matrix").is_some() {
                bail!("[noise] p/matrix given without a noise kind");
            }
            None
        }
        Some(kind) => {
            let kind = match kind {
                "uniform" => NoiseSpecKind::Uniform,
                "random" => NoiseSpecKind::Random,
                "custom" => NoiseSpecKind::Custom,
                other => bail!("[noise] kind: {:?} is not uniform|random|custom|none", other),
            };
            let p = noise.take_parsed::<f64>("p")?;
            let matrix = noise.take("matrix").map(PathBuf::from);
            match kind {
                NoiseSpecKind::Uniform | NoiseSpecKind::Random => {
                    let p = p.ok_or_else(|| anyhow!("[noise] p is required for kind {}", kind.as_str()))?;
                    if !(0.0..=1.0).contains(&p) {
                        bail!("[noise] p = {} outside [0, 1]", p);
                    }
                    if matrix.is_some() {
                        bail!("[noise] matrix only applies to kind custom");
                    }
                    Some(NoiseSection {
                        kind,
                        p: Some(p),
                        matrix: None,
                    })
                }
                NoiseSpecKind::Custom => {
                    if p.is_some() {
                        bail!("[noise] p does not apply to kind custom");
                    }
                    Some(NoiseSection {
                        kind,
                        p: None,
                        matrix: Some(
                            matrix.ok_or_else(|| anyhow!("[noise] matrix is required for kind custom"))?,
                        ),
                    })
                }
            }
        }
    };
    noise.finish()?;

    let mut model = section("model");
    let d = model.take_parsed::<usize>("d")?.unwrap_or(16);
    let t_fixed = model.take_parsed::<usize>("t_fixed")?;
    let windows = match model.take("windows") {
        None => vec![3, 4, 5],
        Some(v) => {
            let parsed: Result<Vec<usize>> = v
                .split(',')
                .map(|w| {
                    w.trim()
                        .parse::<usize>()
                        .map_err(|e| anyhow!("[model] windows: {} ({:?})", e, w))
                })
                .collect();
            parsed?
        }
    };
    let feature_maps = model.take_parsed::<usize>("feature_maps")?.unwrap_or(100);
    let dropout_keep = model.take_parsed::<f64>("dropout_keep")?.unwrap_or(0.5);
    let lambda_given = model.take_parsed::<f64>("lambda")?;
    let gain = model.take_parsed::<f64>("gain")?;
    model.finish()?;

    // Noise-layer fields are meaningless without a noise layer.
    if !variant.uses_noise_layer() {
        if lambda_given.is_some() {
            bail!("[model] lambda: variant wonm has no noise layer to regularize");
        }
        if gain.is_some() {
            bail!("[model] gain: variant wonm has no noise layer to initialize");
        }
    }
    let lambda = lambda_given.unwrap_or_else(|| variant.default_lambda());
    if lambda < 0.0 {
        bail!("[model] lambda must be nonnegative");
    }
    match variant {
        Variant::NmwRegu if lambda == 0.0 => {
            bail!("[model] lambda: variant nmwregu requires lambda > 0")
        }
        Variant::NmWoRegu if lambda != 0.0 => {
            bail!("[model] lambda: variant nmworegu requires lambda = 0")
        }
        Variant::TdwRegu if noise_cfg.is_none() => {
            bail!("[noise] variant tdwregu needs the injected noise distribution (kind + parameters)")
        }
        _ => {}
    }

    let mut train = section("train");
    let optimizer = match train.take("optimizer").as_deref().unwrap_or("adadelta") {
        "adadelta" => {
            if train.entries.contains_key("lr") || train.entries.contains_key("momentum") {
                bail!("[train] lr/momentum only apply to optimizer sgd");
            }
            OptimizerKind::Adadelta {
                rho: train.take_parsed::<f64>("rho")?.unwrap_or(0.95),
                eps: train.take_parsed::<f64>("eps")?.unwrap_or(1e-6),
            }
        }
        "sgd" => {
            if train.entries.contains_key("rho") || train.entries.contains_key("eps") {
                bail!("[train] rho/eps only apply to optimizer adadelta");
            }
            OptimizerKind::Sgd {
                lr: train.take_parsed::<f64>("lr")?.unwrap_or(0.1),
                momentum: train.take_parsed::<f64>("momentum")?.unwrap_or(0.0),
            }
        }
        other => bail!("[train] optimizer: {:?} is not adadelta|sgd", other),
    };
    let batch_size = train.take_parsed::<usize>("batch_size")?.unwrap_or(50);
    let max_epochs = train.take_parsed::<usize>("max_epochs")?.unwrap_or(50);
    let patience = train.take_parsed::<usize>("patience")?.unwrap_or(10);
    train.finish()?;
    if batch_size == 0 {
        bail!("[train] batch_size must be at least 1");
    }
    if patience == 0 {
        bail!("[train] patience must be at least 1");
    }

    Ok(ExperimentConfig {
        variant,
        seed,
        repeats,
        data: data_cfg,
        noise: noise_cfg,
        d,
        t_fixed,
        windows,
        feature_maps,
        dropout_keep,
        lambda,
        gain,
        optimizer,
        batch_size,
        max_epochs,
        patience,
    })
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("parsing config {}", path.display()))
}

impl ExperimentConfig {
    /// Canonical echo; parsing it back reproduces this config exactly.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "variant = {}", self.variant.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "repeats = {}", self.repeats);
        let _ = writeln!(s);
        let _ = writeln!(s, "[data]");
        match &self.data {
            DataConfig::Synthetic(spec) => {
                let _ = writeln!(s, "synthetic = true");
                let _ = writeln!(s, "classes = {}", spec.k);
                let _ = writeln!(s, "train_size = {}", spec.n_train);
                let _ = writeln!(s, "dev_size = {}", spec.n_dev);
                let _ = writeln!(s, "test_size = {}", spec.n_test);
                let _ = writeln!(s, "sentence_len = {}", spec.sentence_len);
                let _ = writeln!(s, "vocab_size = {}", spec.vocab_size);
                let _ = writeln!(s, "signal_tokens_per_class = {}", spec.signal_tokens_per_class);
                let _ = writeln!(s, "filler_rate = {}", spec.filler_rate);
            }
            DataConfig::Files {
                train,
                dev,
                test,
                embeddings,
                min_count,
            } => {
                let _ = writeln!(s, "synthetic = false");
                let _ = writeln!(s, "train = {}", train.display());
                let _ = writeln!(s, "dev = {}", dev.display());
                let _ = writeln!(s, "test = {}", test.display());
                if let Some(e) = embeddings {
                    let _ = writeln!(s, "embeddings = {}", e.display());
                }
                let _ = writeln!(s, "min_count = {}", min_count);
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "[noise]");
        match &self.noise {
            None => {
                let _ = writeln!(s, "kind = none");
            }
            Some(n) => {
                let _ = writeln!(s, "kind = {}", n.kind.as_str());
                if let Some(p) = n.p {
                    let _ = writeln!(s, "p = {}", p);
                }
                if let Some(m) = &n.matrix {
                    let _ = writeln!(s, "matrix = {}", m.display());
                }
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "d = {}", self.d);
        if let Some(t) = self.t_fixed {
            let _ = writeln!(s, "t_fixed = {}", t);
        }
        let windows: Vec<String> = self.windows.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "windows = {}", windows.join(","));
        let _ = writeln!(s, "feature_maps = {}", self.feature_maps);
        let _ = writeln!(s, "dropout_keep = {}", self.dropout_keep);
        if self.variant.uses_noise_layer() {
            let _ = writeln!(s, "lambda = {}", self.lambda);
            if let Some(g) = self.gain {
                let _ = writeln!(s, "gain = {}", g);
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "[train]");
        match self.optimizer {
            OptimizerKind::Adadelta { rho, eps } => {
                let _ = writeln!(s, "optimizer = adadelta");
                let _ = writeln!(s, "rho = {}", rho);
                let _ = writeln!(s, "eps = {}", eps);
            }
            OptimizerKind::Sgd { lr, momentum } => {
                let _ = writeln!(s, "optimizer = sgd");
                let _ = writeln!(s, "lr = {}", lr);
                let _ = writeln!(s, "momentum = {}", momentum);
            }
        }
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# sample experiment
[run]
variant = nmwregu
seed = 7
repeats = 3

[data]
synthetic = true
classes = 4
train_size = 400

[noise]
kind = uniform
p = 0.4

[model]
d = 8
windows = 2,3
feature_maps = 10
lambda = 0.01

[train]
optimizer = adadelta
batch_size = 25
max_epochs = 12
";

    #[test]
    fn parses_sample_config() {
        let cfg = parse_config(SAMPLE).unwrap();
        assert_eq!(cfg.variant, Variant::NmwRegu);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.repeats, 3);
        assert_eq!(cfg.windows, vec![2, 3]);
        assert_eq!(cfg.lambda, 0.01);
        assert_eq!(cfg.batch_size, 25);
        assert!(matches!(cfg.data, DataConfig::Synthetic(ref s) if s.k == 4 && s.n_train == 400));
        let n = cfg.noise.as_ref().unwrap();
        assert_eq!(n.kind, NoiseSpecKind::Uniform);
        assert_eq!(n.p, Some(0.4));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config(SAMPLE).unwrap();
        let echoed = cfg.to_config_string();
        let back = parse_config(&echoed).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let text = SAMPLE.replace("batch_size", "batchsize");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("batchsize"), "{}", err);
    }

    #[test]
    fn wonm_forbids_noise_layer_fields() {
        let text = SAMPLE.replace("variant = nmwregu", "variant = wonm");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("lambda"), "{}", err);
        let text = text.replace("lambda = 0.01", "gain = 4");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("gain"), "{}", err);
        let clean = text.replace("gain = 4", "");
        assert!(parse_config(&clean).is_ok());
    }

    #[test]
    fn nmwregu_requires_positive_lambda() {
        let text = SAMPLE.replace("lambda = 0.01", "lambda = 0");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("lambda"), "{}", err);
    }

    #[test]
    fn nmworegu_requires_zero_lambda() {
        let text = SAMPLE.replace("variant = nmwregu", "variant = nmworegu");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("lambda"), "{}", err);
        let ok = text.replace("lambda = 0.01", "lambda = 0");
        assert_eq!(parse_config(&ok).unwrap().lambda, 0.0);
    }

    #[test]
    fn tdwregu_needs_noise_section() {
        let text = SAMPLE
            .replace("variant = nmwregu", "variant = tdwregu")
            .replace("kind = uniform\np = 0.4", "kind = none");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("tdwregu"), "{}", err);
    }

    #[test]
    fn custom_kind_needs_matrix() {
        let text = SAMPLE.replace("kind = uniform\np = 0.4", "kind = custom");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("matrix"), "{}", err);
    }

    #[test]
    fn files_round_trip_with_embeddings() {
        let text = "\
[run]
variant = wonm
seed = 1

[data]
synthetic = false
train = data/train.tsv
dev = data/dev.tsv
test = data/test.tsv
embeddings = vec.txt
min_count = 2
";
        let cfg = parse_config(text).unwrap();
        let back = parse_config(&cfg.to_config_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn sgd_keys_rejected_under_adadelta() {
        let text = SAMPLE.replace("optimizer = adadelta", "optimizer = adadelta\nlr = 0.5");
        assert!(parse_config(&text).is_err());
        let text = SAMPLE.replace("optimizer = adadelta", "optimizer = sgd\nlr = 0.5");
        let cfg = parse_config(&text).unwrap();
        assert!(matches!(cfg.optimizer, OptimizerKind::Sgd { lr, .. } if lr == 0.5));
    }
}
