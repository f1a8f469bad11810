use std::path::{Path, PathBuf};

use bayes_ltv::ant::{AntScenario, SweepConfig};
use bayes_ltv::gp::RbfKernelSpec;
use bayes_ltv::ltv::LtvFixtureSpec;
use bayes_ltv::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Lti,
    Ltv,
    Ant,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Lti => "lti",
            Kind::Ltv => "ltv",
            Kind::Ant => "ant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    White,
    Pulses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtiSection {
    pub n: usize,
    pub p: usize,
    pub snr_db: f64,
    pub sample_rate: f64,
    pub n_pairs: usize,
    pub input: InputKind,
    /// Pulse count when `input` is `pulses`.
    pub n_pulses: usize,
    pub predict_samples: usize,
    pub ccf_max_lag: usize,
    pub ccf_samples: usize,
    pub freq_points: usize,
    pub freq_samples: usize,
    /// Pair counts of the tightening table written by `compare`.
    pub pair_counts: Vec<usize>,
}

impl Default for LtiSection {
    fn default() -> Self {
        Self {
            n: 2048,
            p: 16,
            snr_db: 0.0,
            sample_rate: 1.0,
            n_pairs: 1,
            input: InputKind::White,
            n_pulses: 64,
            predict_samples: 200,
            ccf_max_lag: 24,
            ccf_samples: 10_000,
            freq_points: 129,
            freq_samples: 1000,
            pair_counts: vec![1, 2, 4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtvSection {
    pub fixture: LtvFixtureSpec,
    pub p: usize,
    pub window: usize,
    pub stride: usize,
    pub kernel: RbfKernelSpec,
    pub train: TrainConfig,
    /// Lengthscales compared by `compare`.
    pub lengthscales: Vec<f64>,
}

impl Default for LtvSection {
    fn default() -> Self {
        Self {
            fixture: LtvFixtureSpec::default(),
            p: 8,
            window: 32,
            stride: 16,
            kernel: RbfKernelSpec::new(8.0, 1.0 / 8.0),
            train: TrainConfig {
                batch_replicas: 64,
                ..TrainConfig::default()
            },
            lengthscales: vec![8.0, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AntSection {
    pub scenario: AntScenario,
    pub sweep: SweepConfig,
    pub quantize: bool,
    pub pair_counts: Vec<usize>,
    /// Scenario seeds of the comparison sweep, each mixed with the root seed.
    pub seeds: Vec<u64>,
}

impl Default for AntSection {
    fn default() -> Self {
        Self {
            scenario: AntScenario::default(),
            sweep: SweepConfig::default(),
            quantize: false,
            pair_counts: vec![25, 50, 100, 200],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelftestSection {
    pub samples: usize,
    pub instances: usize,
}

impl Default for SelftestSection {
    fn default() -> Self {
        Self {
            samples: 100_000,
            instances: 20,
        }
    }
}

/// Everything a command needs. Sections for other kinds are carried but
/// unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub kind: Kind,
    pub seed: u64,
    pub out: PathBuf,
    /// Optimizer settings for LTI and MIR fits.
    pub train: TrainConfig,
    pub lti: LtiSection,
    pub ltv: LtvSection,
    pub ant: AntSection,
    pub selftest: SelftestSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: Kind::Lti,
            seed: 0,
            out: PathBuf::from("out"),
            train: TrainConfig::default(),
            lti: LtiSection::default(),
            ltv: LtvSection::default(),
            ant: AntSection::default(),
            selftest: SelftestSection::default(),
        }
    }
}

fn positive(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        return Err(CliError::config(format!("{name} must be at least 1")));
    }
    Ok(())
}

fn ascending(name: &str, v: &[usize]) -> CliResult<()> {
    if v.is_empty() || v[0] == 0 || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::config(format!("{name} must be positive and strictly ascending")));
    }
    Ok(())
}

impl RunConfig {
    /// Checks every section, whatever the kind.
    pub fn validate(&self) -> CliResult<()> {
        self.train.validate().map_err(|e| CliError::from(e).within("train"))?;

        let l = &self.lti;
        positive("lti.p", l.p)?;
        positive("lti.n_pairs", l.n_pairs)?;
        positive("lti.predict_samples", l.predict_samples)?;
        positive("lti.ccf_samples", l.ccf_samples)?;
        positive("lti.freq_points", l.freq_points)?;
        positive("lti.freq_samples", l.freq_samples)?;
        if l.n <= l.p {
            return Err(CliError::config("lti.n must exceed lti.p"));
        }
        if l.ccf_max_lag >= l.n {
            return Err(CliError::config("lti.ccf_max_lag must be below lti.n"));
        }
        if !(l.sample_rate.is_finite() && l.sample_rate > 0.0) {
            return Err(CliError::config("lti.sample_rate must be positive"));
        }
        if l.snr_db.is_nan() {
            return Err(CliError::config("lti.snr_db must be a number"));
        }
        if l.input == InputKind::Pulses && (l.n_pulses == 0 || l.n_pulses > l.n) {
            return Err(CliError::config("lti.n_pulses must be in 1..=lti.n"));
        }
        ascending("lti.pair_counts", &l.pair_counts)?;

        let v = &self.ltv;
        positive("ltv.p", v.p)?;
        v.train.validate().map_err(|e| CliError::from(e).within("ltv.train"))?;
        v.kernel.validate().map_err(|e| CliError::from(e).within("ltv.kernel"))?;
        if v.window < v.p {
            return Err(CliError::config("ltv.window must be at least ltv.p"));
        }
        if v.stride == 0 || v.stride > v.window {
            return Err(CliError::config("ltv.stride must be in 1..=ltv.window"));
        }
        if v.fixture.n < v.window {
            return Err(CliError::config("ltv.fixture.n must be at least ltv.window"));
        }
        if !(v.fixture.sample_rate.is_finite() && v.fixture.sample_rate > 0.0) {
            return Err(CliError::config("ltv.fixture.sample_rate must be positive"));
        }
        let (a, b) = (v.fixture.first_transition, v.fixture.second_transition);
        if !(a.0 < a.1 && a.1 <= b.0 && b.0 < b.1 && b.1 <= v.fixture.n) {
            return Err(CliError::config(
                "ltv.fixture transitions must be ordered and lie inside ltv.fixture.n",
            ));
        }
        if v.lengthscales.is_empty() || v.lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(CliError::config("ltv.lengthscales must be nonempty and positive"));
        }

        let a = &self.ant;
        a.scenario.validate().map_err(|e| CliError::from(e).within("ant.scenario"))?;
        a.sweep.validate().map_err(|e| CliError::from(e).within("ant.sweep"))?;
        ascending("ant.pair_counts", &a.pair_counts)?;
        if a.seeds.is_empty() {
            return Err(CliError::config("ant.seeds must not be empty"));
        }
        if a.sweep.ccf_window > a.scenario.pair_length {
            return Err(CliError::config("ant.sweep.ccf_window exceeds ant.scenario.pair_length"));
        }

        positive("selftest.samples", self.selftest.samples.saturating_sub(1))
            .map_err(|_| CliError::config("selftest.samples must be at least 2"))?;
        positive("selftest.instances", self.selftest.instances)?;
        Ok(())
    }
}

/// Applies `path.to.field=value`. The value is read as JSON when it parses,
/// and as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects path=value, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("{}: not a section", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(CliError::config(format!("unknown config field {}", parts[..=i].join("."))));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    Err(CliError::config("empty --set path"))
}

fn from_value(v: Value) -> CliResult<RunConfig> {
    serde_json::from_value(v).map_err(|e| CliError::config(format!("config: {e}")))
}

/// Defaults, then the config file, then `--set` overrides.
pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let base = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            from_value(v)?
        }
        None => RunConfig::default(),
    };
    // round-trip through the typed config so every field is present
    let mut v = serde_json::to_value(&base).expect("config serializes");
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    from_value(v)
}
