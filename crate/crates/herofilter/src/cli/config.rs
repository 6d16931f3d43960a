use std::fs;
use std::path::Path;

use herofilter_core::graph::NormMode;
use herofilter_core::spectral::{
    band_filter, filter_response, low_pass_reference, Activation, PolyFilter,
};
use herofilter_core::synth::{default_bands, SynthSpec};
use herofilter_core::train::TrainConfig;
use herofilter_core::SpectralDecomposition;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CliError;

/// Filter used by `analyze` and `bounds`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    /// `1 / (1 + (1 − λ))`
    #[default]
    Lowpass,
    /// Indicator of `band_lo ≤ 1 − λ < band_hi`.
    Band,
    /// Polynomial filter with every weight equal to `init`.
    Poly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub filter: FilterKind,
    pub band_lo: f64,
    pub band_hi: f64,
    pub order: usize,
    pub init: f64,
    pub activation: Activation,
    pub norm_mode: NormMode,
    pub eps: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            filter: FilterKind::Lowpass,
            band_lo: 0.0,
            band_hi: 0.4,
            order: 2,
            init: 1.0,
            activation: Activation::Tanh,
            norm_mode: NormMode::Sym,
            eps: herofilter_core::heterophily::DEFAULT_EPS,
        }
    }
}

impl AnalysisConfig {
    pub fn response(&self, dec: &SpectralDecomposition) -> herofilter_core::Result<Vec<f64>> {
        let lambda = &dec.eigenvalues;
        match self.filter {
            FilterKind::Lowpass => Ok(low_pass_reference(lambda)),
            FilterKind::Band => band_filter(lambda, self.band_lo, self.band_hi),
            FilterKind::Poly => {
                let f = PolyFilter::constant(self.order, lambda.len(), self.init, self.activation)?;
                filter_response(&f, lambda)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub h_values: Vec<f64>,
    pub bands: Vec<(f64, f64)>,
    pub seeds: Vec<u64>,
    pub synth: SynthSpec,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            h_values: (1..=9).map(|i| i as f64 / 10.0).collect(),
            bands: default_bands(),
            seeds: vec![0],
            synth: SynthSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Flag values that were actually given, keyed by config field.
#[derive(Debug, Default)]
pub(super) struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, key: &str, value: &Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(
                key.to_string(),
                serde_json::to_value(v).expect("flag values serialize"),
            );
        }
        self
    }

    pub fn nest(&mut self, key: &str, inner: Overrides) -> &mut Self {
        if !inner.0.is_empty() {
            self.0.insert(key.to_string(), Value::Object(inner.0));
        }
        self
    }
}

fn merge_into(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_into(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the config file, then flags.
pub(super) fn resolve<T>(defaults: &T, file: Option<&Path>, flags: Overrides) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned,
{
    let mut value = serde_json::to_value(defaults).expect("defaults serialize");
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text).map_err(|e| {
            CliError::Usage(format!("config {} is not valid JSON: {e}", path.display()))
        })?;
        if !parsed.is_object() {
            return Err(CliError::Usage(format!(
                "config {} must be a JSON object",
                path.display()
            )));
        }
        merge_into(&mut value, parsed);
    }
    merge_into(&mut value, Value::Object(flags.0));
    serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}
