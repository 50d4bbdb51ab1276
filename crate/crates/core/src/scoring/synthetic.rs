//! Planted synthetic scorer.
//!
//! Every example carries a hidden informativeness `q`, a latent cluster
//! nested inside its label, and per-label base logits. The probability of
//! label `y` for a query `t` preceded by demonstrations `D` is
//!
//! ```text
//! logit(y | D, t) = base_t[y] + [y == gold(t)] * shift(D, t) + eps
//! shift(D, t)     = sum over clusters k present in D of
//!                   affinity(k, t) * max_{d in D, cluster(d) = k} q_d * pos(d)
//! ```
//!
//! where `affinity` is 1 for the query's own cluster, `affinity_same_label`
//! for other clusters of the query's label and `affinity_other_label`
//! otherwise; `pos(d) = 1 - order_decay * (n - 1 - i) / n` for a demo at
//! position `i` of `n`; and `eps` is a hash-seeded perturbation bounded by
//! `epsilon_max`. Demonstrations of one cluster saturate: only the strongest
//! counts. The content-free probe (no query) uses `content_free_bias[y] + eps`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ScoreBackend, ScoreError};
use crate::domain::{Dataset, PromptTemplate, Record, TemplateConfig};
use crate::error::Result;

/// Query text that stands for "no content" during calibration.
pub const CONTENT_FREE_PROBE: &str = "N/A";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub labels: Vec<String>,
    pub clusters_per_label: usize,
    pub seed: u64,
    pub epsilon_max: f64,
    /// `q = q_scale * u^q_power` with `u ~ U(0, 1)`.
    pub q_scale: f64,
    pub q_power: f64,
    pub affinity_same_label: f64,
    pub affinity_other_label: f64,
    pub order_decay: f64,
    /// Mean offset of the gold label's base logit.
    pub base_margin: f64,
    pub base_noise: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_train: 64,
            n_test: 200,
            labels: vec!["positive".into(), "negative".into()],
            clusters_per_label: 4,
            seed: 0,
            epsilon_max: 0.0,
            q_scale: 1.0,
            q_power: 1.0,
            affinity_same_label: 0.3,
            affinity_other_label: 0.1,
            order_decay: 0.2,
            base_margin: -0.5,
            base_noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEntry {
    pub text: String,
    pub label: usize,
    pub cluster: usize,
    pub q: f64,
    pub base: Vec<f64>,
}

/// Closed-form label model over a fixed set of texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub seed: u64,
    pub epsilon_max: f64,
    pub affinity_same_label: f64,
    pub affinity_other_label: f64,
    pub order_decay: f64,
    pub content_free_bias: Vec<f64>,
    pub labels: Vec<String>,
    pub template: TemplateConfig,
    /// Training entries first (`0..n_train`), then test entries.
    pub entries: Vec<PlantedEntry>,
    pub n_train: usize,
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln(logistic(x))`, stable for large `|x|`.
pub fn log_logistic(x: f64) -> f64 {
    let z = -x;
    -(z.max(0.0) + (-z.abs()).exp().ln_1p())
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl PlantedModel {
    pub fn entry(&self, index: usize) -> Option<&PlantedEntry> {
        self.entries.get(index)
    }

    fn affinity(&self, demo: &PlantedEntry, test: &PlantedEntry) -> f64 {
        if demo.cluster == test.cluster {
            1.0
        } else if demo.label == test.label {
            self.affinity_same_label
        } else {
            self.affinity_other_label
        }
    }

    fn position_weight(&self, i: usize, n: usize) -> f64 {
        1.0 - self.order_decay * (n - 1 - i) as f64 / n as f64
    }

    fn checked(&self, index: usize) -> std::result::Result<&PlantedEntry, ScoreError> {
        self.entries.get(index).ok_or_else(|| {
            ScoreError::Planted(format!("entry {index} outside the planted dataset"))
        })
    }

    /// Gold-logit shift produced by `demos` (entry indices, in order) on `test`.
    pub fn shift(&self, demos: &[usize], test: usize) -> std::result::Result<f64, ScoreError> {
        let t = self.checked(test)?;
        let n = demos.len();
        // cluster -> (strongest weighted q, affinity)
        let mut best: Vec<(usize, f64, f64)> = Vec::new();
        for (i, &d) in demos.iter().enumerate() {
            let e = self.checked(d)?;
            let strength = e.q * self.position_weight(i, n);
            match best.iter_mut().find(|(c, _, _)| *c == e.cluster) {
                Some(slot) => slot.1 = slot.1.max(strength),
                None => best.push((e.cluster, strength, self.affinity(e, t))),
            }
        }
        Ok(best.iter().map(|(_, s, a)| a * s).sum())
    }

    /// Seeded perturbation in `[-epsilon_max, epsilon_max]`.
    pub fn perturbation(&self, demos: &[usize], test: Option<usize>, label: usize) -> f64 {
        if self.epsilon_max == 0.0 {
            return 0.0;
        }
        let mut h = splitmix64(self.seed ^ 0x5eed);
        h = splitmix64(h ^ demos.len() as u64);
        for &d in demos {
            h = splitmix64(h ^ d as u64);
        }
        h = splitmix64(h ^ test.map_or(u64::MAX, |t| t as u64));
        h = splitmix64(h ^ label as u64);
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        self.epsilon_max * (2.0 * u - 1.0)
    }

    pub fn logit(
        &self,
        demos: &[usize],
        test: Option<usize>,
        label: usize,
    ) -> std::result::Result<f64, ScoreError> {
        if label >= self.labels.len() {
            return Err(ScoreError::Planted(format!("label {label} out of range")));
        }
        let eps = self.perturbation(demos, test, label);
        match test {
            None => {
                for &d in demos {
                    self.checked(d)?;
                }
                Ok(self.content_free_bias[label] + eps)
            }
            Some(t) => {
                let entry = self.checked(t)?;
                let shift = if label == entry.label {
                    self.shift(demos, t)?
                } else {
                    for &d in demos {
                        self.checked(d)?;
                    }
                    0.0
                };
                Ok(entry.base[label] + shift + eps)
            }
        }
    }

    pub fn probability(
        &self,
        demos: &[usize],
        test: Option<usize>,
        label: usize,
    ) -> std::result::Result<f64, ScoreError> {
        Ok(logistic(self.logit(demos, test, label)?))
    }

    /// Stable identity of the model parameters.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("planted model serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// A planted training set, test set, template and the model behind them.
#[derive(Debug, Clone)]
pub struct PlantedTestbed {
    pub train: Dataset,
    pub test: Dataset,
    pub template: PromptTemplate,
    pub model: Arc<PlantedModel>,
}

impl PlantedTestbed {
    /// Planted informativeness of a training example.
    pub fn q(&self, id: crate::domain::ExampleId) -> f64 {
        self.model.entries[id.0].q
    }

    pub fn backend(&self) -> Result<SyntheticBackend> {
        SyntheticBackend::new(self.model.clone())
    }
}

fn planted_template(labels: &[String]) -> TemplateConfig {
    let verbalizers = if labels.len() == 2 {
        vec!["great".to_string(), "terrible".to_string()]
    } else {
        (0..labels.len()).map(|k| format!("class{k}")).collect()
    };
    TemplateConfig {
        id: "planted".into(),
        pattern: "[INPUT] It was [VERBALIZER].".into(),
        verbalizers: labels.iter().cloned().zip(verbalizers).collect(),
        separator: "\n".into(),
    }
}

/// Draws a planted testbed. Training labels cycle through the label space so
/// every label has `n_train / |labels|` (±1) examples.
pub fn make_planted_dataset(cfg: &PlantedConfig) -> Result<PlantedTestbed> {
    use crate::error::Error;
    if cfg.labels.len() < 2 || cfg.clusters_per_label == 0 || cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::Config(
            "planted dataset needs ≥2 labels, ≥1 cluster and examples".into(),
        ));
    }
    if !(cfg.epsilon_max >= 0.0 && cfg.base_noise >= 0.0) {
        return Err(Error::Config(
            "epsilon_max and base_noise must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.base_noise).map_err(|e| Error::Config(e.to_string()))?;
    let n_labels = cfg.labels.len();
    let draw = |i: usize, text: String, rng: &mut ChaCha8Rng| {
        let label = i % n_labels;
        let cluster = label * cfg.clusters_per_label + rng.random_range(0..cfg.clusters_per_label);
        let q = cfg.q_scale * rng.random::<f64>().powf(cfg.q_power);
        let base = (0..n_labels)
            .map(|y| noise.sample(rng) + if y == label { cfg.base_margin } else { 0.0 })
            .collect();
        PlantedEntry {
            text,
            label,
            cluster,
            q,
            base,
        }
    };
    let mut entries: Vec<PlantedEntry> = (0..cfg.n_train)
        .map(|i| draw(i, format!("planted example {i:05}"), &mut rng))
        .collect();
    entries.extend((0..cfg.n_test).map(|i| draw(i, format!("planted query {i:05}"), &mut rng)));

    let template_cfg = planted_template(&cfg.labels);
    let model = PlantedModel {
        seed: cfg.seed,
        epsilon_max: cfg.epsilon_max,
        affinity_same_label: cfg.affinity_same_label,
        affinity_other_label: cfg.affinity_other_label,
        order_decay: cfg.order_decay,
        content_free_bias: vec![0.0; n_labels],
        labels: cfg.labels.clone(),
        template: template_cfg.clone(),
        entries,
        n_train: cfg.n_train,
    };
    let records = |range: std::ops::Range<usize>| -> Vec<Record> {
        model.entries[range]
            .iter()
            .map(|e| Record {
                text: e.text.clone(),
                label: cfg.labels[e.label].clone(),
            })
            .collect()
    };
    let train =
        Dataset::from_records(records(0..cfg.n_train), cfg.labels.clone(), "planted:train")?;
    let test = Dataset::from_records(
        records(cfg.n_train..cfg.n_train + cfg.n_test),
        cfg.labels.clone(),
        "planted:test",
    )?;
    let template = PromptTemplate::from_config(&template_cfg, &cfg.labels)?;
    Ok(PlantedTestbed {
        train,
        test,
        template,
        model: Arc::new(model),
    })
}

/// Scores rendered prompts by parsing them back into planted entries.
pub struct SyntheticBackend {
    model: Arc<PlantedModel>,
    template: PromptTemplate,
    index: HashMap<String, usize>,
    id: String,
}

impl SyntheticBackend {
    pub fn new(model: Arc<PlantedModel>) -> Result<Self> {
        let template = PromptTemplate::from_config(&model.template, &model.labels)?;
        let index = model
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.text.clone(), i))
            .collect();
        let id = format!("synthetic:{}:{}", model.seed, model.fingerprint());
        Ok(SyntheticBackend {
            model,
            template,
            index,
            id,
        })
    }

    pub fn model(&self) -> &PlantedModel {
        &self.model
    }

    fn lookup(&self, text: &str) -> std::result::Result<usize, ScoreError> {
        self.index.get(text).copied().ok_or_else(|| {
            ScoreError::Planted(format!("text {text:?} is not in the planted dataset"))
        })
    }

    /// Splits a context into demo entry indices and the query entry
    /// (`None` for the content-free probe).
    pub fn parse(
        &self,
        context: &str,
    ) -> std::result::Result<(Vec<usize>, Option<usize>), ScoreError> {
        let mut segments: Vec<&str> = context.split(self.template.separator()).collect();
        let query = segments.pop().unwrap_or_default();
        let query_text = self
            .template
            .query_input(query)
            .ok_or_else(|| ScoreError::Planted(format!("unparseable query segment {query:?}")))?;
        let test = if query_text == CONTENT_FREE_PROBE {
            None
        } else {
            Some(self.lookup(query_text)?)
        };
        let demos = segments
            .iter()
            .map(|s| {
                let text = self.template.demo_input(s).ok_or_else(|| {
                    ScoreError::Planted(format!("unparseable demo segment {s:?}"))
                })?;
                self.lookup(text)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok((demos, test))
    }
}

impl ScoreBackend for SyntheticBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn logprobs(
        &self,
        context: &str,
        completions: &[String],
    ) -> std::result::Result<Vec<f64>, ScoreError> {
        let (demos, test) = self.parse(context)?;
        let known = self.template.completions();
        completions
            .iter()
            .map(|c| {
                let label = known
                    .iter()
                    .position(|k| k == c)
                    .ok_or_else(|| ScoreError::Planted(format!("unknown completion {c:?}")))?;
                Ok(log_logistic(self.model.logit(&demos, test, label)?))
            })
            .collect()
    }
}
