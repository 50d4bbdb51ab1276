//! In-context prediction and accuracy measurement.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{
    render_context, Dataset, Example, ExampleId, LabelId, Permutation, PromptTemplate,
};
use crate::error::{Error, Result};
use crate::scoring::synthetic::CONTENT_FREE_PROBE;
use crate::scoring::{argmax, Scorer, ScorerRequest};

/// Floor applied to content-free probabilities before dividing.
pub const CALIBRATION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    Off,
    /// Divide by the probabilities obtained with the query replaced by
    /// a single content-free probe. An approximation of full contextual
    /// calibration.
    ContentFree,
}

impl Calibration {
    /// Label written into reports.
    pub fn report_name(self) -> &'static str {
        match self {
            Calibration::Off => "off",
            Calibration::ContentFree => "content_free(approx)",
        }
    }
}

impl fmt::Display for Calibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Calibration::Off => "off",
            Calibration::ContentFree => "content_free",
        })
    }
}

impl std::str::FromStr for Calibration {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Calibration::Off),
            "content_free" => Ok(Calibration::ContentFree),
            other => Err(Error::Config(format!("unknown calibration {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: Option<ExampleId>,
    pub raw_scores: Vec<f64>,
    pub calibrated_scores: Option<Vec<f64>>,
    pub predicted_label: LabelId,
}

/// Applies optional calibration and picks the label (ties → lowest id).
pub fn decide(raw: &[f64], content_free: Option<&[f64]>) -> (Option<Vec<f64>>, LabelId) {
    match content_free {
        None => (None, argmax(raw)),
        Some(cf) => {
            let calibrated: Vec<f64> = raw
                .iter()
                .zip(cf)
                .map(|(r, c)| r / c.max(CALIBRATION_FLOOR))
                .collect();
            let label = argmax(&calibrated);
            (Some(calibrated), label)
        }
    }
}

/// Renders prompts for a demonstration permutation drawn from `demo_source`.
pub struct Predictor<'a> {
    demo_source: &'a Dataset,
    template: &'a PromptTemplate,
    scorer: &'a Scorer,
    calibration: Calibration,
}

impl<'a> Predictor<'a> {
    pub fn new(
        demo_source: &'a Dataset,
        template: &'a PromptTemplate,
        scorer: &'a Scorer,
        calibration: Calibration,
    ) -> Self {
        Predictor {
            demo_source,
            template,
            scorer,
            calibration,
        }
    }

    fn request(&self, demos: &[&Example], input: &str) -> Result<ScorerRequest> {
        let context = render_context(self.template, demos, Some(input))?;
        Ok(ScorerRequest::new(context, self.template.completions())?)
    }

    /// Predicts a single input.
    pub fn predict(&self, permutation: &Permutation, input: &str) -> Result<Prediction> {
        let mut out = self.predict_inputs(&[permutation], &[(None, input)])?;
        Ok(out.pop().unwrap().pop().unwrap())
    }

    /// Predictions for every (permutation, input) combination, scored as one
    /// concurrent batch. The content-free probe is requested once per
    /// permutation. Output is indexed `[permutation][input]`.
    pub fn predict_inputs(
        &self,
        permutations: &[&Permutation],
        inputs: &[(Option<ExampleId>, &str)],
    ) -> Result<Vec<Vec<Prediction>>> {
        let mut requests = Vec::with_capacity(permutations.len() * (inputs.len() + 1));
        for perm in permutations {
            let demos = perm.resolve(self.demo_source)?;
            for (_, input) in inputs {
                requests.push(self.request(&demos, input)?);
            }
            if self.calibration == Calibration::ContentFree {
                requests.push(self.request(&demos, CONTENT_FREE_PROBE)?);
            }
        }
        let scored = self.scorer.score_batch(&requests)?;
        let stride = inputs.len() + usize::from(self.calibration == Calibration::ContentFree);
        Ok(scored
            .chunks(stride)
            .map(|chunk| {
                let cf = (self.calibration == Calibration::ContentFree)
                    .then(|| chunk[inputs.len()].probs.as_slice());
                inputs
                    .iter()
                    .zip(chunk)
                    .map(|((id, _), p)| {
                        let (calibrated_scores, predicted_label) = decide(&p.probs, cf);
                        Prediction {
                            example_id: *id,
                            raw_scores: p.probs.clone(),
                            calibrated_scores,
                            predicted_label,
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// Accuracy of each permutation on `items` (gold labels from `items`).
    pub fn accuracies(
        &self,
        permutations: &[&Permutation],
        items: &[&Example],
    ) -> Result<Vec<f64>> {
        if items.is_empty() {
            return Err(Error::Config(
                "cannot measure accuracy on an empty set".into(),
            ));
        }
        let inputs: Vec<(Option<ExampleId>, &str)> = items
            .iter()
            .map(|e| (Some(e.id), e.text.as_str()))
            .collect();
        let preds = self.predict_inputs(permutations, &inputs)?;
        Ok(preds
            .iter()
            .map(|row| {
                let correct = row
                    .iter()
                    .zip(items)
                    .filter(|(p, e)| p.predicted_label == e.label)
                    .count();
                correct as f64 / items.len() as f64
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBreakdown {
    pub label: String,
    pub total: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub per_label: Vec<LabelBreakdown>,
    pub predictions: Vec<Prediction>,
}

/// Accuracy of `permutation` (ids into `demo_source`) on `testset`.
pub fn evaluate_testset(
    permutation: &Permutation,
    demo_source: &Dataset,
    testset: &Dataset,
    template: &PromptTemplate,
    scorer: &Scorer,
    calibration: Calibration,
) -> Result<EvalResult> {
    if testset.is_empty() {
        return Err(Error::EmptyDataset(testset.source_path().to_string()));
    }
    let predictor = Predictor::new(demo_source, template, scorer, calibration);
    let inputs: Vec<(Option<ExampleId>, &str)> = testset
        .examples()
        .iter()
        .map(|e| (Some(e.id), e.text.as_str()))
        .collect();
    let predictions = predictor
        .predict_inputs(&[permutation], &inputs)?
        .pop()
        .unwrap();
    let mut per_label: Vec<LabelBreakdown> = testset
        .label_space()
        .iter()
        .map(|l| LabelBreakdown {
            label: l.clone(),
            total: 0,
            correct: 0,
        })
        .collect();
    let mut correct = 0;
    for (p, e) in predictions.iter().zip(testset.examples()) {
        per_label[e.label].total += 1;
        if p.predicted_label == e.label {
            per_label[e.label].correct += 1;
            correct += 1;
        }
    }
    Ok(EvalResult {
        accuracy: correct as f64 / testset.len() as f64,
        per_label,
        predictions,
    })
}
