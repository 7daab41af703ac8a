use super::{DecodeConfig, GeneratorBackend, TrainingPair, ANSWER_MARK, HISTORY_MARK};
use crate::error::Result;
use crate::text::detokenize;

/// Untrained stand-in that fills a fixed template with the answer segment
/// of the input. `{answer}` in the template is replaced.
#[derive(Debug, Clone)]
pub struct TemplateGenerator {
    template: String,
}

impl Default for TemplateGenerator {
    fn default() -> Self {
        Self::new("what about {answer} ?")
    }
}

impl TemplateGenerator {
    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
        }
    }

    fn answer_segment(input: &[String]) -> &[String] {
        let start = input
            .iter()
            .position(|t| t == ANSWER_MARK)
            .map_or(0, |i| i + 1);
        let end = input[start..]
            .iter()
            .position(|t| t == HISTORY_MARK)
            .map_or(input.len(), |i| start + i);
        &input[start..end]
    }
}

impl GeneratorBackend for TemplateGenerator {
    fn prepare(&mut self, _pairs: &[TrainingPair], _seed: u64) -> Result<()> {
        Ok(())
    }

    fn loss(&self, _pair: &TrainingPair) -> f64 {
        0.0
    }

    fn train_batch(&mut self, _batch: &[&TrainingPair]) -> Result<f64> {
        Ok(0.0)
    }

    fn generate(&self, input: &[String], decode: &DecodeConfig) -> Result<String> {
        let answer = detokenize(Self::answer_segment(input));
        if answer.is_empty() {
            return Ok(String::new());
        }
        let filled = self.template.replace("{answer}", &answer);
        let words: Vec<&str> = filled
            .split_whitespace()
            .take(decode.max_new_tokens)
            .collect();
        Ok(detokenize(&words))
    }
}
