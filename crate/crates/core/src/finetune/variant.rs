use crate::error::Result;
use crate::interventions::{intervene, Baseline, Intervenable, InterventionConfig, InterventionResult, ProbedModel};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::AppendModel;

/// A fine-tuned model in any of the three variants, intervened on uniformly.
#[derive(Clone, Copy, Debug)]
pub enum FinetunedVariant<'a, T> {
    /// Head tuned for intervenability; edits go through the original probe.
    Intervenability(ProbedModel<'a, T>),
    /// Whole network tuned together with its probe.
    Multitask(ProbedModel<'a, T>),
    Append(AppendModel<'a, T>),
}

impl<'a, T: Scalar> FinetunedVariant<'a, T> {
    fn inner(&self) -> &dyn Intervenable<T> {
        match self {
            Self::Intervenability(m) | Self::Multitask(m) => m,
            Self::Append(m) => m,
        }
    }
}

impl<'a, T: Scalar> Intervenable<T> for FinetunedVariant<'a, T> {
    fn family(&self) -> &'static str {
        match self {
            Self::Intervenability(_) => "finetuned_intervenability",
            Self::Multitask(_) => "finetuned_multitask",
            Self::Append(_) => "finetuned_append",
        }
    }

    fn num_concepts(&self) -> usize {
        self.inner().num_concepts()
    }

    fn baseline(&self, x: &Matrix<T>) -> Result<Baseline<T>> {
        self.inner().baseline(x)
    }

    fn apply(&self, base: &Baseline<T>, c_prime: &Matrix<T>, config: &InterventionConfig) -> Result<InterventionResult<T>> {
        self.inner().apply(base, c_prime, config)
    }
}

pub fn intervene_on_finetuned<T: Scalar>(
    variant: &FinetunedVariant<'_, T>,
    x: &Matrix<T>,
    c_prime: &Matrix<T>,
    config: &InterventionConfig,
) -> Result<InterventionResult<T>> {
    intervene(variant, x, c_prime, config)
}
