use serde::{Deserialize, Serialize};

use crate::decoder::DecodeStageOutput;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Mean binary cross-entropy over all pixels of `sigmoid(logits)` against
/// `{0,1}` labels, probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &Tensor<T>) -> Result<Var> {
    tape.bce_with_logits(logits, labels.clone())
}

/// `main + Σ_k aux_k / K`; with no auxiliary terms this is `main`.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, main: Var, aux: &[Var]) -> Result<Var> {
    if aux.is_empty() {
        return Ok(main);
    }
    let weight = T::one() / T::from_usize(aux.len()).unwrap();
    let mut total = main;
    for &a in aux {
        let scaled = tape.scale(a, weight);
        total = tape.add(total, scaled)?;
    }
    Ok(total)
}

/// Scalar form of [`total_loss`].
pub fn total_loss_value(main: f64, aux: &[f64]) -> f64 {
    if aux.is_empty() {
        return main;
    }
    let weight = 1.0 / aux.len() as f64;
    aux.iter().fold(main, |acc, &a| acc + weight * a)
}

/// Loss terms of one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub main: f64,
    pub aux: Vec<f64>,
}

/// BCE on every head against full-resolution labels; the last head is the
/// main loss and the others are averaged in as auxiliary terms.
pub fn deep_supervision_loss<T: Real>(
    tape: &mut Tape<T>,
    outputs: &[DecodeStageOutput],
    labels: &Tensor<T>,
) -> Result<(Var, LossBreakdown)> {
    let (main_out, aux_out) = outputs
        .split_last()
        .ok_or_else(|| Error::invalid("no decoder outputs to supervise"))?;
    let main = bce_loss(tape, main_out.logit, labels)?;
    let aux = aux_out
        .iter()
        .map(|o| bce_loss(tape, o.logit, labels))
        .collect::<Result<Vec<_>>>()?;
    let total = total_loss(tape, main, &aux)?;
    let scalar = |v: Var, tape: &Tape<T>| tape.value(v).data()[0].to_f64().unwrap_or(f64::NAN);
    let breakdown = LossBreakdown {
        total: scalar(total, tape),
        main: scalar(main, tape),
        aux: aux.iter().map(|&a| scalar(a, tape)).collect(),
    };
    Ok((total, breakdown))
}
