use rayon::prelude::*;

use super::examples::Example;
use crate::model::{forward, Attention, ModelError, ModelParams};
use crate::tensor::{Gradients, Scalar, Tape};

/// Examples per parallel work unit. Chunk gradients are summed in chunk
/// order, so the result does not depend on the thread count.
const CHUNK: usize = 4;

/// Loss value of a batch and, when requested, its parameter gradients.
pub struct BatchLoss<F> {
    pub loss: F,
    pub grads: Option<Gradients<F>>,
}

/// Mean smoothed cross-entropy over every flagged position in the batch.
/// Each example's per-position mean is weighted by its share of the batch's
/// flagged positions before the backward sweep.
pub fn batch_loss<F: Scalar>(
    params: &ModelParams<F>,
    batch: &[Example<'_>],
    attention: Attention,
    smoothing: F,
    with_grads: bool,
) -> Result<BatchLoss<F>, ModelError> {
    let total: usize = batch.iter().map(|e| e.flags.iter().filter(|&&f| f).count()).sum();
    if total == 0 {
        return Err(crate::tensor::TensorError::EmptyLoss.into());
    }
    let total = F::from_usize(total).unwrap();
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = with_grads.then(|| Gradients::zeros_like(&params.tensors));
            let mut loss = F::zero();
            for ex in chunk {
                let count = ex.flags.iter().filter(|&&f| f).count();
                if count == 0 {
                    continue;
                }
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape, with_grads);
                let logits = forward(&mut tape, params, &bound, ex.regions, &ex.input, ex.level, attention)?;
                let ce = tape.cross_entropy(logits, &ex.target, &ex.flags, smoothing)?;
                let weighted = tape.scale(ce, F::from_usize(count).unwrap() / total)?;
                loss = loss + tape.value(weighted).data()[0];
                if let Some(g) = grads.as_mut() {
                    tape.backward(weighted, g)?;
                }
            }
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    let mut loss = F::zero();
    let mut grads: Option<Gradients<F>> = None;
    for (l, g) in parts {
        loss = loss + l;
        match (&mut grads, g) {
            (Some(acc), Some(g)) => acc.add_assign(&g),
            (None, Some(g)) => grads = Some(g),
            _ => {}
        }
    }
    Ok(BatchLoss { loss, grads })
}

/// Masked-LM objective under bidirectional attention.
pub fn masked_step<F: Scalar>(
    params: &ModelParams<F>,
    batch: &[Example<'_>],
    smoothing: F,
) -> Result<BatchLoss<F>, ModelError> {
    batch_loss(params, batch, Attention::Bidirectional, smoothing, true)
}

/// Teacher-forcing objective under causal attention.
pub fn teacher_forcing_step<F: Scalar>(
    params: &ModelParams<F>,
    batch: &[Example<'_>],
    smoothing: F,
) -> Result<BatchLoss<F>, ModelError> {
    batch_loss(params, batch, Attention::Causal, smoothing, true)
}
