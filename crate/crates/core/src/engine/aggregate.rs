use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Size-weighted mean of client models, `sum_n (|D_n| / sum_i |D_i|) M_n`.
pub fn fedavg(models: &[ParamVector], sizes: &[usize]) -> Result<ParamVector> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("fedavg needs at least one model"))?;
    if models.len() != sizes.len() {
        return Err(Error::shape(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::invalid("total client size is zero"));
    }
    let mut out = first.zeros_like();
    for (m, &n) in models.iter().zip(sizes) {
        out.axpy(n as f64 / total as f64, m)?;
    }
    Ok(out)
}
