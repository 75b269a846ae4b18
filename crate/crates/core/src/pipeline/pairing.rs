use crate::error::{Error, Result};

/// Index pairs `(i, i + offset)` for `i = 0, stride, 2*stride, ...` while
/// both indices are in range.
pub fn pair_indices(raw_len: usize, degraded_len: usize, offset: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    Ok((0..raw_len).step_by(stride).map(|i| (i, i + offset)).take_while(|&(_, j)| j < degraded_len).collect())
}

/// Pairs each sampled raw frame with the degraded frame `offset` positions
/// later, so the reference always precedes its degraded counterpart.
pub fn pair_training_frames<R: Clone, D: Clone>(raw: &[R], degraded: &[D], offset: usize, stride: usize) -> Result<Vec<(R, D)>> {
    Ok(pair_indices(raw.len(), degraded.len(), offset, stride)?
        .into_iter()
        .map(|(i, j)| (raw[i].clone(), degraded[j].clone()))
        .collect())
}
