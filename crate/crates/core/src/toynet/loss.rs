use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Weight of the distillation term in the combined loss.
pub const KD_WEIGHT: f64 = 0.5;
/// Softening temperature applied to both student and teacher logits.
pub const KD_TEMPERATURE: f64 = 2.0;

fn log_softmax(row: impl Iterator<Item = f64> + Clone, temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = row.map(|v| v / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|v| v - lse).collect()
}

/// Mean over rows of `-sum_j p_t[j] log p_s[j]`, where `p_t` and `p_s` are
/// the teacher and student softmaxes at `temperature`.
///
/// No `temperature^2` rescaling is applied.
pub fn distillation_cross_entropy(
    student: ArrayView2<'_, f64>,
    teacher: ArrayView2<'_, f64>,
    temperature: f64,
) -> Result<f64> {
    if student.shape() != teacher.shape() {
        return Err(Error::ShapeMismatch(format!(
            "student logits {:?} vs teacher logits {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    if student.nrows() == 0 || student.ncols() == 0 {
        return Err(Error::ShapeMismatch(
            "logit matrices must be non-empty".into(),
        ));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let total: f64 = student
        .rows()
        .into_iter()
        .zip(teacher.rows())
        .map(|(s, t)| {
            let log_q = log_softmax(s.iter().copied(), temperature);
            let log_p = log_softmax(t.iter().copied(), temperature);
            -log_p
                .iter()
                .zip(&log_q)
                .map(|(lp, lq)| lp.exp() * lq)
                .sum::<f64>()
        })
        .sum();
    Ok(total / student.nrows() as f64)
}

/// `(1 - weight) * mlm_loss + weight * distill`.
pub fn kd_loss(
    student: ArrayView2<'_, f64>,
    teacher: ArrayView2<'_, f64>,
    mlm_loss: f64,
    weight: f64,
    temperature: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidArgument(format!(
            "weight must lie in [0, 1], got {weight}"
        )));
    }
    if !(mlm_loss >= 0.0 && mlm_loss.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "mlm loss must be finite and non-negative, got {mlm_loss}"
        )));
    }
    let distill = distillation_cross_entropy(student, teacher, temperature)?;
    if weight == 0.0 {
        return Ok(mlm_loss);
    }
    Ok((1.0 - weight) * mlm_loss + weight * distill)
}
