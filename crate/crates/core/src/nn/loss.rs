use crate::error::{ensure, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Mean absolute error over the listed rows of every prediction, and its
/// subgradient with respect to each prediction (zero at exact ties and on
/// rows outside `rows`).
pub fn loss_mae<T: Scalar>(
    preds: &[Matrix<T>],
    targets: &[&Matrix<T>],
    rows: &[usize],
) -> Result<(f64, Vec<Matrix<T>>)> {
    ensure!(
        preds.len() == targets.len(),
        DimensionMismatch,
        "{} predictions for {} targets",
        preds.len(),
        targets.len()
    );
    let cols = preds.first().map_or(0, Matrix::cols);
    let count = preds.len() * rows.len() * cols;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    let inv = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    for (p, t) in preds.iter().zip(targets) {
        ensure!(
            p.shape() == t.shape(),
            DimensionMismatch,
            "prediction {:?} vs target {:?}",
            p.shape(),
            t.shape()
        );
        let mut g = Matrix::zeros(p.rows(), p.cols());
        for &r in rows {
            ensure!(
                r < p.rows(),
                InvalidArgument,
                "loss row {r} of {}",
                p.rows()
            );
            for c in 0..p.cols() {
                let diff = p[(r, c)].as_f64() - t[(r, c)].as_f64();
                total += diff.abs();
                g[(r, c)] = T::of_f64(if diff > 0.0 {
                    inv
                } else if diff < 0.0 {
                    -inv
                } else {
                    0.0
                });
            }
        }
        grads.push(g);
    }
    Ok((total * inv, grads))
}
