use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Least-squares projection rows: row `j` evaluates, at window position `j`, the
/// polynomial of degree `order` fitted to the whole window.
fn projection(window: usize, order: usize) -> Result<DMatrix<f64>> {
    let center = (window / 2) as f64;
    let design = DMatrix::from_fn(window, order + 1, |i, p| (i as f64 - center).powi(p as i32));
    let pinv = design
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidParameter(format!("Savitzky-Golay fit failed: {e}")))?;
    Ok(design * pinv)
}

/// Savitzky-Golay smoothing with polynomial edge fitting.
///
/// Interior points use the centered fit; the first and last `window/2` points are
/// evaluated from the polynomial fitted to the first and last full window. Inputs
/// shorter than `window` shrink the window to the largest odd length that fits.
pub fn savgol_smooth(x: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "Savitzky-Golay window must be odd, got {window}"
        )));
    }
    let mut window = window;
    if x.len() < window {
        window = if x.len() % 2 == 1 { x.len() } else { x.len().saturating_sub(1) };
    }
    if window <= order {
        return Ok(x.to_vec());
    }
    let proj = projection(window, order)?;
    let half = window / 2;
    let n = x.len();
    let center_row: Vec<f64> = proj.row(half).iter().copied().collect();

    let mut out = vec![0.0; n];
    let interior: Vec<usize> = (half..n - half).collect();
    let values = crate::par::map(&interior, |&i| {
        center_row
            .iter()
            .zip(&x[i - half..=i + half])
            .map(|(c, v)| c * v)
            .sum::<f64>()
    });
    for (&i, v) in interior.iter().zip(values) {
        out[i] = v;
    }
    for j in 0..half {
        out[j] = proj.row(j).iter().zip(&x[..window]).map(|(c, v)| c * v).sum();
        let tail = n - window;
        let jj = window - half + j;
        out[tail + jj] = proj
            .row(jj)
            .iter()
            .zip(&x[tail..])
            .map(|(c, v)| c * v)
            .sum();
    }
    Ok(out)
}
