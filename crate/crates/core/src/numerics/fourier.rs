//! Direct `O(m²)` discrete Fourier transform. Cycle lengths in this crate are
//! at most a dozen, so no FFT is needed.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Complex vector of DFT coefficients; length ≥ 1, finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVector(Vec<Complex64>);

impl ComplexVector {
    pub fn new(entries: Vec<Complex64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(invalid("complex vector must be non-empty"));
        }
        if entries.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(invalid("non-finite complex entry"));
        }
        Ok(Self(entries))
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.0
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.0.iter().map(|c| c.norm()).collect()
    }

    /// Largest deviation from `c_k = conj(c_{m-k})`.
    pub fn conjugate_asymmetry(&self) -> f64 {
        let m = self.len();
        (0..m)
            .map(|k| (self.0[k] - self.0[(m - k) % m].conj()).norm())
            .fold(0.0, f64::max)
    }
}

fn twiddle(m: usize, k: usize, l: usize, sign: f64) -> Complex64 {
    let angle = sign * 2.0 * PI * ((k * l) % m) as f64 / m as f64;
    Complex64::from_polar(1.0, angle)
}

/// `λ_k = Σ_l x_l ω^{k l}` with `ω = e^{-2πi/m}` (0-based indices).
pub fn dft(x: &[f64]) -> Result<ComplexVector> {
    let m = x.len();
    if m == 0 {
        return Err(invalid("dft of an empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("dft of a non-finite vector"));
    }
    let out = (0..m)
        .map(|k| (0..m).map(|l| x[l] * twiddle(m, k, l, -1.0)).sum())
        .collect();
    Ok(ComplexVector(out))
}

/// Inverse of [`dft`] for conjugate-symmetric input (so the result is real).
pub fn idft(c: &ComplexVector) -> Result<Vec<f64>> {
    let scale = c.as_slice().iter().fold(1.0_f64, |acc, z| acc.max(z.norm()));
    if c.conjugate_asymmetry() > 1e-9 * scale {
        return Err(invalid("idft input is not conjugate-symmetric"));
    }
    Ok(idft_unchecked(c.as_slice()))
}

pub(crate) fn idft_unchecked(c: &[Complex64]) -> Vec<f64> {
    let m = c.len();
    let inv = 1.0 / m as f64;
    (0..m)
        .map(|l| {
            let s: Complex64 = (0..m).map(|k| c[k] * twiddle(m, k, l, 1.0)).sum();
            s.re * inv
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_complex(c: &ComplexVector, expected: &[(f64, f64)]) {
        for (z, (re, im)) in c.as_slice().iter().zip(expected) {
            assert_abs_diff_eq!(z.re, re, epsilon = 1e-12);
            assert_abs_diff_eq!(z.im, im, epsilon = 1e-12);
        }
    }

    #[test]
    fn dft_examples() {
        assert_complex(&dft(&[1.0; 4]).unwrap(), &[(4.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        assert_complex(&dft(&[1.0, -1.0]).unwrap(), &[(0.0, 0.0), (2.0, 0.0)]);
        assert_complex(&dft(&[1.0, 0.0, 0.0, 0.0]).unwrap(), &[(1.0, 0.0); 4]);
        assert!(dft(&[]).is_err());
    }

    #[test]
    fn idft_examples() {
        let c = |v: &[f64]| ComplexVector::from_real(v).unwrap();
        let x = idft(&c(&[4.0, 0.0, 0.0, 0.0])).unwrap();
        x.iter().for_each(|v| assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-14));
        let x = idft(&c(&[0.0, 2.0])).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], -1.0, epsilon = 1e-14);
        let x = idft(&c(&[1.0; 4])).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        x[1..].iter().for_each(|v| assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-14));
    }

    #[test]
    fn idft_rejects_non_hermitian() {
        let c = ComplexVector::new(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, 1.0),
        ])
        .unwrap();
        assert!(idft(&c).is_err());
    }

    #[test]
    fn real_input_is_conjugate_symmetric() {
        let c = dft(&[0.3, -1.2, 2.5, 0.7, 0.1]).unwrap();
        assert!(c.conjugate_asymmetry() < 1e-12);
    }
}
