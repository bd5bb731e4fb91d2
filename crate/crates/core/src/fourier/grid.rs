//! Periodic M³ grids with a 3-D FFT built from rustfft line transforms.

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// Grid side lengths the laboratory accepts.
pub const GRID_SIDES: [usize; 4] = [16, 32, 64, 128];

/// Samples f(x), x ∈ {0, .., M-1}³, and coefficients c(ξ) with
/// f(x) = Σ_ξ c(ξ) e^{2πi x·ξ}, ξ ∈ (Z/M)³ wrapped into [-1/2, 1/2)³.
///
/// Flat index of (a, b, c) is a + M (b + M c) on both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    m: usize,
    samples: Vec<Complex64>,
    coeffs: Vec<Complex64>,
}

impl GridFunction {
    pub fn zeros(m: usize) -> Result<Self> {
        check_side(m)?;
        let n = m * m * m;
        Ok(GridFunction {
            m,
            samples: vec![Complex64::new(0.0, 0.0); n],
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        })
    }

    pub fn from_coefficients(m: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        check_side(m)?;
        check_len(m, coeffs.len())?;
        let mut samples = coeffs.clone();
        fft3(&mut samples, m, FftDirection::Inverse);
        Ok(GridFunction { m, samples, coeffs })
    }

    pub fn from_samples(m: usize, samples: Vec<Complex64>) -> Result<Self> {
        check_side(m)?;
        check_len(m, samples.len())?;
        let mut coeffs = samples.clone();
        fft3(&mut coeffs, m, FftDirection::Forward);
        let norm = 1.0 / (m * m * m) as f64;
        for c in &mut coeffs {
            *c *= norm;
        }
        Ok(GridFunction { m, samples, coeffs })
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Same function with coefficients multiplied pointwise by `mask`.
    pub fn multiply(&self, mask: impl Fn(usize) -> f64) -> Result<Self> {
        let coeffs = self.coeffs.iter().enumerate().map(|(i, c)| c * mask(i)).collect();
        GridFunction::from_coefficients(self.m, coeffs)
    }

    pub fn scaled(&self, lambda: Complex64) -> Self {
        GridFunction {
            m: self.m,
            samples: self.samples.iter().map(|x| x * lambda).collect(),
            coeffs: self.coeffs.iter().map(|x| x * lambda).collect(),
        }
    }

    /// Σ_x |f(x)|².
    pub fn physical_energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }

    /// M³ Σ_ξ |c(ξ)|², equal to the physical energy by Parseval.
    pub fn frequency_energy(&self) -> f64 {
        let n = (self.m * self.m * self.m) as f64;
        n * self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Σ_x |g(x)|⁴ with unit cell weight.
pub fn l4_norm(g: &GridFunction) -> f64 {
    g.samples.iter().map(|z| z.norm_sqr() * z.norm_sqr()).sum()
}

/// Frequency ξ of flat index `i`, in units where the lattice spacing is 1/M.
pub fn frequency(m: usize, i: usize) -> [f64; 3] {
    let wrap = |n: usize| {
        let n = n as i64;
        let half = (m / 2) as i64;
        let v = if n < half { n } else { n - m as i64 };
        v as f64 / m as f64
    };
    [wrap(i % m), wrap((i / m) % m), wrap(i / (m * m))]
}

/// Physical point of flat index `i`.
pub fn position(m: usize, i: usize) -> [f64; 3] {
    [(i % m) as f64, ((i / m) % m) as f64, (i / (m * m)) as f64]
}

fn check_side(m: usize) -> Result<()> {
    if GRID_SIDES.contains(&m) {
        Ok(())
    } else {
        Err(Error::Range(format!("grid side {m} not in {GRID_SIDES:?}")))
    }
}

fn check_len(m: usize, n: usize) -> Result<()> {
    if n == m * m * m {
        Ok(())
    } else {
        Err(Error::Config(format!("{n} values for an {m}³ grid")))
    }
}

/// Unnormalized 3-D DFT in place (sign given by `dir`).
pub fn fft3(data: &mut [Complex64], m: usize, dir: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft(m, dir);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    // x lines are contiguous
    fft.process_with_scratch(data, &mut scratch);
    let mut lines = vec![Complex64::new(0.0, 0.0); data.len()];
    // y lines
    for c in 0..m {
        for a in 0..m {
            for b in 0..m {
                lines[(c * m + a) * m + b] = data[a + m * (b + m * c)];
            }
        }
    }
    fft.process_with_scratch(&mut lines, &mut scratch);
    for c in 0..m {
        for a in 0..m {
            for b in 0..m {
                data[a + m * (b + m * c)] = lines[(c * m + a) * m + b];
            }
        }
    }
    // z lines
    for b in 0..m {
        for a in 0..m {
            for c in 0..m {
                lines[(b * m + a) * m + c] = data[a + m * (b + m * c)];
            }
        }
    }
    fft.process_with_scratch(&mut lines, &mut scratch);
    for b in 0..m {
        for a in 0..m {
            for c in 0..m {
                data[a + m * (b + m * c)] = lines[(b * m + a) * m + c];
            }
        }
    }
}
