//! Published coefficient sets for the classical selective pulses.
//!
//! Waveforms are evaluated on `x = t / T ∈ [0, 1]`.

/// EBURP-1 Fourier coefficients (Geen & Freeman, J. Magn. Reson. 93, 93 (1991)).
/// `f(x) = A0 + Σ An cos(2πnx) + Σ Bn sin(2πnx)`.
pub const EBURP1_A: [f64; 9] = [0.23, 0.89, -1.02, -0.25, 0.14, 0.03, 0.04, -0.03, 0.00];
pub const EBURP1_B: [f64; 8] = [-0.40, -1.42, 0.74, 0.06, 0.03, 0.04, -0.04, -0.01];

/// REBURP Fourier coefficients (Geen & Freeman, J. Magn. Reson. 93, 93 (1991)).
/// Cosine terms only, so the waveform is symmetric in time.
pub const REBURP_A: [f64; 16] = [
    0.49, -1.02, 1.11, -1.57, 0.83, -0.42, 0.26, -0.16, 0.10, -0.07, 0.04, -0.03, 0.01, -0.02,
    0.00, -0.01,
];

/// Gaussian cascade `Σ a_i exp(-4 ln2 ((x - p_i) / w_i)²)`.
pub struct GaussianCascade {
    pub amplitudes: &'static [f64],
    pub positions: &'static [f64],
    pub widths: &'static [f64],
}

/// Q5 cascade (Emsley & Bodenhausen, J. Magn. Reson. 97, 135 (1992)).
pub const Q5: GaussianCascade = GaussianCascade {
    amplitudes: &[-1.48, -4.34, 7.33, -2.30, 5.66],
    positions: &[0.162, 0.307, 0.497, 0.525, 0.803],
    widths: &[0.186, 0.139, 0.143, 0.290, 0.137],
};

/// Q3 cascade (Emsley & Bodenhausen, J. Magn. Reson. 97, 135 (1992)).
pub const Q3: GaussianCascade = GaussianCascade {
    amplitudes: &[-4.39, 4.57, 2.60],
    positions: &[0.306, 0.545, 0.804],
    widths: &[0.180, 0.183, 0.245],
};

pub fn fourier(x: f64, a: &[f64], b: &[f64]) -> f64 {
    let w = std::f64::consts::TAU * x;
    let mut f = a[0];
    for (n, an) in a.iter().enumerate().skip(1) {
        f += an * (n as f64 * w).cos();
    }
    for (n, bn) in b.iter().enumerate() {
        f += bn * ((n + 1) as f64 * w).sin();
    }
    f
}

impl GaussianCascade {
    pub fn eval(&self, x: f64) -> f64 {
        let k = 4.0 * std::f64::consts::LN_2;
        self.amplitudes
            .iter()
            .zip(self.positions)
            .zip(self.widths)
            .map(|((a, p), w)| a * (-k * ((x - p) / w).powi(2)).exp())
            .sum()
    }
}
