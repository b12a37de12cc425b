//! Gaussian-state security analysis for reverse-reconciled homodyne GG02.
//!
//! Detector noise is treated as untrusted: it is folded into an equivalent
//! channel with transmittance `ηT` and excess noise `ε + ν_el/(ηT)`, which is
//! the same convention [`mutual_information`] uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::AggregateEstimate;
use crate::scalar::Real;

/// Tolerance below 1 accepted for symplectic eigenvalues of physical states.
pub const PHYSICALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec<T> {
    pub v: T,
    pub transmittance: T,
    pub excess: T,
    /// Post-equalization amplitude ratio `A_eq/A`; 1 means perfect correction.
    pub amp_ratio: T,
    /// Residual phase `Δφ − Δφ_eq` (rad).
    pub phase_residual: T,
}

impl<T: Real> CovarianceSpec<T> {
    /// Perfectly corrected channel.
    pub fn ideal(v: T, transmittance: T, excess: T) -> Self {
        Self { v, transmittance, excess, amp_ratio: T::one(), phase_residual: T::zero() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v >= T::one()) {
            return Err(Error::contract("V must be at least 1"));
        }
        if !(self.transmittance > T::zero() && self.transmittance <= T::one()) {
            return Err(Error::contract("transmittance must lie in (0, 1]"));
        }
        if !(self.excess >= T::zero()) {
            return Err(Error::contract("excess noise must be nonnegative"));
        }
        // A residual gain above one would manufacture correlations.
        if !(self.amp_ratio >= T::zero() && self.amp_ratio <= T::one()) {
            return Err(Error::contract("amplitude ratio must lie in [0, 1]"));
        }
        if !self.phase_residual.is_finite() {
            return Err(Error::contract("phase residual must be finite"));
        }
        Ok(())
    }
}

/// Symmetric 4×4 covariance matrix ordered `(x_A, p_A, x_B, p_B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMatrix<T> {
    pub entries: [[T; 4]; 4],
}

impl<T: Real> CovarianceMatrix<T> {
    fn block(&self, r: usize, c: usize) -> [[T; 2]; 2] {
        let e = &self.entries;
        [[e[r][c], e[r][c + 1]], [e[r + 1][c], e[r + 1][c + 1]]]
    }

    pub fn is_symmetric(&self) -> bool {
        let tol = T::lit(1e-12) * self.max_abs().max(T::one());
        (0..4).all(|i| (0..i).all(|j| (self.entries[i][j] - self.entries[j][i]).abs() <= tol))
    }

    fn max_abs(&self) -> T {
        self.entries.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn determinant(&self) -> T {
        det4(&self.entries)
    }
}

fn det2<T: Real>(m: &[[T; 2]; 2]) -> T {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn det4<T: Real>(m: &[[T; 4]; 4]) -> T {
    // Laplace expansion via 2×2 minors of the top and bottom row pairs.
    let s = |a: usize, b: usize| m[0][a] * m[1][b] - m[0][b] * m[1][a];
    let c = |a: usize, b: usize| m[2][a] * m[3][b] - m[2][b] * m[3][a];
    s(0, 1) * c(2, 3) - s(0, 2) * c(1, 3) + s(0, 3) * c(1, 2) + s(1, 2) * c(0, 3) - s(1, 3) * c(0, 2)
        + s(2, 3) * c(0, 1)
}

pub fn build_covariance<T: Real>(spec: &CovarianceSpec<T>) -> Result<CovarianceMatrix<T>> {
    spec.validate()?;
    let CovarianceSpec { v, transmittance: t, excess, amp_ratio, phase_residual } = *spec;
    let a = v;
    let b = t * (v - T::one() + excess) + T::one();
    let lambda = amp_ratio.sqrt() * t.sqrt() * (v * v - T::one()).sqrt();
    let (sin, cos) = phase_residual.sin_cos();
    let c = [[lambda * cos, -lambda * sin], [-lambda * sin, -lambda * cos]];
    let z = T::zero();
    Ok(CovarianceMatrix {
        entries: [
            [a, z, c[0][0], c[0][1]],
            [z, a, c[1][0], c[1][1]],
            [c[0][0], c[1][0], b, z],
            [c[0][1], c[1][1], z, b],
        ],
    })
}

/// Eigen-decomposition of a symmetric 4×4 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
fn jacobi_eigen<T: Real>(mut a: [[T; 4]; 4]) -> ([T; 4], [[T; 4]; 4]) {
    let mut v = [[T::zero(); 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    for _sweep in 0..64 {
        let off: T = (0..4).flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j))).fold(T::zero(), |acc, (i, j)| acc + a[i][j] * a[i][j]);
        let scale: T = (0..4).fold(T::zero(), |acc, i| acc + a[i][i] * a[i][i]);
        if off <= T::epsilon() * T::epsilon() * scale.max(T::min_positive_value()) {
            break;
        }
        for p in 0..3 {
            for q in p + 1..4 {
                if a[p][q] == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = (t * t + T::one()).sqrt().recip();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (row_p, row_q) = (a[p], a[q]);
                for k in 0..4 {
                    a[p][k] = c * row_p[k] - s * row_q[k];
                    a[q][k] = s * row_p[k] + c * row_q[k];
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2], a[3][3]], v)
}

fn matmul<T: Real>(a: &[[T; 4]; 4], b: &[[T; 4]; 4]) -> [[T; 4]; 4] {
    let mut out = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).fold(T::zero(), |acc, k| acc + a[i][k] * b[k][j]);
        }
    }
    out
}

fn transpose<T: Real>(a: &[[T; 4]; 4]) -> [[T; 4]; 4] {
    let mut out = *a;
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Symplectic eigenvalues `(ν1, ν2)`, descending.
///
/// Uses the Williamson form: with `S = γ^½ Ω γ^½` (antisymmetric), the
/// symmetric matrix `SᵀS` has eigenvalues `ν1², ν1², ν2², ν2²`. Working with
/// symmetric eigenproblems keeps near-pure states accurate to rounding level.
pub fn symplectic_spectrum<T: Real>(gamma: &CovarianceMatrix<T>) -> Result<(T, T)> {
    if !gamma.is_symmetric() {
        return Err(Error::contract("covariance matrix must be symmetric"));
    }
    let (evals, evecs) = jacobi_eigen(gamma.entries);
    if evals.iter().any(|&e| !(e > T::zero())) {
        return Err(Error::Unphysical("covariance matrix is not positive definite".into()));
    }
    let mut diag = [[T::zero(); 4]; 4];
    for (i, e) in evals.iter().enumerate() {
        diag[i][i] = e.sqrt();
    }
    let root = matmul(&matmul(&evecs, &diag), &transpose(&evecs));
    let (o, z) = (T::one(), T::zero());
    let omega = [[z, o, z, z], [-o, z, z, z], [z, z, z, o], [z, z, -o, z]];
    let s = matmul(&matmul(&root, &omega), &root);
    let mut sts = matmul(&transpose(&s), &s);
    // Enforce exact symmetry before the second decomposition.
    #[allow(clippy::needless_range_loop)]
    for i in 0..4 {
        for j in 0..i {
            let m = (sts[i][j] + sts[j][i]) / T::lit(2.0);
            sts[i][j] = m;
            sts[j][i] = m;
        }
    }
    let (mut nu2, _) = jacobi_eigen(sts);
    nu2.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let two = T::lit(2.0);
    Ok((((nu2[0] + nu2[1]) / two).sqrt(), ((nu2[2] + nu2[3]) / two).max(T::zero()).sqrt()))
}

pub fn is_physical<T: Real>(gamma: &CovarianceMatrix<T>) -> Result<bool> {
    let (_, lo) = symplectic_spectrum(gamma)?;
    Ok(lo >= T::one() - T::lit(PHYSICALITY_TOL))
}

/// Alice's conditional covariance after Bob homodynes his `x` quadrature.
pub fn conditional_after_homodyne<T: Real>(gamma: &CovarianceMatrix<T>) -> Result<[[T; 2]; 2]> {
    let e = &gamma.entries;
    let b11 = e[2][2];
    if !(b11 > T::zero()) {
        return Err(Error::degenerate("measured quadrature has nonpositive variance"));
    }
    let c = [e[0][2], e[1][2]];
    let mut out = gamma.block(0, 0);
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] -= c[i] * c[j] / b11;
        }
    }
    Ok(out)
}

/// Von Neumann entropy (bits) of a thermal mode with symplectic eigenvalue `ν`.
pub fn g_entropy<T: Real>(nu: T) -> Result<T> {
    if !(nu >= T::one() - T::lit(1e-6)) {
        return Err(Error::Unphysical(format!("symplectic eigenvalue {nu} below 1")));
    }
    let x = (nu.max(T::one()) - T::one()) / T::lit(2.0);
    if x == T::zero() {
        return Ok(T::zero());
    }
    Ok((x + T::one()) * (x + T::one()).log2() - x * x.log2())
}

/// Total noise referred to the channel input.
fn chi_total<T: Real>(transmittance: T, eps: T, eta: T, nu_el: T) -> T {
    let chi_line = transmittance.recip() - T::one() + eps;
    let chi_hom = (T::one() + nu_el) / eta - T::one();
    chi_line + chi_hom / transmittance
}

/// Alice–Bob Shannon information (bits per pulse) for homodyne detection.
pub fn mutual_information<T: Real>(v_a: T, transmittance: T, eps: T, eta: T, nu_el: T) -> T {
    if !(transmittance > T::zero()) {
        return T::zero();
    }
    let v = v_a + T::one();
    let chi = chi_total(transmittance, eps, eta, nu_el);
    ((v + chi) / (T::one() + chi)).log2() / T::lit(2.0)
}

/// Holevo information between Eve and Bob's homodyne outcome.
pub fn holevo_bound<T: Real>(gamma: &CovarianceMatrix<T>) -> Result<T> {
    let (n1, n2) = symplectic_spectrum(gamma)?;
    let cond = conditional_after_homodyne(gamma)?;
    let n3 = det2(&cond).max(T::zero()).sqrt();
    Ok(g_entropy(n1)? + g_entropy(n2)? - g_entropy(n3)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct SecurityConfig<T> {
    pub beta_r: T,
    pub fer: T,
    pub delta_n: T,
    #[serde(default = "one")]
    pub amp_ratio: T,
    #[serde(default)]
    pub phase_residual: T,
}

fn one<T: Real>() -> T {
    T::one()
}

impl<T: Real> Default for SecurityConfig<T> {
    fn default() -> Self {
        Self { beta_r: T::lit(0.95), fer: T::zero(), delta_n: T::zero(), amp_ratio: T::one(), phase_residual: T::zero() }
    }
}

impl<T: Real> SecurityConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !unit(self.beta_r) || !unit(self.fer) {
            return Err(Error::config("β_R and FER must lie in [0, 1]"));
        }
        if !(self.delta_n >= T::zero()) {
            return Err(Error::config("Δ(n) must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport<T> {
    pub i_ab: T,
    pub chi_be: T,
    /// Reported rate, clamped at zero.
    pub k_rate: T,
    /// Signed rate before clamping.
    pub k_raw: T,
    pub beta_r: T,
    pub fer: T,
    pub delta_n: T,
    pub covariance: CovarianceMatrix<T>,
}

/// Key rate at a single `(T, ε)` point with detector `(η, ν_el)`.
pub fn key_rate_at<T: Real>(
    v_a: T,
    transmittance: T,
    eps: T,
    eta: T,
    nu_el: T,
    sec: &SecurityConfig<T>,
) -> Result<KeyRateReport<T>> {
    sec.validate()?;
    if !(transmittance > T::zero() && eta > T::zero()) {
        return Err(Error::domain("key rate needs positive transmittance and efficiency"));
    }
    let t_eff = (eta * transmittance).min(T::one());
    let eps_eff = eps.max(T::zero()) + nu_el / t_eff;
    let covariance = build_covariance(&CovarianceSpec {
        v: v_a + T::one(),
        transmittance: t_eff,
        excess: eps_eff,
        amp_ratio: sec.amp_ratio,
        phase_residual: sec.phase_residual,
    })?;
    let i_ab = mutual_information(v_a, transmittance, eps.max(T::zero()), eta, nu_el);
    let chi_be = holevo_bound(&covariance)?;
    let k_raw = (T::one() - sec.fer) * (sec.beta_r * i_ab - chi_be - sec.delta_n);
    Ok(KeyRateReport {
        i_ab,
        chi_be,
        k_rate: k_raw.max(T::zero()),
        k_raw,
        beta_r: sec.beta_r,
        fer: sec.fer,
        delta_n: sec.delta_n,
        covariance,
    })
}

/// Key rate evaluated at the aggregated estimate `(⟨T̂⟩, ε̂)`.
pub fn secret_key_rate<T: Real>(
    aggregate: &AggregateEstimate<T>,
    v_a: T,
    eta: T,
    nu_el: T,
    sec: &SecurityConfig<T>,
) -> Result<KeyRateReport<T>> {
    key_rate_at(v_a, aggregate.transmittance_mean, aggregate.eps_mean, eta, nu_el, sec)
}
