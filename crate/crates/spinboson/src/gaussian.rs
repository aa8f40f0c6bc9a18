//! Displaced-squeezed Gaussian wavepackets and non-Gaussian superpositions.
//!
//! A single bosonic mode is parametrized by six real numbers
//! `(kappa, theta, x, y, r, phi)`: a real log-weight and phase, a complex
//! displacement `alpha = x + i y`, and a complex squeeze `zeta = r e^{i phi}`.
//! The wavepacket is `e^{kappa + i theta} D(alpha) S(zeta) |0>`.
//!
//! Everything downstream (overlaps, operator matrix elements, tangent-space
//! geometry) reduces to the normal-ordered representation
//! `N exp(c1 a^dag + c2 a^dag^2)|0>` and to the two-index moment tables
//! `<a^dag^m a^n>` computed here. Scalar prefactors are tracked in the log
//! domain so weights spanning hundreds of orders of magnitude stay finite.

use crate::error::{Error, Result};
use crate::C64;

/// Largest total order `m + n` served by [`char_moment`].
pub const MAX_MOMENT_ORDER: usize = 8;

/// Moment tables are dense in `0..=MOMENT_TABLE_MAX` per index, enough for a
/// quartic operator monomial sandwiched between quadratic tangent polynomials.
pub const MOMENT_TABLE_MAX: usize = 4;

/// Parameters of one displaced-squeezed mode, `e^{kappa+i theta} D S |0>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub kappa: f64,
    pub theta: f64,
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub phi: f64,
}

impl GaussianParams {
    pub fn vacuum() -> Self {
        Self {
            kappa: 0.0,
            theta: 0.0,
            x: 0.0,
            y: 0.0,
            r: 0.0,
            phi: 0.0,
        }
    }

    pub fn coherent(alpha: C64) -> Self {
        Self {
            x: alpha.re,
            y: alpha.im,
            ..Self::vacuum()
        }
    }

    pub fn squeezed(alpha: C64, r: f64, phi: f64) -> Self {
        Self { r, phi, ..Self::coherent(alpha) }
    }

    pub fn alpha(&self) -> C64 {
        C64::new(self.x, self.y)
    }

    /// `t = e^{i phi} tanh r`, the natural squeeze variable.
    pub fn squeeze_t(&self) -> C64 {
        C64::from_polar(self.r.tanh(), self.phi)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.kappa, self.theta, self.x, self.y, self.r, self.phi];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gaussian parameters {self:?}")));
        }
        if self.r < 0.0 {
            return Err(Error::InvalidInput(format!(
                "squeeze magnitude r must be nonnegative, got {}",
                self.r
            )));
        }
        Ok(())
    }
}

/// Normal-ordered representation `N exp(c1 a^dag + c2 a^dag^2)|0>` of
/// `D(alpha) S(zeta) |0>`; the prefactor is stored as `log N`.
#[derive(Debug, Clone, Copy)]
pub struct NormalOrderedForm {
    pub log_prefactor: C64,
    pub linear: C64,
    pub quadratic: C64,
}

impl NormalOrderedForm {
    pub fn of(p: &GaussianParams) -> Self {
        let alpha = p.alpha();
        let t = p.squeeze_t();
        let half_t = 0.5 * t;
        let log_prefactor = C64::new(-0.5 * alpha.norm_sqr(), 0.0)
            + half_t * alpha.conj() * alpha.conj()
            - C64::new(0.5 * p.r.cosh().ln(), 0.0);
        Self {
            log_prefactor,
            linear: alpha - t * alpha.conj(),
            quadratic: half_t,
        }
    }

    pub fn prefactor(&self) -> C64 {
        self.log_prefactor.exp()
    }
}

/// Log of the single-mode overlap `<bra|ket>` including both weight factors
/// `e^{kappa + i theta}`.
pub fn log_overlap(bra: &GaussianParams, ket: &GaussianParams) -> C64 {
    let nb = NormalOrderedForm::of(bra);
    let nk = NormalOrderedForm::of(ket);
    // <0| e^{abar a + bbar a^2} e^{a1 a^dag + b1 a^dag^2} |0>
    //   = exp[(abar a1 + abar^2 b1 + a1^2 bbar) / d] / sqrt(d),  d = 1 - 4 bbar b1.
    let abar = nb.linear.conj();
    let bbar = nb.quadratic.conj();
    let a1 = nk.linear;
    let b1 = nk.quadratic;
    let d = C64::new(1.0, 0.0) - 4.0 * bbar * b1;
    let core = (abar * a1 + abar * abar * b1 + a1 * a1 * bbar) / d - 0.5 * d.ln();
    nb.log_prefactor.conj()
        + nk.log_prefactor
        + core
        + C64::new(bra.kappa + ket.kappa, ket.theta - bra.theta)
}

/// Single-mode overlap `<bra|ket>`.
pub fn overlap(bra: &GaussianParams, ket: &GaussianParams) -> C64 {
    log_overlap(bra, ket).exp()
}

/// Coefficients of the two-index moment generating function for a pair of
/// wavepackets: `<bra| e^{l a^dag} e^{m a} |ket> / <bra|ket>`
/// `= exp(cl*l + cm*m + cll*l^2 + cmm*m^2 + clm*l*m)`.
#[derive(Debug, Clone, Copy)]
pub struct MomentCoeffs {
    pub cl: C64,
    pub cm: C64,
    pub cll: C64,
    pub cmm: C64,
    pub clm: C64,
}

impl MomentCoeffs {
    pub fn of(bra: &GaussianParams, ket: &GaussianParams) -> Self {
        let nb = NormalOrderedForm::of(bra);
        let nk = NormalOrderedForm::of(ket);
        let abar = nb.linear.conj();
        let bbar = nb.quadratic.conj();
        let a1 = nk.linear;
        let b1 = nk.quadratic;
        let d = C64::new(1.0, 0.0) - 4.0 * bbar * b1;
        Self {
            cl: abar + 2.0 * bbar * (a1 + 2.0 * abar * b1) / d,
            cm: a1 + 2.0 * b1 * (abar + 2.0 * a1 * bbar) / d,
            cll: bbar / d,
            cmm: b1 / d,
            clm: 4.0 * bbar * b1 / d,
        }
    }
}

/// Dense table of normalized moments `T[m][n] = <a^dag^m a^n> / <1>` for one
/// pair of wavepackets, `m, n <= MOMENT_TABLE_MAX`.
#[derive(Debug, Clone)]
pub struct MomentTable {
    t: [[C64; MOMENT_TABLE_MAX + 1]; MOMENT_TABLE_MAX + 1],
}

impl MomentTable {
    pub fn of(bra: &GaussianParams, ket: &GaussianParams) -> Self {
        Self::from_coeffs(&MomentCoeffs::of(bra, ket))
    }

    pub fn from_coeffs(c: &MomentCoeffs) -> Self {
        let zero = C64::new(0.0, 0.0);
        let mut t = [[zero; MOMENT_TABLE_MAX + 1]; MOMENT_TABLE_MAX + 1];
        t[0][0] = C64::new(1.0, 0.0);
        for n in 1..=MOMENT_TABLE_MAX {
            t[0][n] = c.cm * t[0][n - 1]
                + if n >= 2 {
                    2.0 * c.cmm * (n as f64 - 1.0) * t[0][n - 2]
                } else {
                    zero
                };
        }
        for m in 1..=MOMENT_TABLE_MAX {
            for n in 0..=MOMENT_TABLE_MAX {
                let mut v = c.cl * t[m - 1][n];
                if m >= 2 {
                    v += 2.0 * c.cll * (m as f64 - 1.0) * t[m - 2][n];
                }
                if n >= 1 {
                    v += c.clm * n as f64 * t[m - 1][n - 1];
                }
                t[m][n] = v;
            }
        }
        Self { t }
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.t[m][n]
    }
}

/// Unnormalized moment `<bra| a^dag^m a^n |ket>` for a single mode.
///
/// Orders above [`MAX_MOMENT_ORDER`] are refused rather than extrapolated.
pub fn char_moment(bra: &GaussianParams, ket: &GaussianParams, m: usize, n: usize) -> Result<C64> {
    if m + n > MAX_MOMENT_ORDER {
        return Err(Error::UnsupportedOrder {
            requested: m + n,
            max: MAX_MOMENT_ORDER,
        });
    }
    let c = MomentCoeffs::of(bra, ket);
    // Dense tables cover order 4 per index; higher orders extend the same
    // recursion in a scratch rectangle.
    let ov = overlap(bra, ket);
    if m <= MOMENT_TABLE_MAX && n <= MOMENT_TABLE_MAX {
        return Ok(ov * MomentTable::from_coeffs(&c).get(m, n));
    }
    let zero = C64::new(0.0, 0.0);
    let mut t = vec![vec![zero; n + 1]; m + 1];
    t[0][0] = C64::new(1.0, 0.0);
    for nn in 1..=n {
        t[0][nn] = c.cm * t[0][nn - 1]
            + if nn >= 2 {
                2.0 * c.cmm * (nn as f64 - 1.0) * t[0][nn - 2]
            } else {
                zero
            };
    }
    for mm in 1..=m {
        for nn in 0..=n {
            let mut v = c.cl * t[mm - 1][nn];
            if mm >= 2 {
                v += 2.0 * c.cll * (mm as f64 - 1.0) * t[mm - 2][nn];
            }
            if nn >= 1 {
                v += c.clm * nn as f64 * t[mm - 1][nn - 1];
            }
            t[mm][nn] = v;
        }
    }
    Ok(ov * t[m][n])
}

/// Fock-space coefficients `<n|DS|0>` for `n < cutoff`, excluding the
/// `e^{kappa + i theta}` weight but including the Gaussian normalization.
pub fn fock_coefficients(p: &GaussianParams, cutoff: usize) -> Vec<C64> {
    let no = NormalOrderedForm::of(p);
    let pref = no.prefactor();
    // psi_n = b_n sqrt(n!) with (n+1) b_{n+1} = c1 b_n + 2 c2 b_{n-1}.
    let mut out = Vec::with_capacity(cutoff);
    let mut b_prev = C64::new(0.0, 0.0);
    let mut b_cur = C64::new(1.0, 0.0);
    let mut sqrt_fact = 1.0_f64;
    for n in 0..cutoff {
        if n > 0 {
            sqrt_fact *= (n as f64).sqrt();
        }
        out.push(pref * b_cur * sqrt_fact);
        let b_next = (no.linear * b_cur + 2.0 * no.quadratic * b_prev) / (n as f64 + 1.0);
        b_prev = b_cur;
        b_cur = b_next;
    }
    out
}

/// Static shape of a variational state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n_spins: usize,
    pub n_modes: usize,
    pub n_gaussians: usize,
    pub squeezing: bool,
}

impl Shape {
    pub fn n_configs(&self) -> usize {
        1 << self.n_spins
    }

    pub fn params_per_mode(&self) -> usize {
        if self.squeezing {
            4
        } else {
            2
        }
    }

    /// Real parameters per (spin config, Gaussian) block.
    pub fn block_len(&self) -> usize {
        2 + self.n_modes * self.params_per_mode()
    }

    pub fn param_count(&self) -> usize {
        self.n_configs() * self.n_gaussians * self.block_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_spins > 12 {
            return Err(Error::InvalidInput(format!(
                "{} spins would need {} superposition branches",
                self.n_spins,
                1usize << self.n_spins
            )));
        }
        if self.n_modes == 0 || self.n_gaussians == 0 {
            return Err(Error::InvalidInput(
                "need at least one mode and one Gaussian per branch".into(),
            ));
        }
        Ok(())
    }
}

/// Variational state: for every spin configuration `sigma`, a superposition
/// of `n_gaussians` product Gaussian wavepackets over all modes.
///
/// Flat parameter layout, `sigma` outermost:
/// `[sigma] [gaussian p] (kappa, theta, mode 0: x y [r phi], mode 1: ...)`.
/// Spin configuration bits: bit `j` of `sigma` is spin `j`, `0 = up`.
#[derive(Debug, Clone)]
pub struct NgsState {
    pub shape: Shape,
    pub z: Vec<f64>,
}

impl NgsState {
    pub fn new(shape: Shape, z: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if z.len() != shape.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has {} entries, shape needs {}",
                z.len(),
                shape.param_count()
            )));
        }
        Ok(Self { shape, z })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        let n = shape.param_count();
        Self::new(shape, vec![0.0; n])
    }

    #[inline]
    pub fn block_offset(&self, sigma: usize, p: usize) -> usize {
        (sigma * self.shape.n_gaussians + p) * self.shape.block_len()
    }

    #[inline]
    pub fn mode_offset(&self, sigma: usize, p: usize, k: usize) -> usize {
        self.block_offset(sigma, p) + 2 + k * self.shape.params_per_mode()
    }

    pub fn kappa(&self, sigma: usize, p: usize) -> f64 {
        self.z[self.block_offset(sigma, p)]
    }

    pub fn theta(&self, sigma: usize, p: usize) -> f64 {
        self.z[self.block_offset(sigma, p) + 1]
    }

    /// Mode parameters with the block weight folded in (`kappa`, `theta`
    /// placed on every mode would double-count; they are returned zeroed).
    pub fn mode_params(&self, sigma: usize, p: usize, k: usize) -> GaussianParams {
        let o = self.mode_offset(sigma, p, k);
        let (r, phi) = if self.shape.squeezing {
            (self.z[o + 2], self.z[o + 3])
        } else {
            (0.0, 0.0)
        };
        GaussianParams {
            kappa: 0.0,
            theta: 0.0,
            x: self.z[o],
            y: self.z[o + 1],
            r,
            phi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("variational parameter vector".into()));
        }
        if self.shape.squeezing {
            for sigma in 0..self.shape.n_configs() {
                for p in 0..self.shape.n_gaussians {
                    for k in 0..self.shape.n_modes {
                        let o = self.mode_offset(sigma, p, k);
                        if self.z[o + 2] < 0.0 {
                            return Err(Error::InvalidInput(format!(
                                "negative squeeze magnitude at sigma={sigma} p={p} mode={k}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Log of the full-system overlap of one Gaussian branch pair,
    /// `<sigma p_b | sigma' p_k>` restricted to the bosonic factors
    /// (spin orthogonality is handled by callers).
    pub fn log_pair_overlap(&self, sb: usize, pb: usize, other: &NgsState, sk: usize, pk: usize) -> C64 {
        let mut acc = C64::new(
            self.kappa(sb, pb) + other.kappa(sk, pk),
            other.theta(sk, pk) - self.theta(sb, pb),
        );
        for k in 0..self.shape.n_modes {
            let b = self.mode_params(sb, pb, k);
            let t = other.mode_params(sk, pk, k);
            acc += log_overlap(&b, &t);
        }
        acc
    }

    /// Overlap `<self|other>`.
    pub fn overlap(&self, other: &NgsState) -> Result<C64> {
        if self.shape.n_spins != other.shape.n_spins || self.shape.n_modes != other.shape.n_modes {
            return Err(Error::ShapeMismatch(
                "overlap of states with different system shapes".into(),
            ));
        }
        let mut acc = C64::new(0.0, 0.0);
        for sigma in 0..self.shape.n_configs() {
            for pb in 0..self.shape.n_gaussians {
                for pk in 0..other.shape.n_gaussians {
                    acc += self.log_pair_overlap(sigma, pb, other, sigma, pk).exp();
                }
            }
        }
        Ok(acc)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.overlap(self).expect("self overlap shapes match").re
    }

    /// Shift every `kappa` uniformly so that the norm becomes exactly 1.
    pub fn normalize(&mut self) -> Result<()> {
        let n2 = self.norm_sqr();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::NonFinite(format!("norm^2 = {n2} during renormalization")));
        }
        let shift = -0.5 * n2.ln();
        for sigma in 0..self.shape.n_configs() {
            for p in 0..self.shape.n_gaussians {
                let o = self.block_offset(sigma, p);
                self.z[o] += shift;
            }
        }
        Ok(())
    }
}

/// Truncated Fock-space expansion of a variational state.
pub struct FockExpansion {
    /// Flat coefficients; spin configuration is the outermost index, then
    /// mode occupations row-major (mode 0 slowest).
    pub amplitudes: Vec<C64>,
    /// Norm-squared weight lost to the cutoff, relative to the analytic norm.
    pub truncated_weight: f64,
}

/// Expand into the product Fock basis with per-mode cutoffs.
///
/// Flat index: `((sigma * c_0 + n_0) * c_1 + n_1) * ...` matching
/// `oracle::ProductBasis`.
pub fn fock_expansion(state: &NgsState, cutoffs: &[usize], budget: usize) -> Result<FockExpansion> {
    let shape = &state.shape;
    if cutoffs.len() != shape.n_modes {
        return Err(Error::ShapeMismatch(format!(
            "{} cutoffs for {} modes",
            cutoffs.len(),
            shape.n_modes
        )));
    }
    let boson_dim: usize = cutoffs.iter().product();
    let dim = shape.n_configs() * boson_dim;
    if dim > budget {
        return Err(Error::BudgetExceeded {
            what: "Fock expansion".into(),
            dim,
            budget,
        });
    }
    let mut amps = vec![C64::new(0.0, 0.0); dim];
    let mut mode_coeffs: Vec<Vec<C64>> = Vec::with_capacity(shape.n_modes);
    for sigma in 0..shape.n_configs() {
        for p in 0..shape.n_gaussians {
            mode_coeffs.clear();
            for k in 0..shape.n_modes {
                mode_coeffs.push(fock_coefficients(&state.mode_params(sigma, p, k), cutoffs[k]));
            }
            let weight =
                C64::new(state.kappa(sigma, p), state.theta(sigma, p)).exp();
            for b in 0..boson_dim {
                let mut idx = b;
                let mut amp = weight;
                for k in (0..shape.n_modes).rev() {
                    let n = idx % cutoffs[k];
                    idx /= cutoffs[k];
                    amp *= mode_coeffs[k][n];
                }
                amps[sigma * boson_dim + b] += amp;
            }
        }
    }
    let analytic = state.norm_sqr();
    let truncated: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
    let truncated_weight = if analytic > 0.0 {
        (1.0 - truncated / analytic).max(0.0)
    } else {
        0.0
    };
    Ok(FockExpansion {
        amplitudes: amps,
        truncated_weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn coherent_overlap_matches_closed_form() {
        let a = c(0.3, -0.7);
        let b = c(-1.1, 0.4);
        let got = overlap(&GaussianParams::coherent(a), &GaussianParams::coherent(b));
        // <alpha|beta> = exp(-|a|^2/2 - |b|^2/2 + conj(a) b)
        let expect = (c(-0.5 * (a.norm_sqr() + b.norm_sqr()), 0.0) + a.conj() * b).exp();
        assert!((got - expect).norm() < 1e-14);
    }

    #[test]
    fn weights_enter_overlap() {
        let mut p = GaussianParams::coherent(c(0.2, 0.1));
        p.kappa = -1.3;
        p.theta = 0.8;
        let mut q = GaussianParams::coherent(c(0.2, 0.1));
        q.kappa = 0.4;
        q.theta = -0.2;
        let base = overlap(&GaussianParams::coherent(c(0.2, 0.1)), &GaussianParams::coherent(c(0.2, 0.1)));
        let got = overlap(&p, &q);
        let expect = base * c(p.kappa + q.kappa, q.theta - p.theta).exp();
        assert!((got - expect).norm() < 1e-14);
    }

    #[test]
    fn squeezed_states_are_normalized() {
        for &(x, y, r, phi) in &[
            (0.0, 0.0, 0.8, 0.3),
            (1.2, -0.5, 1.5, -2.0),
            (0.3, 0.9, 3.0, 1.0),
        ] {
            let p = GaussianParams::squeezed(c(x, y), r, phi);
            let n = overlap(&p, &p);
            assert_abs_diff_eq!(n.re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(n.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn squeezed_vacuum_photon_number() {
        let r = 1.1;
        let p = GaussianParams::squeezed(c(0.0, 0.0), r, 0.7);
        let n = char_moment(&p, &p, 1, 1).unwrap();
        assert_abs_diff_eq!(n.re, r.sinh().powi(2), epsilon = 1e-12);
        assert_abs_diff_eq!(n.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coherent_moments_factorize() {
        let a = c(0.4, -0.9);
        let p = GaussianParams::coherent(a);
        for m in 0..=3 {
            for n in 0..=3 {
                let got = char_moment(&p, &p, m, n).unwrap();
                let expect = a.conj().powu(m as u32) * a.powu(n as u32);
                assert!((got - expect).norm() < 1e-12, "m={m} n={n}");
            }
        }
    }

    #[test]
    fn displaced_squeezed_quadratures() {
        // First moments of DS|0>: <a> = alpha exactly.
        let p = GaussianParams::squeezed(c(0.7, -0.3), 0.9, 1.3);
        let a1 = char_moment(&p, &p, 0, 1).unwrap();
        assert!((a1 - p.alpha()).norm() < 1e-12);
        // S = exp[(zeta adag^2 - zeta^* a^2)/2]: at phi=0 the x quadrature
        // is stretched by e^r and p is squeezed by e^-r.
        let q = GaussianParams::squeezed(c(0.0, 0.0), 0.6, 0.0);
        let aa = char_moment(&q, &q, 0, 2).unwrap();
        let ad_a = char_moment(&q, &q, 1, 1).unwrap();
        let var_x = 0.5 * (aa + aa.conj() + 2.0 * ad_a + 1.0).re;
        let var_p = 0.5 * (-aa - aa.conj() + 2.0 * ad_a + 1.0).re;
        assert_abs_diff_eq!(var_x, 0.5 * (2.0 * 0.6_f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(var_p, 0.5 * (-2.0 * 0.6_f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn moment_order_limit_enforced() {
        let p = GaussianParams::vacuum();
        assert!(char_moment(&p, &p, 4, 4).is_ok());
        assert!(char_moment(&p, &p, 5, 4).is_err());
    }

    #[test]
    fn high_order_moment_consistent_with_table_region() {
        // <a^dag^4 a^4> on a coherent state = |alpha|^8.
        let a = c(0.8, 0.5);
        let p = GaussianParams::coherent(a);
        let got = char_moment(&p, &p, 4, 4).unwrap();
        assert!((got.re - a.norm_sqr().powi(4)).abs() < 1e-10);
    }

    #[test]
    fn fock_coefficients_coherent_poisson() {
        let a = c(0.9, -0.4);
        let coeffs = fock_coefficients(&GaussianParams::coherent(a), 20);
        let mut fact = 1.0;
        for n in 0..20 {
            if n > 0 {
                fact *= n as f64;
            }
            let expect = (-0.5 * a.norm_sqr()).exp() * a.powu(n as u32) / fact.sqrt();
            assert!((coeffs[n] - expect).norm() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn fock_coefficients_squeezed_vacuum() {
        let r = 0.8_f64;
        let phi = 1.1_f64;
        let coeffs = fock_coefficients(&GaussianParams::squeezed(c(0.0, 0.0), r, phi), 12);
        let t_half = 0.5 * C64::from_polar(r.tanh(), phi);
        let mut fact = 1.0_f64;
        for n in 0..12 {
            if n > 0 {
                fact *= n as f64;
            }
            if n % 2 == 1 {
                assert!(coeffs[n].norm() < 1e-14);
            } else {
                let k = n / 2;
                let mut kfact = 1.0_f64;
                for j in 1..=k {
                    kfact *= j as f64;
                }
                let expect = t_half.powu(k as u32) * fact.sqrt() / kfact / r.cosh().sqrt();
                assert!((coeffs[n] - expect).norm() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn ngs_state_layout_round_trip() {
        let shape = Shape {
            n_spins: 2,
            n_modes: 3,
            n_gaussians: 2,
            squeezing: true,
        };
        assert_eq!(shape.param_count(), 4 * 2 * (2 + 3 * 4));
        let mut st = NgsState::zeros(shape).unwrap();
        let o = st.mode_offset(3, 1, 2);
        st.z[o] = 0.5;
        st.z[o + 3] = -0.25;
        let p = st.mode_params(3, 1, 2);
        assert_eq!(p.x, 0.5);
        assert_eq!(p.phi, -0.25);
        // Last block parameter is the last entry of z.
        assert_eq!(o + 4, st.z.len());
    }

    #[test]
    fn cat_state_norm_and_expansion() {
        // |alpha> + |-alpha>, one spin configuration context-free.
        let shape = Shape {
            n_spins: 0,
            n_modes: 1,
            n_gaussians: 2,
            squeezing: false,
        };
        let a = 1.3_f64;
        let mut st = NgsState::zeros(shape).unwrap();
        let o0 = st.mode_offset(0, 0, 0);
        let o1 = st.mode_offset(0, 1, 0);
        st.z[o0] = a;
        st.z[o1] = -a;
        let n2 = st.norm_sqr();
        let expect = 2.0 + 2.0 * (-2.0 * a * a).exp();
        assert_abs_diff_eq!(n2, expect, epsilon = 1e-12);

        let exp = fock_expansion(&st, &[30], 1 << 16).unwrap();
        assert!(exp.truncated_weight < 1e-10);
        // Odd Fock components cancel.
        for n in (1..30).step_by(2) {
            assert!(exp.amplitudes[n].norm() < 1e-12);
        }
        let even: f64 = exp.amplitudes.iter().map(|v| v.norm_sqr()).sum();
        assert_abs_diff_eq!(even, n2, epsilon = 1e-10);
    }

    #[test]
    fn normalization_shifts_weights_uniformly() {
        let shape = Shape {
            n_spins: 1,
            n_modes: 2,
            n_gaussians: 2,
            squeezing: true,
        };
        let mut st = NgsState::zeros(shape).unwrap();
        for (i, v) in st.z.iter_mut().enumerate() {
            *v = 0.1 * ((i * 7 % 13) as f64 - 6.0) / 6.0;
        }
        for sigma in 0..2 {
            for p in 0..2 {
                for k in 0..2 {
                    let o = st.mode_offset(sigma, p, k);
                    st.z[o + 2] = st.z[o + 2].abs();
                }
            }
        }
        let before_diff = st.kappa(0, 0) - st.kappa(1, 1);
        st.normalize().unwrap();
        assert_abs_diff_eq!(st.norm_sqr(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st.kappa(0, 0) - st.kappa(1, 1), before_diff, epsilon = 1e-14);
    }

    #[test]
    fn fock_expansion_spin_ordering() {
        // One spin, one mode: spin config 1 (down) carries |1> Fock weight.
        let shape = Shape {
            n_spins: 1,
            n_modes: 1,
            n_gaussians: 1,
            squeezing: false,
        };
        let mut st = NgsState::zeros(shape).unwrap();
        // Down-spin branch displaced, up-spin branch vacuum.
        let o = st.mode_offset(1, 0, 0);
        st.z[o] = 0.9;
        let exp = fock_expansion(&st, &[8], 1 << 10).unwrap();
        // sigma=0 block: vacuum -> amplitude 1 at n=0.
        assert!((exp.amplitudes[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!(exp.amplitudes[1].norm() < 1e-14);
        // sigma=1 block starts at flat index 8.
        let expect0 = (-0.5 * 0.81_f64).exp();
        assert!((exp.amplitudes[8].re - expect0).abs() < 1e-12);
        assert!((exp.amplitudes[9].re - expect0 * 0.9).abs() < 1e-12);
    }

    #[test]
    fn overlap_decays_with_separation() {
        let p = GaussianParams::coherent(c(0.0, 0.0));
        let q = GaussianParams::coherent(c(30.0, 0.0));
        let l = log_overlap(&p, &q);
        assert_abs_diff_eq!(l.re, -450.0, epsilon = 1e-9);
        assert_eq!(overlap(&p, &q).norm(), (-450.0_f64).exp());
    }
}
