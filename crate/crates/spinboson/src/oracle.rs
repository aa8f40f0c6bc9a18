//! Truncated-Fock exact propagation: the reference all approximate engines
//! are benchmarked against.
//!
//! States live in a product basis of spin configurations and per-mode Fock
//! levels. Operators are applied matrix-free term by term, so closed-system
//! propagation scales with the basis dimension, not its square. Density
//! matrices for Lindblad evolution are dense with the generator applied
//! column-wise.

use crate::error::{Error, Result};
use crate::gaussian::{fock_expansion, NgsState};
use crate::integrate::{rk45, AdaptiveOpts, StepStats};
use crate::operator::SpinBosonOperator;
use crate::C64;
use ndarray::{Array1, Array2};

/// Default cap on pure-state dimensions.
pub const PURE_STATE_BUDGET: usize = 200_000;
/// Default cap on density-matrix dimensions.
pub const DENSITY_MATRIX_BUDGET: usize = 20_000;

/// Product basis bookkeeping. Flat index:
/// `((sigma * c_0 + n_0) * c_1 + n_1) * ...`; spin configuration bits follow
/// the state convention (bit j = spin j, 0 = up).
#[derive(Debug, Clone)]
pub struct ProductBasis {
    pub n_spins: usize,
    pub cutoffs: Vec<usize>,
    dim: usize,
    boson_dim: usize,
}

impl ProductBasis {
    pub fn new(n_spins: usize, cutoffs: &[usize]) -> Result<Self> {
        Self::with_budget(n_spins, cutoffs, PURE_STATE_BUDGET)
    }

    pub fn with_budget(n_spins: usize, cutoffs: &[usize], budget: usize) -> Result<Self> {
        if cutoffs.is_empty() || cutoffs.iter().any(|&c| c == 0) {
            return Err(Error::InvalidInput("every mode needs a positive cutoff".into()));
        }
        let mut boson_dim = 1usize;
        for &c in cutoffs {
            boson_dim = boson_dim
                .checked_mul(c)
                .ok_or_else(|| Error::InvalidInput("basis dimension overflow".into()))?;
        }
        let dim = boson_dim
            .checked_mul(1 << n_spins)
            .ok_or_else(|| Error::InvalidInput("basis dimension overflow".into()))?;
        if dim > budget {
            return Err(Error::BudgetExceeded {
                what: "product basis".into(),
                dim,
                budget,
            });
        }
        Ok(Self {
            n_spins,
            cutoffs: cutoffs.to_vec(),
            dim,
            boson_dim,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn boson_dim(&self) -> usize {
        self.boson_dim
    }

    #[inline]
    pub fn n_modes(&self) -> usize {
        self.cutoffs.len()
    }

    /// Flat index of (spin configuration, occupations).
    pub fn index(&self, sigma: usize, occ: &[usize]) -> usize {
        debug_assert_eq!(occ.len(), self.cutoffs.len());
        let mut idx = sigma;
        for (k, &n) in occ.iter().enumerate() {
            debug_assert!(n < self.cutoffs[k]);
            idx = idx * self.cutoffs[k] + n;
        }
        idx
    }

    /// Inverse of [`index`].
    pub fn unpack(&self, mut idx: usize, occ: &mut [usize]) -> usize {
        for k in (0..self.cutoffs.len()).rev() {
            occ[k] = idx % self.cutoffs[k];
            idx /= self.cutoffs[k];
        }
        idx
    }

    pub fn vacuum(&self, sigma: usize) -> Array1<C64> {
        let mut v = Array1::zeros(self.dim);
        let occ = vec![0usize; self.cutoffs.len()];
        v[self.index(sigma, &occ)] = C64::new(1.0, 0.0);
        v
    }
}

/// `out += op |psi>`, matrix-free.
pub fn apply_into(
    op: &SpinBosonOperator,
    basis: &ProductBasis,
    psi: &Array1<C64>,
    out: &mut Array1<C64>,
) -> Result<()> {
    if op.n_spins != basis.n_spins || op.n_modes != basis.n_modes() {
        return Err(Error::ShapeMismatch(format!(
            "operator on {} spins / {} modes applied in a {} spin / {} mode basis",
            op.n_spins,
            op.n_modes,
            basis.n_spins,
            basis.n_modes()
        )));
    }
    if psi.len() != basis.dim() || out.len() != basis.dim() {
        return Err(Error::ShapeMismatch("state length != basis dimension".into()));
    }
    let nm = basis.n_modes();
    let mut occ = vec![0usize; nm];
    for t in &op.terms {
        let flip = t.flip_mask();
        for idx in 0..basis.dim() {
            let amp = psi[idx];
            if amp == C64::new(0.0, 0.0) {
                continue;
            }
            let sigma = basis.unpack(idx, &mut occ);
            let sigma_out = sigma ^ flip;
            let spin_factor = t.spin_elem(sigma_out, sigma);
            if spin_factor == C64::new(0.0, 0.0) {
                continue;
            }
            let mut weight = t.coeff * spin_factor * amp;
            let mut ok = true;
            for &(k, m, n) in &t.modes {
                let nk = occ[k];
                if nk < n as usize {
                    ok = false;
                    break;
                }
                let low = nk - n as usize;
                let high = low + m as usize;
                if high >= basis.cutoffs[k] {
                    ok = false;
                    break;
                }
                let mut w = 1.0f64;
                for i in 0..n as usize {
                    w *= (nk - i) as f64;
                }
                for i in 0..m as usize {
                    w *= (low + 1 + i) as f64;
                }
                weight *= w.sqrt();
                occ[k] = high;
            }
            if ok {
                out[basis.index(sigma_out, &occ)] += weight;
            }
            // Restore occupations mutated above.
            basis.unpack(idx, &mut occ);
        }
    }
    Ok(())
}

/// `op |psi>` as a fresh vector.
pub fn apply(op: &SpinBosonOperator, basis: &ProductBasis, psi: &Array1<C64>) -> Result<Array1<C64>> {
    let mut out = Array1::zeros(basis.dim());
    apply_into(op, basis, psi, &mut out)?;
    Ok(out)
}

/// Dense matrix of `op` (column-by-column application); intended for small
/// verification bases.
pub fn to_dense(op: &SpinBosonOperator, basis: &ProductBasis) -> Result<Array2<C64>> {
    const DENSE_DIM_CAP: usize = 4096;
    if basis.dim() > DENSE_DIM_CAP {
        return Err(Error::BudgetExceeded {
            what: "dense operator matrix".into(),
            dim: basis.dim(),
            budget: DENSE_DIM_CAP,
        });
    }
    let mut m = Array2::zeros((basis.dim(), basis.dim()));
    let mut e = Array1::zeros(basis.dim());
    for j in 0..basis.dim() {
        e.fill(C64::new(0.0, 0.0));
        e[j] = C64::new(1.0, 0.0);
        let col = apply(op, basis, &e)?;
        m.column_mut(j).assign(&col);
    }
    Ok(m)
}

pub fn inner(a: &Array1<C64>, b: &Array1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn expectation(op: &SpinBosonOperator, basis: &ProductBasis, psi: &Array1<C64>) -> Result<C64> {
    let applied = apply(op, basis, psi)?;
    let n2 = inner(psi, psi).re;
    Ok(inner(psi, &applied) / n2)
}

/// Normalized squared overlap `|<a|b>|^2 / (<a|a><b|b>)`.
pub fn fidelity(a: &Array1<C64>, b: &Array1<C64>) -> f64 {
    let ov = inner(a, b).norm_sqr();
    ov / (inner(a, a).re * inner(b, b).re)
}

/// Propagate `i d|psi>/dt = H |psi>` from 0 to `t`.
pub fn evolve_schrodinger(
    h: &SpinBosonOperator,
    basis: &ProductBasis,
    psi: &mut Array1<C64>,
    t: f64,
    opts: &AdaptiveOpts,
) -> Result<StepStats> {
    let mut work = Array1::zeros(basis.dim());
    let mut sys = |_t: f64, y: &Array1<C64>, dy: &mut Array1<C64>| -> Result<()> {
        work.fill(C64::new(0.0, 0.0));
        apply_into(h, basis, y, &mut work)?;
        dy.assign(&work);
        dy.mapv_inplace(|v| -C64::i() * v);
        Ok(())
    };
    rk45(&mut sys, psi, 0.0, t, opts)
}

/// Propagate the non-Hermitian flow `i d|psi>/dt = (H - iK)|psi>`.
pub fn evolve_effective(
    h: &SpinBosonOperator,
    k: &SpinBosonOperator,
    basis: &ProductBasis,
    psi: &mut Array1<C64>,
    t: f64,
    opts: &AdaptiveOpts,
) -> Result<StepStats> {
    let mut work = Array1::zeros(basis.dim());
    let mut sys = |_t: f64, y: &Array1<C64>, dy: &mut Array1<C64>| -> Result<()> {
        work.fill(C64::new(0.0, 0.0));
        apply_into(h, basis, y, &mut work)?;
        dy.assign(&work);
        dy.mapv_inplace(|v| -C64::i() * v);
        work.fill(C64::new(0.0, 0.0));
        apply_into(k, basis, y, &mut work)?;
        dy.zip_mut_with(&work, |d, w| *d -= w);
        Ok(())
    };
    rk45(&mut sys, psi, 0.0, t, opts)
}

/// Dense density matrix propagated under the Lindblad generator
/// `rho' = -i[H, rho] + sum_c (L rho L^dag - {L^dag L, rho}/2)`.
pub struct LindbladOracle {
    pub basis: ProductBasis,
    h: SpinBosonOperator,
    h_t: SpinBosonOperator,
    jumps: Vec<(SpinBosonOperator, SpinBosonOperator)>, // (L, L^T)
    k: SpinBosonOperator,
    k_t: SpinBosonOperator,
}

impl LindbladOracle {
    pub fn new(
        h: SpinBosonOperator,
        jump_ops: Vec<SpinBosonOperator>,
        basis: ProductBasis,
    ) -> Result<Self> {
        if basis.dim() > DENSITY_MATRIX_BUDGET {
            return Err(Error::BudgetExceeded {
                what: "density matrix".into(),
                dim: basis.dim(),
                budget: DENSITY_MATRIX_BUDGET,
            });
        }
        let mut k = SpinBosonOperator::zero(h.n_spins, h.n_modes);
        for l in &jump_ops {
            k = k.add(&l.dagger().mul(l)?.scaled(C64::new(0.5, 0.0)))?;
        }
        Ok(Self {
            h_t: h.transpose(),
            k_t: k.transpose(),
            jumps: jump_ops.iter().map(|l| (l.clone(), l.transpose())).collect(),
            h,
            k,
            basis,
        })
    }

    /// `out = A rho` column-wise (matrix-free in A).
    fn left(&self, op: &SpinBosonOperator, rho: &Array2<C64>, out: &mut Array2<C64>) -> Result<()> {
        let dim = self.basis.dim();
        let mut col = Array1::zeros(dim);
        for j in 0..dim {
            col.assign(&rho.column(j));
            let mut o = Array1::zeros(dim);
            apply_into(op, &self.basis, &col, &mut o)?;
            out.column_mut(j).assign(&o);
        }
        Ok(())
    }

    /// `out = rho A`, using `(rho A)^T = A^T rho^T`.
    fn right(&self, op_t: &SpinBosonOperator, rho: &Array2<C64>, out: &mut Array2<C64>) -> Result<()> {
        let dim = self.basis.dim();
        let mut col = Array1::zeros(dim);
        for i in 0..dim {
            col.assign(&rho.row(i));
            let mut o = Array1::zeros(dim);
            apply_into(op_t, &self.basis, &col, &mut o)?;
            out.row_mut(i).assign(&o);
        }
        Ok(())
    }

    /// Lindblad right-hand side as a dense matrix.
    pub fn generator(&self, rho: &Array2<C64>) -> Result<Array2<C64>> {
        let dim = self.basis.dim();
        let mut drho = Array2::zeros((dim, dim));
        let mut tmp = Array2::zeros((dim, dim));
        // -i H rho
        self.left(&self.h, rho, &mut tmp)?;
        drho.zip_mut_with(&tmp, |d, t| *d -= C64::i() * t);
        // +i rho H
        self.right(&self.h_t, rho, &mut tmp)?;
        drho.zip_mut_with(&tmp, |d, t| *d += C64::i() * t);
        // -K rho - rho K
        self.left(&self.k, rho, &mut tmp)?;
        drho.zip_mut_with(&tmp, |d, t| *d -= t);
        self.right(&self.k_t, rho, &mut tmp)?;
        drho.zip_mut_with(&tmp, |d, t| *d -= t);
        // + L rho L^dag = (L rho) L^dag
        let mut half = Array2::zeros((dim, dim));
        for (l, _) in &self.jumps {
            self.left(l, rho, &mut half)?;
            let ldag_t = l.dagger().transpose();
            self.right(&ldag_t, &half.clone(), &mut tmp)?;
            drho.zip_mut_with(&tmp, |d, t| *d += t);
        }
        Ok(drho)
    }

    /// Propagate `rho` for time `t`.
    pub fn evolve(&self, rho: &mut Array2<C64>, t: f64, opts: &AdaptiveOpts) -> Result<StepStats> {
        let dim = self.basis.dim();
        let mut flat: Array1<C64> = Array1::from_iter(rho.iter().copied());
        let mut sys = |_t: f64, y: &Array1<C64>, dy: &mut Array1<C64>| -> Result<()> {
            let r = Array2::from_shape_vec((dim, dim), y.to_vec())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let d = self.generator(&r)?;
            for (o, v) in dy.iter_mut().zip(d.iter()) {
                *o = *v;
            }
            Ok(())
        };
        let stats = rk45(&mut sys, &mut flat, 0.0, t, opts)?;
        *rho = Array2::from_shape_vec((dim, dim), flat.to_vec())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(stats)
    }

    pub fn trace(rho: &Array2<C64>) -> C64 {
        rho.diag().sum()
    }

    pub fn expectation(&self, op: &SpinBosonOperator, rho: &Array2<C64>) -> Result<C64> {
        // tr(op rho): sum_i (op rho)_{ii}.
        let dim = self.basis.dim();
        let mut acc = C64::new(0.0, 0.0);
        let mut col = Array1::zeros(dim);
        let mut out = Array1::zeros(dim);
        for j in 0..dim {
            col.assign(&rho.column(j));
            out.fill(C64::new(0.0, 0.0));
            apply_into(op, &self.basis, &col, &mut out)?;
            acc += out[j];
        }
        Ok(acc)
    }
}

/// Dense coherent state via propagation of the displacement generator
/// `i(alpha adag - alpha^* a)` for unit time; independent of the Gaussian
/// closed forms.
pub fn dense_coherent(basis: &ProductBasis, mode: usize, alpha: C64, sigma: usize) -> Result<Array1<C64>> {
    let mut gen = SpinBosonOperator::zero(basis.n_spins, basis.n_modes());
    gen.add_term(C64::i() * alpha, &[], &[(mode, 1, 0)])?;
    gen.add_term(-C64::i() * alpha.conj(), &[], &[(mode, 0, 1)])?;
    let mut psi = basis.vacuum(sigma);
    let opts = AdaptiveOpts {
        rtol: 1e-12,
        atol: 1e-14,
        ..Default::default()
    };
    evolve_schrodinger(&gen, basis, &mut psi, 1.0, &opts)?;
    Ok(psi)
}

/// Dense squeezed state `D(alpha) S(zeta) |0>` via sequential generator
/// propagation, `S = exp[(zeta adag^2 - zeta^* a^2)/2]`.
pub fn dense_displaced_squeezed(
    basis: &ProductBasis,
    mode: usize,
    alpha: C64,
    zeta: C64,
    sigma: usize,
) -> Result<Array1<C64>> {
    let opts = AdaptiveOpts {
        rtol: 1e-12,
        atol: 1e-14,
        ..Default::default()
    };
    let mut psi = basis.vacuum(sigma);
    if zeta != C64::new(0.0, 0.0) {
        let mut gen = SpinBosonOperator::zero(basis.n_spins, basis.n_modes());
        gen.add_term(C64::i() * 0.5 * zeta, &[], &[(mode, 2, 0)])?;
        gen.add_term(-C64::i() * 0.5 * zeta.conj(), &[], &[(mode, 0, 2)])?;
        evolve_schrodinger(&gen, basis, &mut psi, 1.0, &opts)?;
    }
    if alpha != C64::new(0.0, 0.0) {
        let mut gen = SpinBosonOperator::zero(basis.n_spins, basis.n_modes());
        gen.add_term(C64::i() * alpha, &[], &[(mode, 1, 0)])?;
        gen.add_term(-C64::i() * alpha.conj(), &[], &[(mode, 0, 1)])?;
        evolve_schrodinger(&gen, basis, &mut psi, 1.0, &opts)?;
    }
    Ok(psi)
}

/// Expand a variational state in this basis.
pub fn ngs_to_dense(state: &NgsState, basis: &ProductBasis) -> Result<Array1<C64>> {
    if state.shape.n_spins != basis.n_spins || state.shape.n_modes != basis.n_modes() {
        return Err(Error::ShapeMismatch("state and basis shapes differ".into()));
    }
    let exp = fock_expansion(state, &basis.cutoffs, basis.dim())?;
    Ok(Array1::from_vec(exp.amplitudes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{GaussianParams, Shape};
    use crate::operator::{
        build_htc, build_tc, ChannelKind, HtcParams, LindbladSpec, SpinLabel,
    };
    use approx::assert_abs_diff_eq;

    #[test]
    fn basis_index_round_trip() {
        let b = ProductBasis::new(2, &[3, 4]).unwrap();
        assert_eq!(b.dim(), 4 * 12);
        let mut occ = vec![0; 2];
        for idx in 0..b.dim() {
            let sigma = b.unpack(idx, &mut occ);
            assert_eq!(b.index(sigma, &occ), idx);
        }
        // Mode 0 is the slower boson index.
        assert_eq!(b.index(0, &[1, 0]), 4);
        assert_eq!(b.index(1, &[0, 0]), 12);
    }

    #[test]
    fn apply_matches_dense_for_htc() {
        let p = HtcParams {
            n_spins: 2,
            detuning: 0.4,
            coupling: 0.3,
            holstein: 0.8,
            vibration_frequency: 1.0,
            disorder: vec![0.05, -0.1],
        };
        let h = build_htc(&p).unwrap();
        let basis = ProductBasis::new(2, &[3, 3, 3]).unwrap();
        let m = to_dense(&h, &basis).unwrap();
        // Hermiticity of the dense matrix within truncation.
        for i in 0..basis.dim() {
            for j in 0..basis.dim() {
                assert!((m[(i, j)] - m[(j, i)].conj()).norm() < 1e-12);
            }
        }
        // Spot-check one exchange element: <up-up, 1 photon | H | down-up, 0 photons>.
        let bra = basis.index(0b00, &[1, 0, 0]);
        let ket = basis.index(0b01, &[0, 0, 0]);
        // g/sqrt(2) adag sigma_0^-: lowers spin 0 from up to down... the
        // reverse: term adag sigma^- maps |down,0ph> -> |up is wrong dir.
        // H|down-up, 0> has a sigma+ a term: needs a photon. So this element
        // comes from adag sigma^-: <up..1ph| adag sigma^- |down..0ph> = 0
        // (sigma^- kills down? sigma^-|down> = 0). Check the nonzero one:
        let bra2 = basis.index(0b01, &[1, 0, 0]);
        let ket2 = basis.index(0b00, &[0, 0, 0]);
        let g_eff = 0.3 / (2.0f64).sqrt();
        assert!((m[(bra2, ket2)] - C64::new(g_eff, 0.0)).norm() < 1e-12);
        let _ = (bra, ket);
    }

    #[test]
    fn schrodinger_rabi_oscillation() {
        // Single spin resonant with the cavity: vacuum Rabi with frequency
        // 2g in the one-excitation manifold.
        let h = build_tc(1, 0.0, 0.2).unwrap();
        let basis = ProductBasis::new(1, &[3]).unwrap();
        // Start in |up, 0>.
        let mut psi = basis.vacuum(0b0);
        let t = std::f64::consts::PI / (2.0 * 0.2); // g t = pi/2: full transfer
        evolve_schrodinger(&h, &basis, &mut psi, t, &AdaptiveOpts::default()).unwrap();
        // Expect |down, 1> up to phase.
        let target = basis.index(0b1, &[1]);
        assert_abs_diff_eq!(psi[target].norm(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn dense_coherent_matches_poisson() {
        let basis = ProductBasis::new(0, &[25]).unwrap();
        let alpha = C64::new(0.8, -0.6);
        let psi = dense_coherent(&basis, 0, alpha, 0).unwrap();
        let mut fact = 1.0;
        for n in 0..20 {
            if n > 0 {
                fact *= n as f64;
            }
            let expect = (-0.5 * alpha.norm_sqr()).exp() * alpha.powu(n as u32) / fact.sqrt();
            assert!((psi[n] - expect).norm() < 1e-9, "n={n}");
        }
    }

    #[test]
    fn gaussian_closed_forms_match_dense_reference() {
        // Independent cross-check of the normal-ordered closed forms.
        let basis = ProductBasis::new(0, &[60]).unwrap();
        let alpha = C64::new(0.7, 0.4);
        let zeta = C64::from_polar(0.6, -1.1);
        let psi = dense_displaced_squeezed(&basis, 0, alpha, zeta, 0).unwrap();
        let p = GaussianParams::squeezed(alpha, zeta.norm(), zeta.arg());
        let coeffs = crate::gaussian::fock_coefficients(&p, 60);
        for n in 0..30 {
            assert!(
                (psi[n] - coeffs[n]).norm() < 1e-8,
                "n={n} dense={} closed={}",
                psi[n],
                coeffs[n]
            );
        }
        // Moments against the dense state.
        for (m, n) in [(1usize, 1usize), (2, 0), (0, 2), (2, 2), (1, 2)] {
            let mut op = SpinBosonOperator::zero(0, 1);
            op.add_term(C64::new(1.0, 0.0), &[], &[(0, m as u8, n as u8)])
                .unwrap();
            let dense_val = expectation(&op, &basis, &psi).unwrap();
            let closed = crate::gaussian::char_moment(&p, &p, m, n).unwrap();
            assert!(
                (dense_val - closed).norm() < 1e-8,
                "m={m} n={n} dense={dense_val} closed={closed}"
            );
        }
    }

    #[test]
    fn ngs_to_dense_overlap_consistency() {
        // <psi|psi> from closed-form overlaps equals the dense norm.
        let shape = Shape {
            n_spins: 1,
            n_modes: 2,
            n_gaussians: 2,
            squeezing: true,
        };
        let mut st = NgsState::zeros(shape).unwrap();
        let vals = [
            0.31, -0.12, 0.42, -0.35, 0.21, 0.9, -0.2, 0.15, 0.3, 0.1, -0.4, 0.05, 0.25, -0.3,
            0.12, 0.44, -0.1, 0.2, 0.33, 0.08,
        ];
        for (i, v) in st.z.iter_mut().enumerate() {
            *v = vals[i % vals.len()] * (1.0 + 0.1 * (i as f64 / 7.0).sin());
        }
        for sigma in 0..2 {
            for p in 0..2 {
                for k in 0..2 {
                    let o = st.mode_offset(sigma, p, k);
                    st.z[o + 2] = st.z[o + 2].abs();
                }
            }
        }
        let basis = ProductBasis::new(1, &[25, 25]).unwrap();
        let dense = ngs_to_dense(&st, &basis).unwrap();
        let n2_dense = inner(&dense, &dense).re;
        assert_abs_diff_eq!(n2_dense, st.norm_sqr(), epsilon = 1e-8);
        // Overlap of two different states.
        let mut st2 = st.clone();
        st2.z[3] += 0.2;
        st2.z[7] -= 0.15;
        let dense2 = ngs_to_dense(&st2, &basis).unwrap();
        let ov_dense = inner(&dense, &dense2);
        let ov = st.overlap(&st2).unwrap();
        assert!((ov_dense - ov).norm() < 1e-8, "dense={ov_dense} closed={ov}");
    }

    #[test]
    fn effective_evolution_decays_norm() {
        let h = build_tc(1, 0.3, 0.1).unwrap();
        let mut spec = LindbladSpec::default();
        spec.push(ChannelKind::CavityDecay, 0.5).unwrap();
        let k = spec.damping_operator(1, 1).unwrap();
        let basis = ProductBasis::new(1, &[4]).unwrap();
        let mut psi = basis.vacuum(0);
        // Put one photon in.
        let mut create = SpinBosonOperator::zero(1, 1);
        create.add_term(C64::new(1.0, 0.0), &[], &[(0, 1, 0)]).unwrap();
        psi = apply(&create, &basis, &psi).unwrap();
        evolve_effective(&h, &k, &basis, &mut psi, 1.0, &AdaptiveOpts::default()).unwrap();
        let n2 = inner(&psi, &psi).re;
        assert!(n2 < 1.0 && n2 > 0.0);
    }

    #[test]
    fn lindblad_damped_cavity_analytic() {
        // Empty Hamiltonian, cavity decay kappa: <n>(t) = n0 e^{-kappa t},
        // trace preserved.
        let kappa = 0.8;
        let h = SpinBosonOperator::zero(0, 1);
        let mut spec = LindbladSpec::default();
        spec.push(ChannelKind::CavityDecay, kappa).unwrap();
        let basis = ProductBasis::new(0, &[12]).unwrap();
        let jumps = spec.jump_operators(0, 1).unwrap();
        let oracle = LindbladOracle::new(h, jumps, basis).unwrap();
        // Start from |alpha|^2 = 1 coherent state.
        let alpha = C64::new(1.0, 0.0);
        let psi = dense_coherent(&oracle.basis, 0, alpha, 0).unwrap();
        let dim = oracle.basis.dim();
        let mut rho = Array2::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                rho[(i, j)] = psi[i] * psi[j].conj();
            }
        }
        let t = 0.7;
        oracle.evolve(&mut rho, t, &AdaptiveOpts::default()).unwrap();
        let tr = LindbladOracle::trace(&rho);
        assert_abs_diff_eq!(tr.re, 1.0, epsilon = 1e-8);
        assert!(tr.im.abs() < 1e-10);
        let n_op = crate::operator::number_op(0, 1, 0);
        let n_t = oracle.expectation(&n_op, &rho).unwrap();
        assert_abs_diff_eq!(n_t.re, (-kappa * t).exp(), epsilon = 1e-7);
    }

    #[test]
    fn lindblad_matches_pure_state_when_closed() {
        // No channels: Lindblad of projector equals Schrodinger evolution.
        let h = build_tc(1, 0.2, 0.3).unwrap();
        let basis = ProductBasis::new(1, &[4]).unwrap();
        let mut psi = basis.vacuum(0);
        let oracle = LindbladOracle::new(h.clone(), vec![], basis.clone()).unwrap();
        let dim = basis.dim();
        let mut rho = Array2::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                rho[(i, j)] = psi[i] * psi[j].conj();
            }
        }
        let t = 1.3;
        oracle.evolve(&mut rho, t, &AdaptiveOpts::default()).unwrap();
        evolve_schrodinger(&h, &basis, &mut psi, t, &AdaptiveOpts::default()).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                assert!((rho[(i, j)] - psi[i] * psi[j].conj()).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn spin_decay_channel_acts_on_excited_state() {
        // Single spin, decay gamma: P_up(t) = e^{-gamma t}.
        let gamma = 0.6;
        let h = SpinBosonOperator::zero(1, 1);
        let mut spec = LindbladSpec::default();
        spec.push(ChannelKind::SingleSpinDecay, gamma).unwrap();
        let basis = ProductBasis::new(1, &[1]).unwrap();
        let oracle = LindbladOracle::new(h, spec.jump_operators(1, 1).unwrap(), basis.clone()).unwrap();
        let mut rho = Array2::zeros((2, 2));
        rho[(0, 0)] = C64::new(1.0, 0.0); // up = excited
        let t = 0.9;
        oracle.evolve(&mut rho, t, &AdaptiveOpts::default()).unwrap();
        assert_abs_diff_eq!(rho[(0, 0)].re, (-gamma * t).exp(), epsilon = 1e-8);
        assert_abs_diff_eq!(rho[(1, 1)].re, 1.0 - (-gamma * t).exp(), epsilon = 1e-8);
    }

    #[test]
    fn budget_is_enforced() {
        assert!(ProductBasis::new(4, &[50, 50, 50]).is_err());
        let mut op = SpinBosonOperator::zero(0, 1);
        op.add_term(C64::new(1.0, 0.0), &[], &[(0, 1, 1)]).unwrap();
        let sp = SpinLabel::I;
        let _ = sp;
    }
}
