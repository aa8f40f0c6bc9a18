//! Matrix elements of spin-boson operators between variational states and
//! their tangent vectors.
//!
//! All quantities reduce to per-pair, per-mode moment tables: for every
//! (bra branch, ket branch) pair the full log-overlap is cached together
//! with one `MomentTable` per mode, and any matrix element is the cached
//! pair overlap times a handful of table lookups on the modes the operator
//! or tangent polynomial touches.

use crate::error::{Error, Result};
use crate::gaussian::{MomentCoeffs, MomentTable, NgsState, NormalOrderedForm, Shape};
use crate::operator::SpinBosonOperator;
use crate::C64;
use ndarray::Array2;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Pair overlaps below this log-magnitude contribute nothing at f64
/// precision and are skipped.
const LOG_OVERLAP_FLOOR: f64 = -600.0;

/// Largest per-mode ladder exponent the tangent-sandwich tables support.
pub const MAX_TANGENT_MONOMIAL: u8 = 2;

/// Tangent polynomial `c[0] + c[1] a^dag + c[2] a^dag^2` applied to one
/// mode of a Gaussian branch; `mode = None` for the scalar weight and phase
/// parameters, whose tangent is a constant times the branch.
#[derive(Debug, Clone, Copy)]
pub struct TangentPoly {
    pub c: [C64; 3],
    pub mode: Option<usize>,
}

impl TangentPoly {
    fn scalar(v: C64) -> Self {
        Self {
            c: [v, ZERO, ZERO],
            mode: None,
        }
    }
}

impl Shape {
    /// Mode a local block parameter acts on (`None`: weight or phase).
    pub fn local_mode(&self, local: usize) -> Option<usize> {
        if local < 2 {
            None
        } else {
            Some((local - 2) / self.params_per_mode())
        }
    }
}

/// Tangent polynomials for every variational parameter, indexed like the
/// flat parameter vector.
pub fn tangent_frame(state: &NgsState, out: &mut Vec<TangentPoly>) {
    let shape = state.shape;
    out.clear();
    out.reserve(shape.param_count());
    for sigma in 0..shape.n_configs() {
        for p in 0..shape.n_gaussians {
            out.push(TangentPoly::scalar(ONE)); // kappa
            out.push(TangentPoly::scalar(C64::i())); // theta
            for k in 0..shape.n_modes {
                let gp = state.mode_params(sigma, p, k);
                let alpha_bar = gp.alpha().conj();
                let t = gp.squeeze_t();
                // d/dx
                out.push(TangentPoly {
                    c: [t * alpha_bar - gp.x, ONE - t, ZERO],
                    mode: Some(k),
                });
                // d/dy
                out.push(TangentPoly {
                    c: [
                        -C64::i() * t * alpha_bar - gp.y,
                        C64::i() * (ONE + t),
                        ZERO,
                    ],
                    mode: Some(k),
                });
                if shape.squeezing {
                    let sech2 = 1.0 / gp.r.cosh().powi(2);
                    let dphase = C64::from_polar(sech2, gp.phi);
                    // d/dr
                    out.push(TangentPoly {
                        c: [
                            0.5 * (dphase * alpha_bar * alpha_bar - gp.r.tanh()),
                            -dphase * alpha_bar,
                            0.5 * dphase,
                        ],
                        mode: Some(k),
                    });
                    // d/dphi
                    let it = C64::i() * t;
                    out.push(TangentPoly {
                        c: [
                            0.5 * it * alpha_bar * alpha_bar,
                            -it * alpha_bar,
                            0.5 * it,
                        ],
                        mode: Some(k),
                    });
                }
            }
        }
    }
}

/// Cached overlaps and moment tables for every (bra branch, ket branch)
/// pair of two variational states. Reused across evaluations to avoid
/// churn; `build` resizes as needed.
#[derive(Debug, Default)]
pub struct PairWorkspace {
    n_cfg: usize,
    n_p: usize,
    n_modes: usize,
    /// exp(log overlap) per pair; exact zero when the overlap underflows.
    ov: Vec<C64>,
    tables: Vec<MomentTable>,
}

impl PairWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    fn pair(&self, sb: usize, pb: usize, sk: usize, pk: usize) -> usize {
        ((sb * self.n_p + pb) * self.n_cfg + sk) * self.n_p + pk
    }

    #[inline]
    fn table(&self, pair: usize, k: usize) -> &MomentTable {
        &self.tables[pair * self.n_modes + k]
    }

    /// Fill the cache for `<bra| ... |ket>` evaluations. Both states must
    /// share a shape (branch counts included).
    pub fn build(&mut self, bra: &NgsState, ket: &NgsState) -> Result<()> {
        if bra.shape != ket.shape {
            return Err(Error::ShapeMismatch(
                "pair workspace needs identically shaped states".into(),
            ));
        }
        let shape = bra.shape;
        self.n_cfg = shape.n_configs();
        self.n_p = shape.n_gaussians;
        self.n_modes = shape.n_modes;
        let n_branch = self.n_cfg * self.n_p;
        let n_pairs = n_branch * n_branch;
        self.ov.clear();
        self.ov.resize(n_pairs, ZERO);
        self.tables.clear();
        self.tables
            .resize_with(n_pairs * self.n_modes, || MomentTable::of(
                &crate::gaussian::GaussianParams::vacuum(),
                &crate::gaussian::GaussianParams::vacuum(),
            ));

        // Normal-ordered forms per branch and mode, bra and ket sides.
        let mut forms_b = Vec::with_capacity(n_branch * self.n_modes);
        let mut forms_k = Vec::with_capacity(n_branch * self.n_modes);
        for sigma in 0..self.n_cfg {
            for p in 0..self.n_p {
                for k in 0..self.n_modes {
                    forms_b.push(NormalOrderedForm::of(&bra.mode_params(sigma, p, k)));
                    forms_k.push(NormalOrderedForm::of(&ket.mode_params(sigma, p, k)));
                }
            }
        }

        for sb in 0..self.n_cfg {
            for pb in 0..self.n_p {
                let bb = (sb * self.n_p + pb) * self.n_modes;
                for sk in 0..self.n_cfg {
                    for pk in 0..self.n_p {
                        let kb = (sk * self.n_p + pk) * self.n_modes;
                        let pair = self.pair(sb, pb, sk, pk);
                        let mut log_ov = C64::new(
                            bra.kappa(sb, pb) + ket.kappa(sk, pk),
                            ket.theta(sk, pk) - bra.theta(sb, pb),
                        );
                        for k in 0..self.n_modes {
                            let nb = &forms_b[bb + k];
                            let nk = &forms_k[kb + k];
                            let abar = nb.linear.conj();
                            let bbar = nb.quadratic.conj();
                            let a1 = nk.linear;
                            let b1 = nk.quadratic;
                            let d = ONE - 4.0 * bbar * b1;
                            log_ov += nb.log_prefactor.conj() + nk.log_prefactor
                                + (abar * a1 + abar * abar * b1 + a1 * a1 * bbar) / d
                                - 0.5 * d.ln();
                        }
                        if log_ov.re < LOG_OVERLAP_FLOOR || !log_ov.re.is_finite() {
                            self.ov[pair] = ZERO;
                            continue;
                        }
                        self.ov[pair] = log_ov.exp();
                        for k in 0..self.n_modes {
                            let nb = &forms_b[bb + k];
                            let nk = &forms_k[kb + k];
                            let abar = nb.linear.conj();
                            let bbar = nb.quadratic.conj();
                            let a1 = nk.linear;
                            let b1 = nk.quadratic;
                            let d = ONE - 4.0 * bbar * b1;
                            let coeffs = MomentCoeffs {
                                cl: abar + 2.0 * bbar * (a1 + 2.0 * abar * b1) / d,
                                cm: a1 + 2.0 * b1 * (abar + 2.0 * a1 * bbar) / d,
                                cll: bbar / d,
                                cmm: b1 / d,
                                clm: 4.0 * bbar * b1 / d,
                            };
                            self.tables[pair * self.n_modes + k] =
                                MomentTable::from_coeffs(&coeffs);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// `s! C(a,s) C(b,s)` reordering coefficient.
#[inline]
fn reorder(a: usize, b: usize, s: usize) -> f64 {
    let mut acc = 1.0;
    for i in 0..s {
        acc *= ((a - i) * (b - i)) as f64 / (i + 1) as f64;
    }
    acc
}

/// `<(bra poly)^dag a^dag^m a^n (ket poly)>` on one mode, normalized by the
/// pair overlap. Bra coefficients are conjugated here.
fn mode_sandwich(
    t: &MomentTable,
    bra: Option<&TangentPoly>,
    m: usize,
    n: usize,
    ket: Option<&TangentPoly>,
) -> C64 {
    let bc = match bra {
        Some(p) => [p.c[0].conj(), p.c[1].conj(), p.c[2].conj()],
        None => [ONE, ZERO, ZERO],
    };
    let kc = match ket {
        Some(p) => p.c,
        None => [ONE, ZERO, ZERO],
    };
    let mut acc = ZERO;
    for (i, &bi) in bc.iter().enumerate() {
        if bi == ZERO {
            continue;
        }
        for (j, &kj) in kc.iter().enumerate() {
            if kj == ZERO {
                continue;
            }
            let mut val = ZERO;
            for s1 in 0..=i.min(m) {
                let c1 = reorder(i, m, s1);
                let na = i - s1 + n;
                for s2 in 0..=na.min(j) {
                    let c2 = reorder(na, j, s2);
                    val += (c1 * c2) * t.get(m - s1 + j - s2, na - s2);
                }
            }
            acc += bi * kj * val;
        }
    }
    acc
}

fn check_operator(op: &SpinBosonOperator, shape: &Shape) -> Result<()> {
    if op.n_spins != shape.n_spins || op.n_modes != shape.n_modes {
        return Err(Error::ShapeMismatch(format!(
            "operator on {} spins / {} modes vs state with {} / {}",
            op.n_spins, op.n_modes, shape.n_spins, shape.n_modes
        )));
    }
    for term in &op.terms {
        for &(_, m, n) in &term.modes {
            if m > MAX_TANGENT_MONOMIAL || n > MAX_TANGENT_MONOMIAL {
                return Err(Error::UnsupportedOrder {
                    requested: m.max(n) as usize,
                    max: MAX_TANGENT_MONOMIAL as usize,
                });
            }
        }
    }
    Ok(())
}

/// `<bra|ket>` from the cached pair overlaps.
pub fn braket(ws: &PairWorkspace) -> C64 {
    let mut acc = ZERO;
    for sigma in 0..ws.n_cfg {
        for pb in 0..ws.n_p {
            for pk in 0..ws.n_p {
                acc += ws.ov[ws.pair(sigma, pb, sigma, pk)];
            }
        }
    }
    acc
}

/// Unnormalized `<bra| op |ket>` over the workspace's state pair.
pub fn matrix_element(ws: &PairWorkspace, shape: &Shape, op: &SpinBosonOperator) -> Result<C64> {
    check_operator(op, shape)?;
    let mut acc = ZERO;
    for term in &op.terms {
        let flip = term.flip_mask();
        for sb in 0..ws.n_cfg {
            let sk = sb ^ flip;
            let phase = term.spin_elem(sb, sk);
            if phase == ZERO {
                continue;
            }
            for pb in 0..ws.n_p {
                for pk in 0..ws.n_p {
                    let pair = ws.pair(sb, pb, sk, pk);
                    let ov = ws.ov[pair];
                    if ov == ZERO {
                        continue;
                    }
                    let mut prod = ONE;
                    for &(k, m, n) in &term.modes {
                        prod *= ws.table(pair, k).get(m as usize, n as usize);
                    }
                    acc += term.coeff * phase * ov * prod;
                }
            }
        }
    }
    Ok(acc)
}

/// `out[mu] += scale * <psi| op |v_mu>` with tangents on the ket state.
///
/// The workspace must be built with both sides equal to `state`, and
/// `frame` must come from `tangent_frame(state)`.
pub fn accumulate_ket_tangent(
    ws: &PairWorkspace,
    state: &NgsState,
    frame: &[TangentPoly],
    op: &SpinBosonOperator,
    scale: C64,
    out: &mut [C64],
) -> Result<()> {
    let shape = state.shape;
    check_operator(op, &shape)?;
    if out.len() != shape.param_count() || frame.len() != shape.param_count() {
        return Err(Error::ShapeMismatch("tangent output length".into()));
    }
    let block = shape.block_len();
    for term in &op.terms {
        let flip = term.flip_mask();
        for sb in 0..ws.n_cfg {
            let sk = sb ^ flip;
            let phase = term.spin_elem(sb, sk);
            if phase == ZERO {
                continue;
            }
            let coeff = scale * term.coeff * phase;
            for pb in 0..ws.n_p {
                for pk in 0..ws.n_p {
                    let pair = ws.pair(sb, pb, sk, pk);
                    let ov = ws.ov[pair];
                    if ov == ZERO {
                        continue;
                    }
                    let mut full = ONE;
                    for &(k, m, n) in &term.modes {
                        full *= ws.table(pair, k).get(m as usize, n as usize);
                    }
                    let base = coeff * ov;
                    let off = state.block_offset(sk, pk);
                    for local in 0..block {
                        let mu = off + local;
                        let poly = &frame[mu];
                        let val = match poly.mode {
                            None => full * poly.c[0],
                            Some(kmu) => {
                                let mut prod = ONE;
                                let mut mono = (0usize, 0usize);
                                for &(k, m, n) in &term.modes {
                                    if k == kmu {
                                        mono = (m as usize, n as usize);
                                    } else {
                                        prod *= ws.table(pair, k).get(m as usize, n as usize);
                                    }
                                }
                                prod * mode_sandwich(
                                    ws.table(pair, kmu),
                                    None,
                                    mono.0,
                                    mono.1,
                                    Some(poly),
                                )
                            }
                        };
                        out[mu] += base * val;
                    }
                }
            }
        }
    }
    Ok(())
}

/// `out[mu] += scale * <v_mu| op |ket>` with tangents on the bra state.
///
/// The workspace must be built as `build(bra, ket)`; `frame` belongs to the
/// bra state.
pub fn accumulate_bra_tangent(
    ws: &PairWorkspace,
    bra: &NgsState,
    frame: &[TangentPoly],
    op: &SpinBosonOperator,
    scale: C64,
    out: &mut [C64],
) -> Result<()> {
    let shape = bra.shape;
    check_operator(op, &shape)?;
    if out.len() != shape.param_count() || frame.len() != shape.param_count() {
        return Err(Error::ShapeMismatch("tangent output length".into()));
    }
    let block = shape.block_len();
    for term in &op.terms {
        let flip = term.flip_mask();
        for sb in 0..ws.n_cfg {
            let sk = sb ^ flip;
            let phase = term.spin_elem(sb, sk);
            if phase == ZERO {
                continue;
            }
            let coeff = scale * term.coeff * phase;
            for pb in 0..ws.n_p {
                for pk in 0..ws.n_p {
                    let pair = ws.pair(sb, pb, sk, pk);
                    let ov = ws.ov[pair];
                    if ov == ZERO {
                        continue;
                    }
                    let base = coeff * ov;
                    let off = bra.block_offset(sb, pb);
                    for local in 0..block {
                        let mu = off + local;
                        let poly = &frame[mu];
                        let val = match poly.mode {
                            None => {
                                let mut full = ONE;
                                for &(k, m, n) in &term.modes {
                                    full *= ws.table(pair, k).get(m as usize, n as usize);
                                }
                                full * poly.c[0].conj()
                            }
                            Some(kmu) => {
                                let mut prod = ONE;
                                let mut mono = (0usize, 0usize);
                                for &(k, m, n) in &term.modes {
                                    if k == kmu {
                                        mono = (m as usize, n as usize);
                                    } else {
                                        prod *= ws.table(pair, k).get(m as usize, n as usize);
                                    }
                                }
                                prod * mode_sandwich(
                                    ws.table(pair, kmu),
                                    Some(poly),
                                    mono.0,
                                    mono.1,
                                    None,
                                )
                            }
                        };
                        out[mu] += base * val;
                    }
                }
            }
        }
    }
    Ok(())
}

/// `out[mu] = <psi|v_mu>` (identity-operator ket tangents): the gradient of
/// the squared norm is `2 Re` of this.
pub fn norm_tangent(
    ws: &PairWorkspace,
    state: &NgsState,
    frame: &[TangentPoly],
    out: &mut [C64],
) -> Result<()> {
    out.fill(ZERO);
    let id = SpinBosonOperator::constant(state.shape.n_spins, state.shape.n_modes, ONE);
    accumulate_ket_tangent(ws, state, frame, &id, ONE, out)
}

/// Gram matrix `A[mu][nu] = <v_mu|v_nu>` of the tangent frame; spin
/// orthogonality makes it block diagonal over configurations.
pub fn gram(
    ws: &PairWorkspace,
    state: &NgsState,
    frame: &[TangentPoly],
    a: &mut Array2<C64>,
) -> Result<()> {
    let shape = state.shape;
    let m_dim = shape.param_count();
    if a.shape() != [m_dim, m_dim] || frame.len() != m_dim {
        return Err(Error::ShapeMismatch("gram matrix dimensions".into()));
    }
    a.fill(ZERO);
    let block = shape.block_len();
    for sigma in 0..ws.n_cfg {
        for pb in 0..ws.n_p {
            let off_b = state.block_offset(sigma, pb);
            for pk in 0..ws.n_p {
                let off_k = state.block_offset(sigma, pk);
                let pair = ws.pair(sigma, pb, sigma, pk);
                let ov = ws.ov[pair];
                if ov == ZERO {
                    continue;
                }
                for lb in 0..block {
                    let mu = off_b + lb;
                    let pmu = &frame[mu];
                    for lk in 0..block {
                        let nu = off_k + lk;
                        let pnu = &frame[nu];
                        let val = match (pmu.mode, pnu.mode) {
                            (None, None) => pmu.c[0].conj() * pnu.c[0],
                            (None, Some(kn)) => {
                                pmu.c[0].conj()
                                    * mode_sandwich(ws.table(pair, kn), None, 0, 0, Some(pnu))
                            }
                            (Some(km), None) => {
                                mode_sandwich(ws.table(pair, km), Some(pmu), 0, 0, None)
                                    * pnu.c[0]
                            }
                            (Some(km), Some(kn)) => {
                                if km == kn {
                                    mode_sandwich(ws.table(pair, km), Some(pmu), 0, 0, Some(pnu))
                                } else {
                                    mode_sandwich(ws.table(pair, km), Some(pmu), 0, 0, None)
                                        * mode_sandwich(ws.table(pair, kn), None, 0, 0, Some(pnu))
                                }
                            }
                        };
                        a[(mu, nu)] += ov * val;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Gradient of the normalized expectation `<psi|op|psi> / <psi|psi>` with
/// respect to every real variational parameter, via the tangent frame:
/// `2 Re(<v_mu|op|psi> - <op> <v_mu|psi>) / <psi|psi>`.
pub fn expectation_gradient(state: &NgsState, op: &SpinBosonOperator) -> Result<Vec<f64>> {
    let mut ws = PairWorkspace::new();
    ws.build(state, state)?;
    let n2 = braket(&ws).re;
    if !(n2 > 0.0) {
        return Err(Error::NonFinite(format!("state norm^2 = {n2}")));
    }
    let mean = matrix_element(&ws, &state.shape, op)? / n2;
    let mut frame = Vec::new();
    tangent_frame(state, &mut frame);
    let m = state.shape.param_count();
    let mut c_op = vec![ZERO; m];
    accumulate_ket_tangent(&ws, state, &frame, op, ONE, &mut c_op)?;
    let mut c_n = vec![ZERO; m];
    norm_tangent(&ws, state, &frame, &mut c_n)?;
    Ok((0..m)
        .map(|mu| 2.0 * (c_op[mu] - mean * c_n[mu]).re / n2)
        .collect())
}

/// Normalized expectation value `<psi|op|psi> / <psi|psi>`; builds a fresh
/// workspace, intended for observables rather than inner loops.
pub fn expectation(state: &NgsState, op: &SpinBosonOperator) -> Result<C64> {
    let mut ws = PairWorkspace::new();
    ws.build(state, state)?;
    let n2 = braket(&ws).re;
    if !(n2 > 0.0) {
        return Err(Error::NonFinite(format!("state norm^2 = {n2}")));
    }
    Ok(matrix_element(&ws, &state.shape, op)? / n2)
}
