//! Symbolic spin-boson operators: sums of Pauli strings times normal-ordered
//! bosonic monomials.
//!
//! Every operator is a list of terms `coeff * (P_0 ... P_{Ns-1}) *
//! prod_k a_k^dag^{m_k} a_k^{n_k}`. Spin configuration bits follow the
//! state convention: bit `j` of `sigma` is spin `j`, `0 = up`.

use crate::error::{Error, Result};
use crate::C64;
use std::collections::BTreeMap;

/// Single-spin operator in a term. `Plus`/`Minus` are accepted on input and
/// expanded into Pauli combinations internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    /// Matrix element `<bra|P|ket>` in the basis (up, down), bit 0 = up.
    #[inline]
    pub fn elem(self, bra_bit: u8, ket_bit: u8) -> C64 {
        let zero = C64::new(0.0, 0.0);
        let one = C64::new(1.0, 0.0);
        match self {
            Pauli::I => {
                if bra_bit == ket_bit {
                    one
                } else {
                    zero
                }
            }
            Pauli::X => {
                if bra_bit != ket_bit {
                    one
                } else {
                    zero
                }
            }
            Pauli::Y => match (bra_bit, ket_bit) {
                (0, 1) => C64::new(0.0, -1.0),
                (1, 0) => C64::new(0.0, 1.0),
                _ => zero,
            },
            Pauli::Z => match (bra_bit, ket_bit) {
                (0, 0) => one,
                (1, 1) => -one,
                _ => zero,
            },
        }
    }

    /// Whether the operator flips the spin bit.
    #[inline]
    pub fn flips(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    /// Product `self * other = phase * result`.
    pub fn mul(self, other: Pauli) -> (C64, Pauli) {
        use Pauli::*;
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        match (self, other) {
            (I, p) | (p, I) => (one, p),
            (X, X) | (Y, Y) | (Z, Z) => (one, I),
            (X, Y) => (i, Z),
            (Y, X) => (-i, Z),
            (Y, Z) => (i, X),
            (Z, Y) => (-i, X),
            (Z, X) => (i, Y),
            (X, Z) => (-i, Y),
        }
    }

    pub fn transpose_sign(self) -> f64 {
        if self == Pauli::Y {
            -1.0
        } else {
            1.0
        }
    }
}

/// One product term. Spin factors are stored sparsely as `(site, Pauli)`
/// sorted by site; bosonic factors as `(mode, m, n)` for
/// `a_mode^dag^m a_mode^n`, sorted by mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: C64,
    pub spins: Vec<(usize, Pauli)>,
    pub modes: Vec<(usize, u8, u8)>,
}

impl Term {
    pub fn constant(coeff: C64) -> Self {
        Self {
            coeff,
            spins: Vec::new(),
            modes: Vec::new(),
        }
    }

    /// Bit mask of spins flipped by this term.
    pub fn flip_mask(&self) -> usize {
        let mut m = 0usize;
        for &(site, p) in &self.spins {
            if p.flips() {
                m |= 1 << site;
            }
        }
        m
    }

    /// Spin matrix element `<sigma_b| P |sigma_k>`; zero unless
    /// `sigma_b == sigma_k ^ flip_mask`.
    pub fn spin_elem(&self, sigma_b: usize, sigma_k: usize) -> C64 {
        let mut acc = C64::new(1.0, 0.0);
        let mut checked = 0usize;
        for &(site, p) in &self.spins {
            checked |= 1 << site;
            acc *= p.elem(((sigma_b >> site) & 1) as u8, ((sigma_k >> site) & 1) as u8);
            if acc == C64::new(0.0, 0.0) {
                return acc;
            }
        }
        if (sigma_b & !checked) != (sigma_k & !checked) {
            return C64::new(0.0, 0.0);
        }
        acc
    }

    fn key(&self) -> (Vec<(usize, Pauli)>, Vec<(usize, u8, u8)>) {
        (self.spins.clone(), self.modes.clone())
    }
}

/// Sum of terms acting on `n_spins` spins and `n_modes` bosonic modes.
#[derive(Debug, Clone)]
pub struct SpinBosonOperator {
    pub n_spins: usize,
    pub n_modes: usize,
    pub terms: Vec<Term>,
}

/// Builder-friendly spin labels including the ladder operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinLabel {
    I,
    X,
    Y,
    Z,
    Plus,
    Minus,
}

impl SpinBosonOperator {
    pub fn zero(n_spins: usize, n_modes: usize) -> Self {
        Self {
            n_spins,
            n_modes,
            terms: Vec::new(),
        }
    }

    pub fn constant(n_spins: usize, n_modes: usize, c: C64) -> Self {
        let mut op = Self::zero(n_spins, n_modes);
        op.terms.push(Term::constant(c));
        op
    }

    /// Add one term; ladder labels are expanded, sites/modes sorted and
    /// validated. `modes` entries are `(mode, m, n)`.
    pub fn add_term(
        &mut self,
        coeff: C64,
        spins: &[(usize, SpinLabel)],
        modes: &[(usize, u8, u8)],
    ) -> Result<()> {
        for &(site, _) in spins {
            if site >= self.n_spins {
                return Err(Error::InvalidInput(format!(
                    "spin site {site} out of range (n_spins={})",
                    self.n_spins
                )));
            }
        }
        for &(mode, _, _) in modes {
            if mode >= self.n_modes {
                return Err(Error::InvalidInput(format!(
                    "mode {mode} out of range (n_modes={})",
                    self.n_modes
                )));
            }
        }
        {
            let mut seen = 0usize;
            for &(site, _) in spins {
                if seen & (1 << site) != 0 {
                    return Err(Error::InvalidInput(format!(
                        "repeated spin site {site} in one term"
                    )));
                }
                seen |= 1 << site;
            }
        }
        let mut sorted_modes: Vec<(usize, u8, u8)> = modes
            .iter()
            .copied()
            .filter(|&(_, m, n)| m > 0 || n > 0)
            .collect();
        sorted_modes.sort_by_key(|&(k, _, _)| k);
        for w in sorted_modes.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidInput(format!(
                    "repeated mode {} in one term; pre-merge into a^dag^m a^n",
                    w[0].0
                )));
            }
        }

        // Expand Plus/Minus: sigma+ = (X + iY)/2, sigma- = (X - iY)/2.
        let mut expansions: Vec<(C64, Vec<(usize, Pauli)>)> = vec![(coeff, Vec::new())];
        for &(site, label) in spins {
            let branches: Vec<(C64, Pauli)> = match label {
                SpinLabel::I => vec![(C64::new(1.0, 0.0), Pauli::I)],
                SpinLabel::X => vec![(C64::new(1.0, 0.0), Pauli::X)],
                SpinLabel::Y => vec![(C64::new(1.0, 0.0), Pauli::Y)],
                SpinLabel::Z => vec![(C64::new(1.0, 0.0), Pauli::Z)],
                SpinLabel::Plus => vec![
                    (C64::new(0.5, 0.0), Pauli::X),
                    (C64::new(0.0, 0.5), Pauli::Y),
                ],
                SpinLabel::Minus => vec![
                    (C64::new(0.5, 0.0), Pauli::X),
                    (C64::new(0.0, -0.5), Pauli::Y),
                ],
            };
            let mut next = Vec::with_capacity(expansions.len() * branches.len());
            for (c0, spins0) in &expansions {
                for &(bc, bp) in &branches {
                    let mut s = spins0.clone();
                    if bp != Pauli::I {
                        s.push((site, bp));
                    }
                    next.push((c0 * bc, s));
                }
            }
            expansions = next;
        }
        for (c, mut spins) in expansions {
            spins.sort_by_key(|&(site, _)| site);
            self.terms.push(Term {
                coeff: c,
                spins,
                modes: sorted_modes.clone(),
            });
        }
        Ok(())
    }

    /// Merge identical structures, drop negligible coefficients.
    pub fn simplify(&mut self) {
        let mut map: BTreeMap<(Vec<(usize, Pauli)>, Vec<(usize, u8, u8)>), C64> = BTreeMap::new();
        for t in &self.terms {
            *map.entry(t.key()).or_insert(C64::new(0.0, 0.0)) += t.coeff;
        }
        let max_norm = map
            .values()
            .map(|c| c.norm())
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        self.terms = map
            .into_iter()
            .filter(|(_, c)| c.norm() > 1e-14 * max_norm)
            .map(|((spins, modes), coeff)| Term {
                coeff,
                spins,
                modes,
            })
            .collect();
    }

    pub fn scaled(&self, c: C64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff *= c;
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n_spins != other.n_spins || self.n_modes != other.n_modes {
            return Err(Error::ShapeMismatch("adding operators of different systems".into()));
        }
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        out.simplify();
        Ok(out)
    }

    /// Operator product; bosonic factors are re-normal-ordered mode by mode
    /// via `a^n a^dag^p = sum_s s! C(n,s) C(p,s) a^dag^{p-s} a^{n-s}`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.n_spins != other.n_spins || self.n_modes != other.n_modes {
            return Err(Error::ShapeMismatch("multiplying operators of different systems".into()));
        }
        let mut out = Self::zero(self.n_spins, self.n_modes);
        for a in &self.terms {
            for b in &other.terms {
                // Spin part.
                let mut coeff = a.coeff * b.coeff;
                let mut spins: BTreeMap<usize, Pauli> = a.spins.iter().copied().collect();
                let mut ok = true;
                for &(site, pb) in &b.spins {
                    let pa = spins.remove(&site).unwrap_or(Pauli::I);
                    let (phase, prod) = pa.mul(pb);
                    coeff *= phase;
                    if prod != Pauli::I {
                        spins.insert(site, prod);
                    }
                    if coeff == C64::new(0.0, 0.0) {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    continue;
                }
                // Bosonic part: (adag^m1 a^n1)(adag^m2 a^n2) per mode.
                let mut amodes: BTreeMap<usize, (u8, u8)> =
                    a.modes.iter().map(|&(k, m, n)| (k, (m, n))).collect();
                let bmodes: BTreeMap<usize, (u8, u8)> =
                    b.modes.iter().map(|&(k, m, n)| (k, (m, n))).collect();
                let mut branches: Vec<(f64, Vec<(usize, u8, u8)>)> = vec![(1.0, Vec::new())];
                for (&k, &(m2, n2)) in &bmodes {
                    let (m1, n1) = amodes.remove(&k).unwrap_or((0, 0));
                    // a^n1 adag^m2 reordering.
                    let mut local: Vec<(f64, u8, u8)> = Vec::new();
                    let smax = n1.min(m2);
                    for s in 0..=smax {
                        let w = falling_product(n1, s) * binomial(m2, s);
                        let m = m1 + m2 - s;
                        let n = n1 + n2 - s;
                        local.push((w, m, n));
                    }
                    let mut next = Vec::with_capacity(branches.len() * local.len());
                    for (w0, modes0) in &branches {
                        for &(w, m, n) in &local {
                            let mut ms = modes0.clone();
                            if m > 0 || n > 0 {
                                ms.push((k, m, n));
                            }
                            next.push((w0 * w, ms));
                        }
                    }
                    branches = next;
                }
                // Modes only in `a` pass through untouched.
                let rest: Vec<(usize, u8, u8)> =
                    amodes.iter().map(|(&k, &(m, n))| (k, m, n)).collect();
                for (w, mut modes) in branches {
                    modes.extend(rest.iter().copied());
                    modes.sort_by_key(|&(k, _, _)| k);
                    out.terms.push(Term {
                        coeff: coeff * w,
                        spins: spins.iter().map(|(&s, &p)| (s, p)).collect(),
                        modes,
                    });
                }
            }
        }
        out.simplify();
        Ok(out)
    }

    /// Hermitian conjugate.
    pub fn dagger(&self) -> Self {
        let mut out = Self::zero(self.n_spins, self.n_modes);
        for t in &self.terms {
            out.terms.push(Term {
                coeff: t.coeff.conj(),
                spins: t.spins.clone(),
                modes: t.modes.iter().map(|&(k, m, n)| (k, n, m)).collect(),
            });
        }
        out.simplify();
        out
    }

    /// Symbolic transpose in the product basis (Fock basis is real;
    /// `Y^T = -Y`, `(adag^m a^n)^T = adag^n a^m`).
    pub fn transpose(&self) -> Self {
        let mut out = Self::zero(self.n_spins, self.n_modes);
        for t in &self.terms {
            let sign: f64 = t.spins.iter().map(|&(_, p)| p.transpose_sign()).product();
            out.terms.push(Term {
                coeff: t.coeff * sign,
                spins: t.spins.clone(),
                modes: t.modes.iter().map(|&(k, m, n)| (k, n, m)).collect(),
            });
        }
        out.simplify();
        out
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let mut diff = self.clone();
        let dag = self.dagger();
        for t in &dag.terms {
            diff.terms.push(Term {
                coeff: -t.coeff,
                spins: t.spins.clone(),
                modes: t.modes.clone(),
            });
        }
        diff.simplify();
        let scale = self
            .terms
            .iter()
            .map(|t| t.coeff.norm())
            .fold(0.0_f64, f64::max)
            .max(1e-300);
        diff.terms.iter().all(|t| t.coeff.norm() <= tol * scale)
    }

    /// Largest `m + n` over all bosonic factors.
    pub fn max_mode_order(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| t.modes.iter())
            .map(|&(_, m, n)| (m + n) as usize)
            .max()
            .unwrap_or(0)
    }
}

#[inline]
pub(crate) fn binomial(n: u8, k: u8) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// `n! / (n-s)! * C(n,s) / C(n,s)`... helper: `s! C(n,s) = n!/(n-s)!`.
#[inline]
fn falling_product(n: u8, s: u8) -> f64 {
    let mut acc = 1.0;
    for i in 0..s {
        acc *= (n - i) as f64;
    }
    acc
}

// ---------------------------------------------------------------------------
// Model builders
// ---------------------------------------------------------------------------

/// Tavis-Cummings cavity QED with local vibrational coupling and on-site
/// disorder. Mode 0 is the cavity; modes `1..=n_spins` are the local
/// vibrations, one per spin.
#[derive(Debug, Clone)]
pub struct HtcParams {
    pub n_spins: usize,
    /// Exciton-cavity detuning Delta.
    pub detuning: f64,
    /// Collective light-matter coupling g; each spin couples with g/sqrt(Ns).
    pub coupling: f64,
    /// Vibrational (Holstein) coupling lambda, dimensionless.
    pub holstein: f64,
    /// Vibrational frequency nu (sets the energy unit when 1).
    pub vibration_frequency: f64,
    /// Static excited-state energy shifts, one per spin (empty = none).
    pub disorder: Vec<f64>,
}

impl HtcParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_spins == 0 {
            return Err(Error::InvalidInput("need at least one spin".into()));
        }
        if !self.disorder.is_empty() && self.disorder.len() != self.n_spins {
            return Err(Error::InvalidInput(format!(
                "{} disorder entries for {} spins",
                self.disorder.len(),
                self.n_spins
            )));
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        1 + self.n_spins
    }
}

/// Excited-state projector `(sigma_j^z + 1)/2` enters the Hamiltonian as
/// `sigma^z + 1`; spin up (bit 0) is the excited state.
pub fn build_htc(p: &HtcParams) -> Result<SpinBosonOperator> {
    p.validate()?;
    let ns = p.n_spins;
    let nm = p.n_modes();
    let mut h = SpinBosonOperator::zero(ns, nm);
    let g_eff = p.coupling / (ns as f64).sqrt();
    let nu = p.vibration_frequency;
    for j in 0..ns {
        // (Delta/2)(sigma_z + 1)
        h.add_term(C64::new(0.5 * p.detuning, 0.0), &[(j, SpinLabel::Z)], &[])?;
        h.add_term(C64::new(0.5 * p.detuning, 0.0), &[], &[])?;
        // cavity exchange g/sqrt(Ns) (a sigma+ + adag sigma-)
        h.add_term(C64::new(g_eff, 0.0), &[(j, SpinLabel::Plus)], &[(0, 0, 1)])?;
        h.add_term(C64::new(g_eff, 0.0), &[(j, SpinLabel::Minus)], &[(0, 1, 0)])?;
        // vibration energy nu b_j^dag b_j
        h.add_term(C64::new(nu, 0.0), &[], &[(1 + j, 1, 1)])?;
        // Holstein coupling -(lambda nu / 2)(b_j + b_j^dag)(sigma_z + 1)
        let lv = -0.5 * p.holstein * nu;
        for &(m, n) in &[(0u8, 1u8), (1u8, 0u8)] {
            h.add_term(C64::new(lv, 0.0), &[(j, SpinLabel::Z)], &[(1 + j, m, n)])?;
            h.add_term(C64::new(lv, 0.0), &[], &[(1 + j, m, n)])?;
        }
        // disorder -(eps_j/2)(sigma_z + 1)
        if !p.disorder.is_empty() {
            let e = -0.5 * p.disorder[j];
            h.add_term(C64::new(e, 0.0), &[(j, SpinLabel::Z)], &[])?;
            h.add_term(C64::new(e, 0.0), &[], &[])?;
        }
    }
    h.simplify();
    Ok(h)
}

/// Tavis-Cummings limit: cavity mode only, no vibrations.
pub fn build_tc(n_spins: usize, detuning: f64, coupling: f64) -> Result<SpinBosonOperator> {
    if n_spins == 0 {
        return Err(Error::InvalidInput("need at least one spin".into()));
    }
    let mut h = SpinBosonOperator::zero(n_spins, 1);
    let g_eff = coupling / (n_spins as f64).sqrt();
    for j in 0..n_spins {
        h.add_term(C64::new(0.5 * detuning, 0.0), &[(j, SpinLabel::Z)], &[])?;
        h.add_term(C64::new(0.5 * detuning, 0.0), &[], &[])?;
        h.add_term(C64::new(g_eff, 0.0), &[(j, SpinLabel::Plus)], &[(0, 0, 1)])?;
        h.add_term(C64::new(g_eff, 0.0), &[(j, SpinLabel::Minus)], &[(0, 1, 0)])?;
    }
    h.simplify();
    Ok(h)
}

/// Single anharmonic mode `omega n + mu n^2`.
pub fn build_anharmonic(omega: f64, mu: f64) -> SpinBosonOperator {
    let mut h = SpinBosonOperator::zero(0, 1);
    // n^2 = adag^2 a^2 + adag a
    h.add_term(C64::new(omega + mu, 0.0), &[], &[(0, 1, 1)])
        .unwrap();
    h.add_term(C64::new(mu, 0.0), &[], &[(0, 2, 2)]).unwrap();
    h
}

// ---------------------------------------------------------------------------
// Observables
// ---------------------------------------------------------------------------

pub fn total_sz(n_spins: usize, n_modes: usize) -> SpinBosonOperator {
    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
    for j in 0..n_spins {
        op.add_term(C64::new(0.5, 0.0), &[(j, SpinLabel::Z)], &[]).unwrap();
    }
    op
}

pub fn sz_site(n_spins: usize, n_modes: usize, j: usize) -> SpinBosonOperator {
    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
    op.add_term(C64::new(0.5, 0.0), &[(j, SpinLabel::Z)], &[]).unwrap();
    op
}

pub fn number_op(n_spins: usize, n_modes: usize, mode: usize) -> SpinBosonOperator {
    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
    op.add_term(C64::new(1.0, 0.0), &[], &[(mode, 1, 1)]).unwrap();
    op
}

/// Quadrature `x = (a + a^dag)/sqrt(2)`.
pub fn quadrature_x(n_spins: usize, n_modes: usize, mode: usize) -> SpinBosonOperator {
    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
    let c = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    op.add_term(c, &[], &[(mode, 0, 1)]).unwrap();
    op.add_term(c, &[], &[(mode, 1, 0)]).unwrap();
    op
}

pub fn annihilation(n_spins: usize, n_modes: usize, mode: usize) -> SpinBosonOperator {
    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
    op.add_term(C64::new(1.0, 0.0), &[], &[(mode, 0, 1)]).unwrap();
    op
}

// ---------------------------------------------------------------------------
// Dissipation channels
// ---------------------------------------------------------------------------

/// Supported jump channel families; rates multiply the canonical jump
/// operator (`L = sqrt(rate) c`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelKind {
    /// c = a (cavity mode 0)
    CavityDecay,
    /// c = sigma_j^- for every spin j (one channel per spin)
    SingleSpinDecay,
    /// c = S^- = sum_j sigma_j^-
    CollectiveSpinDecay,
    /// c = a^dag (cavity mode 0)
    SinglePhotonGain,
    /// c = x = (a + a^dag)/sqrt(2) (cavity mode 0)
    MomentumKick,
    /// c = a^2 (cavity mode 0)
    TwoPhotonLoss,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub kind: ChannelKind,
    pub rate: f64,
}

/// A set of Lindblad channels with nonnegative rates.
#[derive(Debug, Clone, Default)]
pub struct LindbladSpec {
    pub channels: Vec<Channel>,
}

impl LindbladSpec {
    pub fn push(&mut self, kind: ChannelKind, rate: f64) -> Result<()> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidInput(format!(
                "channel rate must be finite and nonnegative, got {rate}"
            )));
        }
        if rate > 0.0 {
            self.channels.push(Channel { kind, rate });
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Expand into scaled jump operators `sqrt(rate) c`, one per physical
    /// channel (per-spin channels are unrolled).
    pub fn jump_operators(&self, n_spins: usize, n_modes: usize) -> Result<Vec<SpinBosonOperator>> {
        let mut out = Vec::new();
        for ch in &self.channels {
            let s = ch.rate.sqrt();
            match ch.kind {
                ChannelKind::CavityDecay => {
                    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
                    op.add_term(C64::new(s, 0.0), &[], &[(0, 0, 1)])?;
                    out.push(op);
                }
                ChannelKind::SingleSpinDecay => {
                    for j in 0..n_spins {
                        let mut op = SpinBosonOperator::zero(n_spins, n_modes);
                        op.add_term(C64::new(s, 0.0), &[(j, SpinLabel::Minus)], &[])?;
                        out.push(op);
                    }
                }
                ChannelKind::CollectiveSpinDecay => {
                    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
                    for j in 0..n_spins {
                        op.add_term(C64::new(s, 0.0), &[(j, SpinLabel::Minus)], &[])?;
                    }
                    out.push(op);
                }
                ChannelKind::SinglePhotonGain => {
                    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
                    op.add_term(C64::new(s, 0.0), &[], &[(0, 1, 0)])?;
                    out.push(op);
                }
                ChannelKind::MomentumKick => {
                    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
                    let c = C64::new(s * std::f64::consts::FRAC_1_SQRT_2, 0.0);
                    op.add_term(c, &[], &[(0, 0, 1)])?;
                    op.add_term(c, &[], &[(0, 1, 0)])?;
                    out.push(op);
                }
                ChannelKind::TwoPhotonLoss => {
                    let mut op = SpinBosonOperator::zero(n_spins, n_modes);
                    op.add_term(C64::new(s, 0.0), &[], &[(0, 0, 2)])?;
                    out.push(op);
                }
            }
        }
        Ok(out)
    }

    /// Anti-Hermitian damping generator `K = (1/2) sum_c L_c^dag L_c`.
    pub fn damping_operator(&self, n_spins: usize, n_modes: usize) -> Result<SpinBosonOperator> {
        let mut k = SpinBosonOperator::zero(n_spins, n_modes);
        for l in self.jump_operators(n_spins, n_modes)? {
            let ldl = l.dagger().mul(&l)?;
            k = k.add(&ldl.scaled(C64::new(0.5, 0.0)))?;
        }
        Ok(k)
    }
}

// ---------------------------------------------------------------------------
// Holstein-Primakoff mappings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HpVariant {
    /// Exact spin-1/2 mapping: one new mode per spin, `|0> = up`,
    /// `sigma^+ -> (1 - n) a`, `sigma^z -> 1 - 2n`.
    SpinHalfExact,
    /// Collective large-spin expansion to first order in `1/s`: one new
    /// mode for the whole ensemble, `S^+ -> sqrt(2s)(1 - n/(4s)) a`,
    /// `S^z -> s - n`. Requires every spin term to be collective.
    LargeSpinFirstOrder { s: f64 },
}

/// Map the spin content of `op` to bosonic modes. New modes are appended
/// after the existing ones: per-spin modes in site order for
/// `SpinHalfExact`, a single mode for `LargeSpinFirstOrder`.
pub fn hp_transform(op: &SpinBosonOperator, variant: HpVariant) -> Result<SpinBosonOperator> {
    match variant {
        HpVariant::SpinHalfExact => hp_spin_half(op),
        HpVariant::LargeSpinFirstOrder { s } => hp_collective(op, s),
    }
}

/// Monomial expansion of a single-spin operator under the exact spin-1/2
/// mapping; entries are `(coeff, m, n)` on that spin's mode.
fn hp_half_monomials(p: Pauli) -> Vec<(C64, u8, u8)> {
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    // sigma+ = a - adag a^2, sigma- = adag - adag^2 a, Z = 1 - 2 adag a.
    match p {
        Pauli::I => vec![(one, 0, 0)],
        Pauli::Z => vec![(one, 0, 0), (-2.0 * one, 1, 1)],
        // X = sigma+ + sigma-
        Pauli::X => vec![(one, 0, 1), (-one, 1, 2), (one, 1, 0), (-one, 2, 1)],
        // Y = -i sigma+ + i sigma-
        Pauli::Y => vec![(-i, 0, 1), (i, 1, 2), (i, 1, 0), (-i, 2, 1)],
    }
}

fn hp_spin_half(op: &SpinBosonOperator) -> Result<SpinBosonOperator> {
    let nm_out = op.n_modes + op.n_spins;
    let mut out = SpinBosonOperator::zero(0, nm_out);
    for t in &op.terms {
        let mut branches: Vec<(C64, Vec<(usize, u8, u8)>)> = vec![(t.coeff, t.modes.clone())];
        for &(site, p) in &t.spins {
            let mode = op.n_modes + site;
            let monos = hp_half_monomials(p);
            let mut next = Vec::with_capacity(branches.len() * monos.len());
            for (c0, modes0) in &branches {
                for &(c, m, n) in &monos {
                    let mut ms = modes0.clone();
                    if m > 0 || n > 0 {
                        ms.push((mode, m, n));
                    }
                    next.push((c0 * c, ms));
                }
            }
            branches = next;
        }
        for (c, mut modes) in branches {
            modes.sort_by_key(|&(k, _, _)| k);
            out.terms.push(Term {
                coeff: c,
                spins: Vec::new(),
                modes,
            });
        }
    }
    out.simplify();
    Ok(out)
}

/// First-order collective mapping of `sum_j P_j`; entries are `(coeff, m, n)`
/// on the collective mode.
fn hp_collective_monomials(p: Pauli, s: f64) -> Vec<(C64, u8, u8)> {
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    let root = (2.0 * s).sqrt();
    let corr = root / (4.0 * s);
    match p {
        Pauli::I => unreachable!("identity has no collective bucket"),
        // sum Z_j = 2 S_z -> 2s - 2n
        Pauli::Z => vec![(2.0 * s * one, 0, 0), (-2.0 * one, 1, 1)],
        // sum X_j = S+ + S- -> sqrt(2s)[(a + adag) - (adag a^2 + adag^2 a)/(4s)]
        Pauli::X => vec![
            (root * one, 0, 1),
            (-(corr) * one, 1, 2),
            (root * one, 1, 0),
            (-(corr) * one, 2, 1),
        ],
        // sum Y_j = -i S+ + i S-
        Pauli::Y => vec![
            (-i * root, 0, 1),
            (i * corr, 1, 2),
            (i * root, 1, 0),
            (-i * corr, 2, 1),
        ],
    }
}

fn hp_collective(op: &SpinBosonOperator, s: f64) -> Result<SpinBosonOperator> {
    if !(s > 0.0) {
        return Err(Error::InvalidInput(format!("collective spin s must be positive, got {s}")));
    }
    let ns = op.n_spins;
    let mode = op.n_modes;
    let mut out = SpinBosonOperator::zero(0, op.n_modes + 1);
    // Bucket single-spin terms by (bosonic part, Pauli); pass through
    // pure-boson terms; reject multi-spin terms.
    let mut buckets: BTreeMap<(Vec<(usize, u8, u8)>, Pauli), Vec<(usize, C64)>> = BTreeMap::new();
    for t in &op.terms {
        match t.spins.len() {
            0 => out.terms.push(Term {
                coeff: t.coeff,
                spins: Vec::new(),
                modes: t.modes.clone(),
            }),
            1 => {
                let (site, p) = t.spins[0];
                buckets
                    .entry((t.modes.clone(), p))
                    .or_default()
                    .push((site, t.coeff));
            }
            _ => {
                return Err(Error::InvalidInput(
                    "collective mapping needs single-spin terms; found a multi-spin product".into(),
                ))
            }
        }
    }
    for ((modes, p), entries) in buckets {
        if entries.len() != ns {
            return Err(Error::InvalidInput(format!(
                "spin structure is not collective: {:?} acts on {} of {} sites",
                p,
                entries.len(),
                ns
            )));
        }
        let c0 = entries[0].1;
        for &(site, c) in &entries {
            if (c - c0).norm() > 1e-12 * c0.norm().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "spin structure is not collective: {p:?} coefficient differs at site {site}"
                )));
            }
        }
        for (cb, m, n) in hp_collective_monomials(p, s) {
            let mut ms = modes.clone();
            if m > 0 || n > 0 {
                ms.push((mode, m, n));
            }
            ms.sort_by_key(|&(k, _, _)| k);
            out.terms.push(Term {
                coeff: c0 * cb,
                spins: Vec::new(),
                modes: ms,
            });
        }
    }
    out.simplify();
    Ok(out)
}

/// Collective lowering operator `S^- = sum_j sigma_j^-` under the first-order
/// mapping, scaled by `sqrt(rate)`: `sqrt(rate) sqrt(2s) (adag - adag^2 a /(4s))`.
pub fn collective_lowering_hp(n_modes_before: usize, s: f64, rate: f64) -> SpinBosonOperator {
    let mode = n_modes_before;
    let mut op = SpinBosonOperator::zero(0, n_modes_before + 1);
    let c = rate.sqrt() * (2.0 * s).sqrt();
    op.add_term(C64::new(c, 0.0), &[], &[(mode, 1, 0)]).unwrap();
    op.add_term(C64::new(-c / (4.0 * s), 0.0), &[], &[(mode, 2, 1)])
        .unwrap();
    op
}

/// Damping generator for collective decay,
/// `K = (Gamma/2) S^+ S^- = Gamma [s + (s-1) a^dag a - a^dag^2 a^2 / 2]`.
///
/// `S^+ S^-` depends only on `S^z = s - n`, so this form is exact on the
/// Dicke ladder even though the jump operator itself is truncated.
pub fn collective_damping_hp(n_modes_before: usize, s: f64, rate: f64) -> SpinBosonOperator {
    let mode = n_modes_before;
    let mut op = SpinBosonOperator::zero(0, n_modes_before + 1);
    op.add_term(C64::new(rate * s, 0.0), &[], &[]).unwrap();
    op.add_term(C64::new(rate * (s - 1.0), 0.0), &[], &[(mode, 1, 1)])
        .unwrap();
    op.add_term(C64::new(-0.5 * rate, 0.0), &[], &[(mode, 2, 2)])
        .unwrap();
    op
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pauli_products_close() {
        let (c, p) = Pauli::X.mul(Pauli::Y);
        assert_eq!(p, Pauli::Z);
        assert_eq!(c, C64::new(0.0, 1.0));
        let (c, p) = Pauli::Y.mul(Pauli::X);
        assert_eq!(p, Pauli::Z);
        assert_eq!(c, C64::new(0.0, -1.0));
        // sigma+ sigma- = (1 + Z)/2 on the matrix level.
        for bra in 0..2u8 {
            for ket in 0..2u8 {
                let mut acc = C64::new(0.0, 0.0);
                for mid in 0..2u8 {
                    let plus = 0.5 * (Pauli::X.elem(bra, mid) + C64::i() * Pauli::Y.elem(bra, mid));
                    let minus =
                        0.5 * (Pauli::X.elem(mid, ket) - C64::i() * Pauli::Y.elem(mid, ket));
                    acc += plus * minus;
                }
                let expect = 0.5 * (Pauli::I.elem(bra, ket) + Pauli::Z.elem(bra, ket));
                assert!((acc - expect).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn ladder_expansion_matches_matrix() {
        let mut op = SpinBosonOperator::zero(1, 1);
        op.add_term(C64::new(1.0, 0.0), &[(0, SpinLabel::Plus)], &[]).unwrap();
        op.simplify();
        // sigma+ = |up><down|: only element (0, 1).
        let mut elems = [[C64::new(0.0, 0.0); 2]; 2];
        for t in &op.terms {
            for b in 0..2 {
                for k in 0..2 {
                    elems[b][k] += t.coeff * t.spin_elem(b, k);
                }
            }
        }
        assert!((elems[0][1] - C64::new(1.0, 0.0)).norm() < 1e-15);
        for (b, k) in [(0, 0), (1, 0), (1, 1)] {
            assert!(elems[b][k].norm() < 1e-15);
        }
    }

    #[test]
    fn product_normal_orders_bosons() {
        // a * adag = adag a + 1.
        let mut a = SpinBosonOperator::zero(0, 1);
        a.add_term(C64::new(1.0, 0.0), &[], &[(0, 0, 1)]).unwrap();
        let ad = a.dagger();
        let prod = a.mul(&ad).unwrap();
        let mut constant = C64::new(0.0, 0.0);
        let mut number = C64::new(0.0, 0.0);
        for t in &prod.terms {
            if t.modes.is_empty() {
                constant += t.coeff;
            } else if t.modes == vec![(0, 1, 1)] {
                number += t.coeff;
            } else {
                panic!("unexpected term {t:?}");
            }
        }
        assert!((constant - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((number - C64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn product_higher_order_commutator() {
        // a^2 adag^2 = adag^2 a^2 + 4 adag a + 2.
        let mut a2 = SpinBosonOperator::zero(0, 1);
        a2.add_term(C64::new(1.0, 0.0), &[], &[(0, 0, 2)]).unwrap();
        let prod = a2.mul(&a2.dagger()).unwrap();
        let find = |modes: &[(usize, u8, u8)]| -> C64 {
            prod.terms
                .iter()
                .find(|t| t.modes == modes)
                .map(|t| t.coeff)
                .unwrap_or(C64::new(0.0, 0.0))
        };
        assert!((find(&[]) - C64::new(2.0, 0.0)).norm() < 1e-14);
        assert!((find(&[(0, 1, 1)]) - C64::new(4.0, 0.0)).norm() < 1e-14);
        assert!((find(&[(0, 2, 2)]) - C64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn htc_is_hermitian() {
        let h = build_htc(&HtcParams {
            n_spins: 3,
            detuning: 0.7,
            coupling: 0.4,
            holstein: 1.1,
            vibration_frequency: 1.0,
            disorder: vec![0.1, -0.2, 0.3],
        })
        .unwrap();
        assert!(h.is_hermitian(1e-12));
        assert_eq!(h.max_mode_order(), 2);
    }

    #[test]
    fn damping_operator_is_hermitian_and_positive_diagonal() {
        let mut spec = LindbladSpec::default();
        spec.push(ChannelKind::CavityDecay, 0.3).unwrap();
        spec.push(ChannelKind::SingleSpinDecay, 0.2).unwrap();
        spec.push(ChannelKind::TwoPhotonLoss, 0.1).unwrap();
        let k = spec.damping_operator(2, 1).unwrap();
        assert!(k.is_hermitian(1e-12));
        // K for cavity decay alone contains (kappa/2) n.
        let mut solo = LindbladSpec::default();
        solo.push(ChannelKind::CavityDecay, 0.3).unwrap();
        let k1 = solo.damping_operator(0, 1).unwrap();
        assert_eq!(k1.terms.len(), 1);
        assert!((k1.terms[0].coeff - C64::new(0.15, 0.0)).norm() < 1e-15);
        assert_eq!(k1.terms[0].modes, vec![(0, 1, 1)]);
    }

    #[test]
    fn momentum_kick_damping_matches_quadrature_square() {
        let mut spec = LindbladSpec::default();
        spec.push(ChannelKind::MomentumKick, 2.0).unwrap();
        let k = spec.damping_operator(0, 1).unwrap();
        // x^2/2 * 2.0 = (a + adag)^2 / 2 = (a^2 + adag^2 + 2n + 1)/2.
        let find = |modes: &[(usize, u8, u8)]| -> C64 {
            k.terms
                .iter()
                .find(|t| t.modes == modes)
                .map(|t| t.coeff)
                .unwrap_or(C64::new(0.0, 0.0))
        };
        assert!((find(&[]) - C64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((find(&[(0, 1, 1)]) - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((find(&[(0, 2, 0)]) - C64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((find(&[(0, 0, 2)]) - C64::new(0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn hp_spin_half_preserves_algebra() {
        // sigma+ sigma- maps to (1 - n) n + ... : check on the first two
        // Fock levels it matches the projector onto the up state.
        let mut sp = SpinBosonOperator::zero(1, 0);
        sp.add_term(C64::new(1.0, 0.0), &[(0, SpinLabel::Plus)], &[]).unwrap();
        let sm = sp.dagger();
        let proj_up = sp.mul(&sm).unwrap();
        let hp = hp_transform(&proj_up, HpVariant::SpinHalfExact).unwrap();
        // Expect diag(1, 0) on Fock levels 0, 1 of the new mode.
        let diag = |n: u64| -> C64 {
            hp.terms
                .iter()
                .map(|t| {
                    let mut v = t.coeff;
                    for &(_, m, nn) in &t.modes {
                        // <n| adag^m a^nn |n> nonzero only for m == nn <= n.
                        if m != nn || (nn as u64) > n {
                            v = C64::new(0.0, 0.0);
                        } else {
                            let mut w = 1.0;
                            for i in 0..nn as u64 {
                                w *= (n - i) as f64;
                            }
                            v *= w;
                        }
                    }
                    v
                })
                .sum()
        };
        assert!((diag(0) - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(diag(1).norm() < 1e-14);
    }

    #[test]
    fn hp_collective_detects_structure() {
        let h = build_tc(3, 0.5, 0.3).unwrap();
        let s = 1.5;
        let hp = hp_transform(&h, HpVariant::LargeSpinFirstOrder { s }).unwrap();
        assert_eq!(hp.n_modes, 2);
        assert_eq!(hp.n_spins, 0);
        // A non-collective perturbation must be rejected.
        let mut bad = h.clone();
        bad.add_term(C64::new(0.01, 0.0), &[(1, SpinLabel::Z)], &[]).unwrap();
        bad.simplify();
        assert!(hp_transform(&bad, HpVariant::LargeSpinFirstOrder { s }).is_err());
    }

    /// `<k + m - n | adag^m a^n | k>` in a Fock basis.
    fn fock_elem(m: u8, n: u8, k: u64) -> f64 {
        if (n as u64) > k {
            return 0.0;
        }
        let low = k - n as u64;
        let mut down = 1.0;
        for i in 0..n as u64 {
            down *= (k - i) as f64;
        }
        let mut up = 1.0;
        for i in 0..m as u64 {
            up *= (low + 1 + i) as f64;
        }
        (down * up).sqrt()
    }

    #[test]
    fn hp_collective_matrix_elements_near_exact() {
        // <k-1| S+ |k> on Dicke states: exact sqrt(k (2s - k + 1)) versus
        // first order sqrt(2s) (1 - (k-1)/(4s)) sqrt(k).
        let ns = 6;
        let s = ns as f64 / 2.0;
        let mut sum_plus = SpinBosonOperator::zero(ns, 0);
        for j in 0..ns {
            sum_plus
                .add_term(C64::new(1.0, 0.0), &[(j, SpinLabel::Plus)], &[])
                .unwrap();
        }
        let hp = hp_transform(&sum_plus, HpVariant::LargeSpinFirstOrder { s }).unwrap();
        for k in 1..=3u64 {
            let mut got = C64::new(0.0, 0.0);
            for t in &hp.terms {
                assert_eq!(t.modes.len(), 1);
                let (_, m, n) = t.modes[0];
                if k + m as u64 == k - 1 + n as u64 {
                    got += t.coeff * fock_elem(m, n, k);
                }
            }
            let exact = (k as f64 * (2.0 * s - k as f64 + 1.0)).sqrt();
            let first = (2.0 * s).sqrt() * (1.0 - (k as f64 - 1.0) / (4.0 * s)) * (k as f64).sqrt();
            assert!(
                (got.re - first).abs() < 1e-12,
                "k={k} got={got} first-order={first}"
            );
            // Truncation error is second order: ~ (k-1)^2/(32 s^2) sqrt(2sk).
            let bound = (k as f64 - 1.0).powi(2) / (16.0 * s * s) * (2.0 * s * k as f64).sqrt() + 1e-12;
            assert!((exact - first).abs() <= bound, "k={k}");
        }
    }

    #[test]
    fn collective_damping_exact_on_ladder() {
        // K = (Gamma/2) S+ S- depends only on S_z, so the bosonized form is
        // exact: <k|K|k> = (Gamma/2) (k+1) (2s - k), k de-excitations down
        // from the all-up state.
        let s = 4.0;
        let gamma = 0.7;
        let k_op = collective_damping_hp(0, s, gamma);
        for k in 0..=8u64 {
            let got: f64 = k_op
                .terms
                .iter()
                .map(|t| {
                    if t.modes.is_empty() {
                        t.coeff.re
                    } else {
                        let (_, m, n) = t.modes[0];
                        if m == n {
                            t.coeff.re * fock_elem(m, n, k)
                        } else {
                            0.0
                        }
                    }
                })
                .sum();
            let expect = 0.5 * gamma * (k as f64 + 1.0) * (2.0 * s - k as f64);
            assert!((got - expect).abs() < 1e-10, "k={k} got={got} expect={expect}");
        }
        // Relative to (1/2) L^dag L of the truncated jump operator, every
        // residual term carries a 1/s-suppressed coefficient.
        let l = collective_lowering_hp(0, s, gamma);
        let half_ldl = l.dagger().mul(&l).unwrap().scaled(C64::new(0.5, 0.0));
        let diff = half_ldl.add(&k_op.scaled(C64::new(-1.0, 0.0))).unwrap();
        for t in &diff.terms {
            if t.modes.is_empty() {
                assert!(t.coeff.norm() < 1e-12, "constant leftover {t:?}");
                continue;
            }
            assert!(t.coeff.norm() <= gamma / (4.0 * s) + 1e-12, "{t:?}");
        }
    }

    #[test]
    fn transpose_matches_dagger_for_real_operators() {
        let h = build_htc(&HtcParams {
            n_spins: 2,
            detuning: 0.3,
            coupling: 0.2,
            holstein: 0.5,
            vibration_frequency: 1.0,
            disorder: vec![],
        })
        .unwrap();
        // H real symmetric in this basis: transpose == dagger == itself.
        let tr = h.transpose();
        let dg = h.dagger();
        let diff = tr.add(&dg.scaled(C64::new(-1.0, 0.0))).unwrap();
        assert!(diff.terms.is_empty());
    }
}
