//! Truncated Wigner phase-space dynamics.
//!
//! Spins are sampled at the discrete Bloch latitudes `cos θ = ∓1/√3` with
//! uniform azimuth; bosonic modes are sampled from Gaussian Wigner clouds of
//! per-quadrature variance `(n̄ + 1/2)/2`. Trajectories follow Euler–Maruyama
//! updates (noise acts on the spin azimuths only) and ensembles accumulate
//! Welford means with standard errors. Mode occupations are reported both via
//! tracker variables (exact for linear loss) and via symbol estimators
//! `|A|² - 1/2`.

use crate::error::{Error, Result};
use crate::C64;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub const SQRT3: f64 = 1.732_050_807_568_877_2;
/// Polar angle of the excited-spin sampling latitude (`cos θ = -1/√3`).
pub const THETA_EXCITED: f64 = 2.186_276_035_465_284;
/// Polar angle of the ground-spin sampling latitude (`cos θ = 1/√3`).
pub const THETA_GROUND: f64 = 0.955_316_618_124_509_2;
const THETA_CLAMP: f64 = 1e-6;

/// Draw a boson symbol `A` around `alpha` with per-quadrature variance
/// `(nbar + 1/2)/2`.
pub fn sample_boson<R: Rng + ?Sized>(rng: &mut R, alpha: C64, nbar: f64) -> C64 {
    let sd = ((nbar + 0.5) / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    alpha + C64::new(sd * re, sd * im)
}

/// Draw `(θ, φ)` for a spin pinned at the excited or ground latitude.
pub fn sample_bloch<R: Rng + ?Sized>(rng: &mut R, excited: bool) -> (f64, f64) {
    let theta = if excited { THETA_EXCITED } else { THETA_GROUND };
    (theta, rng.gen::<f64>() * std::f64::consts::TAU)
}

/// Pauli symbol vector `√3 (sin θ cos φ, -sin θ sin φ, -cos θ)`.
pub fn bloch_vector(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = (theta.sin(), theta.cos());
    [
        SQRT3 * st * phi.cos(),
        -SQRT3 * st * phi.sin(),
        -SQRT3 * ct,
    ]
}

/// Observables of the per-spin model. Spin totals use `S_z = Σ_j σ_j^z / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwaObservable {
    TotalSz,
    SzSite(usize),
    CavityNumber,
    CavityNumberSymbol,
    CavityRe,
    CavityIm,
    CavityX,
    VibNumber(usize),
    VibNumberSymbol(usize),
    VibRe(usize),
}

/// Observables of the collective (Holstein–Primakoff) model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectiveObservable {
    TotalSz,
    SpinNumber,
    SpinNumberSymbol,
    CavityNumber,
    CavityNumberSymbol,
    CavityRe,
    CavityIm,
}

/// Ensemble statistics on the output grid; rows are grid points, columns the
/// requested observables.
#[derive(Debug, Clone)]
pub struct PhaseSpaceResult {
    pub grid: Vec<f64>,
    pub mean: Array2<f64>,
    pub stderr: Array2<f64>,
    pub n_traj: usize,
    /// Number of polar-angle clamp events across all trajectories and steps.
    pub clamp_events: usize,
    /// Collective model only: max over the grid of mean `N_B / 2s`.
    pub max_hp_fraction: Option<f64>,
}

/// Per-spin phase-space model: spins with azimuthal decay noise, one cavity
/// symbol with tracker, and one local vibrational symbol per spin.
#[derive(Debug, Clone)]
pub struct HtcTwaParams {
    pub n_spins: usize,
    pub delta: f64,
    /// Cavity coupling `g`; enters the drift as `g/√N_s`.
    pub coupling: f64,
    pub lambda: f64,
    pub nu: f64,
    /// Site energies; empty means all zero, otherwise length `n_spins`.
    pub epsilon: Vec<f64>,
    pub cavity_decay: f64,
    pub spin_decay: f64,
    pub collective_decay: f64,
    /// Explicit cavity rotation frequency; zero in the cavity-rotating frame.
    pub cavity_frequency: f64,
    pub cavity_alpha: C64,
    pub cavity_nbar: f64,
    /// Start all spins at the excited latitude (otherwise ground).
    pub excited: bool,
    pub dt: f64,
}

impl Default for HtcTwaParams {
    fn default() -> Self {
        HtcTwaParams {
            n_spins: 1,
            delta: 0.0,
            coupling: 0.0,
            lambda: 0.0,
            nu: 1.0,
            epsilon: Vec::new(),
            cavity_decay: 0.0,
            spin_decay: 0.0,
            collective_decay: 0.0,
            cavity_frequency: 0.0,
            cavity_alpha: C64::new(0.0, 0.0),
            cavity_nbar: 0.0,
            excited: true,
            dt: 1e-3,
        }
    }
}

/// Collective model after a first-order Holstein–Primakoff expansion around
/// the excited pole: one cavity symbol and one spin-wave symbol, each with an
/// occupation tracker.
#[derive(Debug, Clone)]
pub struct CollectiveTwaParams {
    /// Collective spin length `s = N_s/2` (half-integers allowed).
    pub s: f64,
    pub delta: f64,
    /// Coupling as it appears in the drift; pass `g/√N_s` for the
    /// cavity-normalized model.
    pub coupling: f64,
    pub cavity_decay: f64,
    pub collective_decay: f64,
    pub cavity_frequency: f64,
    pub cavity_alpha: C64,
    pub cavity_nbar: f64,
    pub dt: f64,
}

impl Default for CollectiveTwaParams {
    fn default() -> Self {
        CollectiveTwaParams {
            s: 0.5,
            delta: 0.0,
            coupling: 0.0,
            cavity_decay: 0.0,
            collective_decay: 0.0,
            cavity_frequency: 0.0,
            cavity_alpha: C64::new(0.0, 0.0),
            cavity_nbar: 0.0,
            dt: 1e-3,
        }
    }
}

trait PhaseSpaceModel {
    type State;
    fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    fn step<R: Rng + ?Sized>(
        &self,
        state: &mut Self::State,
        h: f64,
        rng: &mut R,
        clamps: &mut usize,
    );
    fn observe(&self, state: &Self::State, out: &mut [f64]);
}

struct HtcTwaState {
    theta: Vec<f64>,
    phi: Vec<f64>,
    a: C64,
    n_a: f64,
    b: Vec<C64>,
    n_b: Vec<f64>,
    dtheta: Vec<f64>,
    dphi: Vec<f64>,
    noise_amp: Vec<f64>,
}

struct HtcTwaModel<'a> {
    p: &'a HtcTwaParams,
    observables: &'a [TwaObservable],
}

impl HtcTwaModel<'_> {
    fn inv_root_ns(&self) -> f64 {
        if self.p.n_spins == 0 {
            0.0
        } else {
            1.0 / (self.p.n_spins as f64).sqrt()
        }
    }
}

impl PhaseSpaceModel for HtcTwaModel<'_> {
    type State = HtcTwaState;

    fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> HtcTwaState {
        let ns = self.p.n_spins;
        let mut theta = Vec::with_capacity(ns);
        let mut phi = Vec::with_capacity(ns);
        for _ in 0..ns {
            let (t, f) = sample_bloch(rng, self.p.excited);
            theta.push(t);
            phi.push(f);
        }
        let a = sample_boson(rng, self.p.cavity_alpha, self.p.cavity_nbar);
        let b: Vec<C64> = (0..ns)
            .map(|_| sample_boson(rng, C64::new(0.0, 0.0), 0.0))
            .collect();
        let n_b = b.iter().map(|bk| bk.norm_sqr() - 0.5).collect();
        HtcTwaState {
            theta,
            phi,
            a,
            n_a: a.norm_sqr() - 0.5,
            b,
            n_b,
            dtheta: vec![0.0; ns],
            dphi: vec![0.0; ns],
            noise_amp: vec![0.0; ns],
        }
    }

    fn step<R: Rng + ?Sized>(
        &self,
        st: &mut HtcTwaState,
        h: f64,
        rng: &mut R,
        clamps: &mut usize,
    ) {
        let ns = self.p.n_spins;
        let p = self.p;
        let inv_root = self.inv_root_ns();
        let gamma_tot = p.collective_decay + p.spin_decay;
        let half_coll = 0.5 * SQRT3 * p.collective_decay;

        // All derivatives are evaluated at the step start.
        let mut pair_sum = C64::new(0.0, 0.0);
        for j in 0..ns {
            pair_sum += C64::from_polar(st.theta[j].sin(), st.phi[j]);
        }

        for i in 0..ns {
            let (st_i, ct_i) = st.theta[i].sin_cos();
            let cot = ct_i / st_i;
            let e_iphi = C64::from_polar(1.0, st.phi[i]);
            // Σ_{j≠i} e^{i(φ_i-φ_j)} sin θ_j
            let pair = e_iphi * pair_sum.conj();
            let cos_sum = pair.re - st_i;
            let sin_sum = pair.im;
            let a_rot = st.a * e_iphi.conj();
            let eps_i = if p.epsilon.is_empty() {
                0.0
            } else {
                p.epsilon[i]
            };

            st.dtheta[i] = gamma_tot * (cot - 1.0 / (SQRT3 * st_i))
                + 2.0 * p.coupling * inv_root * a_rot.im
                - half_coll * cos_sum;
            st.dphi[i] = -p.delta + eps_i + 2.0 * p.lambda * p.nu * st.b[i].re
                - 2.0 * p.coupling * inv_root * cot * a_rot.re
                - half_coll * cot * sin_sum;
            // f(θ) = 1 + 2cot²θ - 2cotθ cscθ/√3, nonnegative on (0, π).
            let f = (1.0 + ct_i * ct_i - 2.0 * ct_i / SQRT3) / (st_i * st_i);
            st.noise_amp[i] = (gamma_tot * f).max(0.0).sqrt();
        }

        let da = -C64::new(0.5 * p.cavity_decay, p.cavity_frequency) * st.a
            - C64::i() * (0.5 * SQRT3 * p.coupling * inv_root) * pair_sum;
        let dn_a = -p.cavity_decay * st.n_a
            - SQRT3 * p.coupling * inv_root * (st.a * pair_sum.conj()).im;

        let sqrt_h = h.sqrt();
        for i in 0..ns {
            let displaced = 1.0 - SQRT3 * st.theta[i].cos();
            let db = -C64::i() * p.nu * st.b[i]
                + C64::i() * (0.5 * p.lambda * p.nu * displaced);
            let dn_b = p.lambda * p.nu * displaced * st.b[i].im;

            let noise: f64 = rng.sample(StandardNormal);
            st.phi[i] += h * st.dphi[i] + sqrt_h * st.noise_amp[i] * noise;
            let theta_new = st.theta[i] + h * st.dtheta[i];
            let clamped = theta_new.clamp(THETA_CLAMP, std::f64::consts::PI - THETA_CLAMP);
            if clamped != theta_new {
                *clamps += 1;
            }
            st.theta[i] = clamped;
            st.b[i] += h * db;
            st.n_b[i] += h * dn_b;
        }
        st.a += h * da;
        st.n_a += h * dn_a;
    }

    fn observe(&self, st: &HtcTwaState, out: &mut [f64]) {
        for (slot, obs) in out.iter_mut().zip(self.observables) {
            *slot = match *obs {
                TwaObservable::TotalSz => {
                    -0.5 * SQRT3 * st.theta.iter().map(|t| t.cos()).sum::<f64>()
                }
                TwaObservable::SzSite(i) => -SQRT3 * st.theta[i].cos(),
                TwaObservable::CavityNumber => st.n_a,
                TwaObservable::CavityNumberSymbol => st.a.norm_sqr() - 0.5,
                TwaObservable::CavityRe => st.a.re,
                TwaObservable::CavityIm => st.a.im,
                TwaObservable::CavityX => std::f64::consts::SQRT_2 * st.a.re,
                TwaObservable::VibNumber(k) => st.n_b[k],
                TwaObservable::VibNumberSymbol(k) => st.b[k].norm_sqr() - 0.5,
                TwaObservable::VibRe(k) => st.b[k].re,
            };
        }
    }
}

struct CollectiveTwaState {
    a: C64,
    n_a: f64,
    b: C64,
    n_b: f64,
}

struct CollectiveTwaModel<'a> {
    p: &'a CollectiveTwaParams,
    observables: &'a [CollectiveObservable],
}

impl PhaseSpaceModel for CollectiveTwaModel<'_> {
    type State = CollectiveTwaState;

    fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> CollectiveTwaState {
        let a = sample_boson(rng, self.p.cavity_alpha, self.p.cavity_nbar);
        let b = sample_boson(rng, C64::new(0.0, 0.0), 0.0);
        CollectiveTwaState {
            a,
            n_a: a.norm_sqr() - 0.5,
            b,
            n_b: b.norm_sqr() - 0.5,
        }
    }

    fn step<R: Rng + ?Sized>(
        &self,
        st: &mut CollectiveTwaState,
        h: f64,
        _rng: &mut R,
        _clamps: &mut usize,
    ) {
        let p = self.p;
        let s = p.s;
        let two_s = 2.0 * s;
        let g = p.coupling;
        let root_2s = two_s.sqrt();
        let gam = p.collective_decay;
        let b2 = st.b.norm_sqr();
        let depletion = 4.0 * s - st.n_b;
        let im_ab = (st.a * st.b).im;

        let da = -C64::new(0.5 * p.cavity_decay, p.cavity_frequency) * st.a
            - C64::i() * (0.5 * g / root_2s) * st.b.conj() * depletion;
        let dn_a = -p.cavity_decay * st.n_a - (g / root_2s) * im_ab * depletion;
        let db = gam * st.b * (s - 1.0 / (8.0 * s) + st.n_b * (b2 / (16.0 * s) - 0.5))
            + C64::i() * (0.5 * g / root_2s)
                * (st.a * st.b * st.b - 2.0 * st.a.conj() * (two_s - st.n_b))
            + C64::i() * p.delta * st.b;
        let curvature = b2 * (4.0 - 4.0 * two_s + b2) / (8.0 * s);
        let dn_b = gam
            * (two_s + st.n_b * (1.0 / (4.0 * s) + 2.0 * (s - 1.0) + curvature))
            - (g / root_2s) * im_ab * depletion;

        st.a += h * da;
        st.n_a += h * dn_a;
        st.b += h * db;
        st.n_b += h * dn_b;
    }

    fn observe(&self, st: &CollectiveTwaState, out: &mut [f64]) {
        for (slot, obs) in out.iter_mut().zip(self.observables) {
            *slot = match *obs {
                CollectiveObservable::TotalSz => self.p.s - st.n_b,
                CollectiveObservable::SpinNumber => st.n_b,
                CollectiveObservable::SpinNumberSymbol => st.b.norm_sqr() - 0.5,
                CollectiveObservable::CavityNumber => st.n_a,
                CollectiveObservable::CavityNumberSymbol => st.a.norm_sqr() - 0.5,
                CollectiveObservable::CavityRe => st.a.re,
                CollectiveObservable::CavityIm => st.a.im,
            };
        }
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty output grid".into()));
    }
    let mut prev = -1.0;
    for &t in grid {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidInput(format!("bad grid time {t}")));
        }
        if t <= prev {
            return Err(Error::InvalidInput("grid times must be increasing".into()));
        }
        prev = t;
    }
    Ok(())
}

fn run_phase_space<M: PhaseSpaceModel>(
    model: &M,
    n_obs: usize,
    grid: &[f64],
    n_traj: usize,
    seed: u64,
    dt: f64,
) -> Result<(Array2<f64>, Array2<f64>, usize)> {
    validate_grid(grid)?;
    if n_traj == 0 {
        return Err(Error::Ensemble("n_traj must be positive".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("bad step size {dt}")));
    }

    let mut mean = Array2::<f64>::zeros((grid.len(), n_obs));
    let mut m2 = Array2::<f64>::zeros((grid.len(), n_obs));
    let mut clamps = 0usize;
    let mut row = vec![0.0; n_obs];

    for traj in 0..n_traj {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(traj as u64);
        let mut state = model.sample_state(&mut rng);
        let mut t = 0.0;
        let count = (traj + 1) as f64;
        for (gi, &tg) in grid.iter().enumerate() {
            let span = tg - t;
            let eps = 1e-12 * (1.0 + tg.abs());
            if span > eps {
                let n_steps = (span / dt).ceil().max(1.0) as usize;
                let h = span / n_steps as f64;
                for _ in 0..n_steps {
                    model.step(&mut state, h, &mut rng, &mut clamps);
                }
            }
            t = tg;
            model.observe(&state, &mut row);
            for (k, &x) in row.iter().enumerate() {
                let delta = x - mean[(gi, k)];
                mean[(gi, k)] += delta / count;
                m2[(gi, k)] += delta * (x - mean[(gi, k)]);
            }
        }
    }

    let stderr = if n_traj > 1 {
        let denom = ((n_traj - 1) * n_traj) as f64;
        m2.mapv(|v| (v / denom).sqrt())
    } else {
        Array2::zeros(m2.dim())
    };
    Ok((mean, stderr, clamps))
}

fn validate_common(dt: f64, decays: &[f64], nbar: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("bad step size {dt}")));
    }
    for &d in decays {
        if !(d.is_finite() && d >= 0.0) {
            return Err(Error::InvalidInput(format!("negative decay rate {d}")));
        }
    }
    if !(nbar.is_finite() && nbar >= 0.0) {
        return Err(Error::InvalidInput(format!("bad thermal occupation {nbar}")));
    }
    Ok(())
}

/// Run the per-spin model and report ensemble statistics on `grid`.
pub fn run_htc_twa(
    params: &HtcTwaParams,
    observables: &[TwaObservable],
    grid: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<PhaseSpaceResult> {
    validate_common(
        params.dt,
        &[
            params.cavity_decay,
            params.spin_decay,
            params.collective_decay,
        ],
        params.cavity_nbar,
    )?;
    if !params.epsilon.is_empty() && params.epsilon.len() != params.n_spins {
        return Err(Error::ShapeMismatch(format!(
            "epsilon has {} entries for {} spins",
            params.epsilon.len(),
            params.n_spins
        )));
    }
    for obs in observables {
        let site = match *obs {
            TwaObservable::SzSite(i)
            | TwaObservable::VibNumber(i)
            | TwaObservable::VibNumberSymbol(i)
            | TwaObservable::VibRe(i) => Some(i),
            _ => None,
        };
        if let Some(i) = site {
            if i >= params.n_spins {
                return Err(Error::InvalidInput(format!(
                    "observable site {i} out of range for {} spins",
                    params.n_spins
                )));
            }
        }
    }

    let model = HtcTwaModel {
        p: params,
        observables,
    };
    let (mean, stderr, clamps) =
        run_phase_space(&model, observables.len(), grid, n_traj, seed, params.dt)?;
    Ok(PhaseSpaceResult {
        grid: grid.to_vec(),
        mean,
        stderr,
        n_traj,
        clamp_events: clamps,
        max_hp_fraction: None,
    })
}

/// Run the collective model; the result carries the peak mean spin-wave
/// occupation fraction `N_B / 2s` as a validity diagnostic.
pub fn run_collective_twa(
    params: &CollectiveTwaParams,
    observables: &[CollectiveObservable],
    grid: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<PhaseSpaceResult> {
    validate_common(
        params.dt,
        &[params.cavity_decay, params.collective_decay],
        params.cavity_nbar,
    )?;
    if !(params.s > 0.0 && params.s.is_finite()) {
        return Err(Error::InvalidInput(format!("bad spin length {}", params.s)));
    }

    let mut extended = observables.to_vec();
    let hidden = !extended.contains(&CollectiveObservable::SpinNumber);
    if hidden {
        extended.push(CollectiveObservable::SpinNumber);
    }
    let model = CollectiveTwaModel {
        p: params,
        observables: &extended,
    };
    let (mean, stderr, clamps) =
        run_phase_space(&model, extended.len(), grid, n_traj, seed, params.dt)?;

    let nb_col = extended
        .iter()
        .position(|o| *o == CollectiveObservable::SpinNumber)
        .unwrap();
    let mut max_frac: f64 = 0.0;
    for gi in 0..grid.len() {
        let frac = mean[(gi, nb_col)] / (2.0 * params.s);
        if frac.is_finite() {
            max_frac = max_frac.max(frac);
        }
    }

    let n_req = observables.len();
    let (mean, stderr) = if hidden {
        (
            mean.slice(ndarray::s![.., ..n_req]).to_owned(),
            stderr.slice(ndarray::s![.., ..n_req]).to_owned(),
        )
    } else {
        (mean, stderr)
    };
    Ok(PhaseSpaceResult {
        grid: grid.to_vec(),
        mean,
        stderr,
        n_traj,
        clamp_events: clamps,
        max_hp_fraction: Some(max_frac),
    })
}
