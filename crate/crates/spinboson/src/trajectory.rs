//! Quantum-trajectory unraveling over the variational manifold.
//!
//! Between jumps the state follows the non-unitary flow, split per step into
//! a norm-conserving Hamiltonian substep and a norm-decaying damping substep.
//! A jump fires when the squared norm crosses a uniform threshold; the jump
//! time is located by linear interpolation in the squared norm and the step
//! is re-integrated up to it. Channels act either exactly (coherent-state
//! eigenoperators, single-spin lowering) or through fidelity-maximizing
//! gradient ascent back onto the manifold.

use crate::energy::{
    accumulate_bra_tangent, braket, matrix_element, norm_tangent, tangent_frame, PairWorkspace,
    TangentPoly,
};
use crate::error::{Error, Result};
use crate::gaussian::{NgsState, Shape};
use crate::geometry::{FlowMode, GeometryOpts, NgsFlow};
use crate::integrate::rk4;
use crate::operator::{ChannelKind, LindbladSpec, SpinBosonOperator};
use crate::C64;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
/// Weight offset (in log amplitude) assigned to emptied components so they
/// stay numerically revivable by later dynamics.
const EMPTY_KAPPA_OFFSET: f64 = 9.0;

// ---------------------------------------------------------------------------
// Manifold projection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct GdOpts {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub init_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Perturbation applied once when the initial gradient vanishes
    /// (e.g. photon gain on the vacuum sits at a stationary point).
    pub jitter: f64,
}

impl Default for GdOpts {
    fn default() -> Self {
        Self {
            max_iters: 400,
            grad_tol: 1e-10,
            init_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 40,
            jitter: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub state: NgsState,
    /// `|<out|c|in>|^2 / (<out|out> <in|c^dag c|in>)`, 1 when `c|in>` is
    /// representable.
    pub fidelity: f64,
    pub iters: usize,
}

/// Shared evaluation of the projection objective
/// `F(z) = |<z|c|pre>|^2 / (<z|z> <pre|c^dag c|pre>)` and its gradient.
struct Projector<'a> {
    pre: &'a NgsState,
    op: &'a SpinBosonOperator,
    cc_norm: f64,
    cross_ws: PairWorkspace,
    self_ws: PairWorkspace,
    frame: Vec<TangentPoly>,
    bt: Vec<C64>,
    nt: Vec<C64>,
}

impl<'a> Projector<'a> {
    fn new(
        pre: &'a NgsState,
        op: &'a SpinBosonOperator,
        op_dag_op: &SpinBosonOperator,
    ) -> Result<Self> {
        let mut ws = PairWorkspace::new();
        ws.build(pre, pre)?;
        let cc_norm = matrix_element(&ws, &pre.shape, op_dag_op)?.re;
        if !(cc_norm > 0.0) || !cc_norm.is_finite() {
            return Err(Error::Jump(format!(
                "projection target has weight <c^dag c> = {cc_norm}"
            )));
        }
        let m = pre.shape.param_count();
        Ok(Self {
            pre,
            op,
            cc_norm,
            cross_ws: PairWorkspace::new(),
            self_ws: PairWorkspace::new(),
            frame: Vec::new(),
            bt: vec![ZERO; m],
            nt: vec![ZERO; m],
        })
    }

    /// Returns `(F, O, n2)` with `O = <cand|c|pre>` and `n2 = <cand|cand>`;
    /// leaves the workspaces built at `cand`.
    fn objective(&mut self, cand: &NgsState) -> Result<(f64, C64, f64)> {
        self.cross_ws.build(cand, self.pre)?;
        let o = matrix_element(&self.cross_ws, &cand.shape, self.op)?;
        self.self_ws.build(cand, cand)?;
        let n2 = braket(&self.self_ws).re;
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::NonFinite(format!("candidate norm^2 = {n2}")));
        }
        Ok((o.norm_sqr() / (n2 * self.cc_norm), o, n2))
    }

    /// Gradient of F at `cand`; requires the workspaces built there.
    fn gradient(&mut self, cand: &NgsState, f: f64, o: C64, n2: f64, out: &mut [f64]) -> Result<()> {
        tangent_frame(cand, &mut self.frame);
        self.bt.fill(ZERO);
        accumulate_bra_tangent(&self.cross_ws, cand, &self.frame, self.op, ONE, &mut self.bt)?;
        norm_tangent(&self.self_ws, cand, &self.frame, &mut self.nt)?;
        let oc = o.conj();
        for mu in 0..out.len() {
            let d_osq = 2.0 * (oc * self.bt[mu]).re;
            let d_n2 = 2.0 * self.nt[mu].re;
            out[mu] = (d_osq / self.cc_norm - f * d_n2) / n2;
        }
        Ok(())
    }
}

/// Project `c|pre>` back onto the manifold by gradient ascent on the
/// fidelity, starting from `init`. The result is never worse than `init`.
pub fn project_gd<R: Rng + ?Sized>(
    pre: &NgsState,
    op: &SpinBosonOperator,
    op_dag_op: &SpinBosonOperator,
    init: &NgsState,
    opts: &GdOpts,
    rng: &mut R,
) -> Result<ProjectionResult> {
    let mut proj = Projector::new(pre, op, op_dag_op)?;
    let m = init.shape.param_count();
    let mut cand = init.clone();
    let (mut f, mut o, mut n2) = proj.objective(&cand)?;
    let mut best = cand.clone();
    let mut best_f = f;
    let mut grad = vec![0.0; m];
    let mut trial = cand.clone();
    let mut step = opts.init_step;
    let mut jittered = false;
    let mut iters = 0;
    while iters < opts.max_iters {
        iters += 1;
        proj.gradient(&cand, f, o, n2, &mut grad)?;
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() < opts.grad_tol * (1.0 + f.abs()) {
            if !jittered && f < 0.5 {
                jittered = true;
                for v in cand.z.iter_mut() {
                    *v += rng.gen::<f64>() * opts.jitter;
                }
                let r = proj.objective(&cand)?;
                f = r.0;
                o = r.1;
                n2 = r.2;
                continue;
            }
            break;
        }
        let mut s = step;
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            trial.z.copy_from_slice(&cand.z);
            for (v, g) in trial.z.iter_mut().zip(grad.iter()) {
                *v += s * g;
            }
            if let Ok((f2, o2, n22)) = proj.objective(&trial) {
                if f2 >= f + opts.armijo * s * gnorm2 {
                    std::mem::swap(&mut cand.z, &mut trial.z);
                    f = f2;
                    o = o2;
                    n2 = n22;
                    accepted = true;
                    if f > best_f {
                        best_f = f;
                        best.z.copy_from_slice(&cand.z);
                    }
                    step = (s * 2.0).min(opts.init_step);
                    break;
                }
            }
            s *= opts.shrink;
        }
        if !accepted {
            break;
        }
    }
    Ok(ProjectionResult {
        state: best,
        fidelity: best_f,
        iters,
    })
}

/// Simulated-annealing cross-check for the same objective; slower and
/// stochastic, kept as an independent verification of the ascent result.
pub fn project_anneal<R: Rng + ?Sized>(
    pre: &NgsState,
    op: &SpinBosonOperator,
    op_dag_op: &SpinBosonOperator,
    init: &NgsState,
    sweeps: usize,
    rng: &mut R,
) -> Result<ProjectionResult> {
    let mut proj = Projector::new(pre, op, op_dag_op)?;
    let m = init.shape.param_count();
    let mut cand = init.clone();
    let (mut f, _, _) = proj.objective(&cand)?;
    let mut best = cand.clone();
    let mut best_f = f;
    let n_props = sweeps * m;
    let (t0, t1) = (1e-2_f64, 1e-6_f64);
    let mut trial = cand.clone();
    for k in 0..n_props {
        let temp = t0 * (t1 / t0).powf(k as f64 / (n_props.max(2) - 1) as f64);
        let sigma = 0.3 * temp.sqrt();
        let j = rng.gen_range(0..m);
        trial.z.copy_from_slice(&cand.z);
        // Box-Muller keeps the dependency surface small here.
        let (u1, u2) = (rng.gen::<f64>().max(1e-12), rng.gen::<f64>());
        let normal = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        trial.z[j] += sigma * normal;
        if let Ok((f2, _, _)) = proj.objective(&trial) {
            let accept = f2 >= f || rng.gen::<f64>() < ((f2 - f) / temp).exp();
            if accept {
                std::mem::swap(&mut cand.z, &mut trial.z);
                f = f2;
                if f > best_f {
                    best_f = f;
                    best.z.copy_from_slice(&cand.z);
                }
            }
        }
    }
    Ok(ProjectionResult {
        state: best,
        fidelity: best_f,
        iters: n_props,
    })
}

// ---------------------------------------------------------------------------
// Jump channels
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JumpRoute {
    /// The channel acts on unsqueezed coherent components as
    /// `amp * alpha^power`, a pure weight/phase update.
    ModeScale { mode: usize, power: u32, amp: f64 },
    /// Single-spin lowering moves each excited spin sector onto its
    /// de-excited partner wholesale.
    SpinRelabel { site: usize },
    /// Generic channel: gradient-ascent projection of `c|psi>`.
    Project,
}

#[derive(Debug, Clone)]
pub struct JumpChannel {
    pub op: SpinBosonOperator,
    /// `c^dag c`, used for channel selection weights and fidelity norms.
    pub weight_op: SpinBosonOperator,
    pub route: JumpRoute,
}

impl JumpChannel {
    pub fn new(op: SpinBosonOperator, route: JumpRoute) -> Result<Self> {
        let weight_op = op.dagger().mul(&op)?;
        Ok(Self {
            op,
            weight_op,
            route,
        })
    }

    /// For channels whose normal-ordered `c^dag c` exceeds the supported
    /// monomial order, an equivalent weight operator is supplied directly.
    pub fn with_weight(
        op: SpinBosonOperator,
        weight_op: SpinBosonOperator,
        route: JumpRoute,
    ) -> Self {
        Self {
            op,
            weight_op,
            route,
        }
    }
}

/// Build jump channels for the standard Lindblad set, choosing exact routes
/// where the channel action stays on the manifold.
pub fn standard_channels(spec: &LindbladSpec, shape: &Shape) -> Result<Vec<JumpChannel>> {
    let ops = spec.jump_operators(shape.n_spins, shape.n_modes)?;
    let mut routes = Vec::with_capacity(ops.len());
    for ch in &spec.channels {
        match ch.kind {
            ChannelKind::CavityDecay => routes.push(if shape.squeezing {
                JumpRoute::Project
            } else {
                JumpRoute::ModeScale {
                    mode: 0,
                    power: 1,
                    amp: ch.rate.sqrt(),
                }
            }),
            ChannelKind::TwoPhotonLoss => routes.push(if shape.squeezing {
                JumpRoute::Project
            } else {
                JumpRoute::ModeScale {
                    mode: 0,
                    power: 2,
                    amp: ch.rate.sqrt(),
                }
            }),
            ChannelKind::SingleSpinDecay => {
                for site in 0..shape.n_spins {
                    routes.push(JumpRoute::SpinRelabel { site });
                }
            }
            ChannelKind::CollectiveSpinDecay
            | ChannelKind::SinglePhotonGain
            | ChannelKind::MomentumKick => routes.push(JumpRoute::Project),
        }
    }
    if routes.len() != ops.len() {
        return Err(Error::Jump("channel/route bookkeeping mismatch".into()));
    }
    ops.into_iter()
        .zip(routes)
        .map(|(op, route)| JumpChannel::new(op, route))
        .collect()
}

/// Apply one jump channel in place; returns the projection fidelity
/// (1 for exact routes). The state is left unnormalized.
pub fn apply_channel<R: Rng + ?Sized>(
    state: &mut NgsState,
    channel: &JumpChannel,
    gd: &GdOpts,
    rng: &mut R,
) -> Result<f64> {
    match channel.route {
        JumpRoute::ModeScale { mode, power, amp } => {
            apply_mode_scale(state, mode, power, amp)?;
            Ok(1.0)
        }
        JumpRoute::SpinRelabel { site } => {
            apply_spin_relabel(state, site)?;
            Ok(1.0)
        }
        JumpRoute::Project => {
            let res = project_gd(state, &channel.op, &channel.weight_op, state, gd, rng)?;
            *state = res.state;
            Ok(res.fidelity)
        }
    }
}

fn apply_mode_scale(state: &mut NgsState, mode: usize, power: u32, amp: f64) -> Result<()> {
    let shape = state.shape;
    if shape.squeezing {
        return Err(Error::Jump(
            "coherent eigen-action route is exact only without squeezing".into(),
        ));
    }
    if mode >= shape.n_modes {
        return Err(Error::ShapeMismatch("channel mode out of range".into()));
    }
    let mut updates = Vec::with_capacity(shape.n_configs() * shape.n_gaussians);
    let mut kappa_max = f64::NEG_INFINITY;
    for sigma in 0..shape.n_configs() {
        for p in 0..shape.n_gaussians {
            let bo = state.block_offset(sigma, p);
            let mo = state.mode_offset(sigma, p, mode);
            let alpha = C64::new(state.z[mo], state.z[mo + 1]);
            let mag = alpha.norm();
            if mag < 1e-150 {
                updates.push((bo, None));
            } else {
                let factor = alpha.powu(power) * amp;
                let kappa = state.z[bo] + factor.norm().ln();
                updates.push((bo, Some((kappa, factor.arg()))));
                kappa_max = kappa_max.max(kappa);
            }
        }
    }
    if !kappa_max.is_finite() {
        return Err(Error::Jump(
            "annihilation-type jump emptied every component".into(),
        ));
    }
    for (bo, u) in updates {
        match u {
            Some((kappa, dtheta)) => {
                state.z[bo] = kappa;
                state.z[bo + 1] += dtheta;
            }
            None => {
                state.z[bo] = kappa_max - EMPTY_KAPPA_OFFSET;
                state.z[bo + 1] = 0.0;
            }
        }
    }
    Ok(())
}

fn apply_spin_relabel(state: &mut NgsState, site: usize) -> Result<()> {
    let shape = state.shape;
    if site >= shape.n_spins {
        return Err(Error::ShapeMismatch("channel spin site out of range".into()));
    }
    let mask = 1usize << site;
    let bl = shape.block_len();
    let old = state.z.clone();
    let mut kappa_max = f64::NEG_INFINITY;
    for tau in 0..shape.n_configs() {
        // Bit set means de-excited: it receives its excited partner.
        if tau & mask != 0 {
            for p in 0..shape.n_gaussians {
                let src = state.block_offset(tau ^ mask, p);
                let dst = state.block_offset(tau, p);
                state.z[dst..dst + bl].copy_from_slice(&old[src..src + bl]);
                kappa_max = kappa_max.max(state.z[dst]);
            }
        }
    }
    if !kappa_max.is_finite() {
        return Err(Error::Jump("spin lowering produced an empty state".into()));
    }
    for tau in 0..shape.n_configs() {
        if tau & mask == 0 {
            for p in 0..shape.n_gaussians {
                let dst = state.block_offset(tau, p);
                for v in state.z[dst..dst + bl].iter_mut() {
                    *v = 0.0;
                }
                state.z[dst] = kappa_max - EMPTY_KAPPA_OFFSET;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Trajectory engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepScheme {
    /// Split each step into a Hamiltonian substep and a damping substep.
    Trotter,
    /// Integrate the combined non-unitary flow in one substep.
    Joint,
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectoryOpts {
    pub dt: f64,
    /// Fixed RK4 substeps inside each Trotter substep.
    pub substeps: usize,
    pub scheme: StepScheme,
    pub gd: GdOpts,
    /// Projection fidelities below this are counted as warnings.
    pub fidelity_floor: f64,
    /// Uniform positive parameter noise applied per ensemble member.
    pub init_noise: f64,
    /// Relative tolerance for the norm-monotonicity guard.
    pub norm_tol: f64,
    pub geometry: GeometryOpts,
}

impl Default for TrajectoryOpts {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            substeps: 1,
            scheme: StepScheme::Trotter,
            gd: GdOpts::default(),
            fidelity_floor: 0.5,
            init_noise: 1e-4,
            norm_tol: 1e-10,
            geometry: GeometryOpts::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JumpRecord {
    pub time: f64,
    pub channel: usize,
    pub fidelity: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrajectoryStats {
    pub jumps: Vec<JumpRecord>,
    pub steps: usize,
    pub min_fidelity: f64,
    pub floor_hits: usize,
}

pub struct TrajectoryRunner {
    pub shape: Shape,
    pub opts: TrajectoryOpts,
    channels: Vec<JumpChannel>,
    h_flow: Option<NgsFlow>,
    k_flow: Option<NgsFlow>,
    joint_flow: Option<NgsFlow>,
    ws: PairWorkspace,
    dissipative: bool,
}

impl TrajectoryRunner {
    pub fn new(
        shape: Shape,
        hamiltonian: Option<SpinBosonOperator>,
        damping: Option<SpinBosonOperator>,
        channels: Vec<JumpChannel>,
        opts: TrajectoryOpts,
    ) -> Result<Self> {
        if damping.is_some() != !channels.is_empty() {
            return Err(Error::InvalidInput(
                "damping operator and jump channels must be provided together".into(),
            ));
        }
        if !(opts.dt > 0.0) || opts.substeps == 0 {
            return Err(Error::InvalidInput("trajectory step settings invalid".into()));
        }
        let dissipative = damping.is_some();
        let (h_flow, k_flow, joint_flow) = match opts.scheme {
            StepScheme::Trotter => {
                let hf = match &hamiltonian {
                    Some(h) => Some(NgsFlow::new(
                        shape,
                        FlowMode::RealTime,
                        Some(h.clone()),
                        None,
                        opts.geometry,
                    )?),
                    None => None,
                };
                let kf = match &damping {
                    Some(k) => Some(NgsFlow::new(
                        shape,
                        FlowMode::NonHermitian,
                        None,
                        Some(k.clone()),
                        opts.geometry,
                    )?),
                    None => None,
                };
                (hf, kf, None)
            }
            StepScheme::Joint => {
                let jf = NgsFlow::new(
                    shape,
                    FlowMode::NonHermitian,
                    hamiltonian.clone(),
                    damping.clone(),
                    opts.geometry,
                )?;
                (None, None, Some(jf))
            }
        };
        if h_flow.is_none() && k_flow.is_none() && joint_flow.is_none() {
            return Err(Error::InvalidInput("trajectory needs some generator".into()));
        }
        Ok(Self {
            shape,
            opts,
            channels,
            h_flow,
            k_flow,
            joint_flow,
            ws: PairWorkspace::new(),
            dissipative,
        })
    }

    fn step(&mut self, z: &mut Vec<f64>, h: f64) -> Result<()> {
        let sub = h / self.opts.substeps as f64;
        if let Some(jf) = self.joint_flow.as_mut() {
            rk4(jf, z, 0.0, h, sub)?;
            return Ok(());
        }
        if let Some(hf) = self.h_flow.as_mut() {
            rk4(hf, z, 0.0, h, sub)?;
        }
        if let Some(kf) = self.k_flow.as_mut() {
            rk4(kf, z, 0.0, h, sub)?;
        }
        Ok(())
    }

    fn select_and_jump<R: Rng + ?Sized>(
        &mut self,
        state: &mut NgsState,
        rng: &mut R,
    ) -> Result<(usize, f64)> {
        self.ws.build(state, state)?;
        let mut weights = Vec::with_capacity(self.channels.len());
        let mut total = 0.0;
        for ch in &self.channels {
            let w = matrix_element(&self.ws, &self.shape, &ch.weight_op)?
                .re
                .max(0.0);
            total += w;
            weights.push(w);
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Jump(format!(
                "no jump channel has positive weight (total = {total})"
            )));
        }
        let mut u = rng.gen::<f64>() * total;
        let mut idx = self.channels.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                idx = i;
                break;
            }
            u -= w;
        }
        let channel = self.channels[idx].clone();
        let fidelity = apply_channel(state, &channel, &self.opts.gd, rng)?;
        Ok((idx, fidelity))
    }

    /// Run one trajectory, calling `record(grid_index, state)` at each grid
    /// time. The recorded state is unnormalized; observable evaluation
    /// normalizes.
    pub fn run<R, F>(
        &mut self,
        init: &NgsState,
        grid: &[f64],
        rng: &mut R,
        mut record: F,
    ) -> Result<TrajectoryStats>
    where
        R: Rng + ?Sized,
        F: FnMut(usize, &NgsState) -> Result<()>,
    {
        if init.shape != self.shape {
            return Err(Error::ShapeMismatch("trajectory initial state shape".into()));
        }
        if grid.is_empty() {
            return Err(Error::InvalidInput("empty output grid".into()));
        }
        for w in grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput("grid times must increase".into()));
            }
        }
        if !(grid[0] >= 0.0) || !grid.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidInput("grid times must be finite and >= 0".into()));
        }
        let mut state = init.clone();
        state.normalize()?;
        let mut stats = TrajectoryStats {
            min_fidelity: 1.0,
            ..Default::default()
        };
        let mut t = 0.0;
        let mut n2_cur = 1.0;
        let mut r_thresh: f64 = rng.gen();
        let mut z_prev = state.z.clone();
        for (gi, &tg) in grid.iter().enumerate() {
            loop {
                let eps = 1e-12 * (1.0 + tg.abs());
                if t >= tg - eps {
                    break;
                }
                let h = self.opts.dt.min(tg - t);
                z_prev.copy_from_slice(&state.z);
                self.step(&mut state.z, h)?;
                let n2_new = state.norm_sqr();
                if !n2_new.is_finite() || !(n2_new > 0.0) {
                    return Err(Error::NonFinite(format!(
                        "trajectory norm^2 = {n2_new} at t = {t}"
                    )));
                }
                stats.steps += 1;
                if self.dissipative {
                    if n2_new > n2_cur * (1.0 + self.opts.norm_tol) + 1e-12 {
                        return Err(Error::Integration(format!(
                            "norm^2 grew from {n2_cur} to {n2_new} during damping at t = {t}"
                        )));
                    }
                    if n2_new <= r_thresh {
                        let frac = ((n2_cur - r_thresh) / (n2_cur - n2_new)).clamp(0.0, 1.0);
                        state.z.copy_from_slice(&z_prev);
                        if frac > 0.0 {
                            self.step(&mut state.z, frac * h)?;
                        }
                        t += frac * h;
                        let (channel, fidelity) = self.select_and_jump(&mut state, rng)?;
                        state.normalize()?;
                        stats.jumps.push(JumpRecord {
                            time: t,
                            channel,
                            fidelity,
                        });
                        stats.min_fidelity = stats.min_fidelity.min(fidelity);
                        if fidelity < self.opts.fidelity_floor {
                            stats.floor_hits += 1;
                        }
                        n2_cur = 1.0;
                        r_thresh = rng.gen();
                        continue;
                    }
                }
                n2_cur = n2_new;
                t += h;
            }
            record(gi, &state)?;
        }
        Ok(stats)
    }
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub grid: Vec<f64>,
    /// Trajectory means, indexed `[grid][observable]`.
    pub mean: Array2<f64>,
    /// Standard error of the mean, same indexing.
    pub stderr: Array2<f64>,
    pub n_traj: usize,
    pub total_jumps: usize,
    pub min_fidelity: f64,
    pub floor_hits: usize,
}

/// Average observables over trajectories. Per-trajectory randomness comes
/// from a counter-addressed stream of the base seed, so results are
/// reproducible and independent of scheduling.
pub fn run_ensemble(
    runner: &mut TrajectoryRunner,
    init: &NgsState,
    observables: &[SpinBosonOperator],
    grid: &[f64],
    n_traj: usize,
    base_seed: u64,
) -> Result<EnsembleResult> {
    if n_traj == 0 || observables.is_empty() {
        return Err(Error::Ensemble("need at least one trajectory and observable".into()));
    }
    let (ng, no) = (grid.len(), observables.len());
    let mut mean = Array2::<f64>::zeros((ng, no));
    let mut m2 = Array2::<f64>::zeros((ng, no));
    let mut total_jumps = 0;
    let mut min_fidelity = 1.0_f64;
    let mut floor_hits = 0;
    for traj in 0..n_traj {
        let mut rng = ChaCha12Rng::seed_from_u64(base_seed);
        rng.set_stream(traj as u64);
        let mut start = init.clone();
        for v in start.z.iter_mut() {
            *v += rng.gen::<f64>() * runner.opts.init_noise;
        }
        let mut row = vec![0.0; no];
        let stats = runner.run(&start, grid, &mut rng, |gi, st| {
            for (oi, ob) in observables.iter().enumerate() {
                row[oi] = crate::energy::expectation(st, ob)?.re;
            }
            let n = (traj + 1) as f64;
            for oi in 0..no {
                let delta = row[oi] - mean[(gi, oi)];
                mean[(gi, oi)] += delta / n;
                m2[(gi, oi)] += delta * (row[oi] - mean[(gi, oi)]);
            }
            Ok(())
        })?;
        total_jumps += stats.jumps.len();
        min_fidelity = min_fidelity.min(stats.min_fidelity);
        floor_hits += stats.floor_hits;
    }
    let denom = (n_traj.max(2) - 1) as f64 * n_traj as f64;
    let stderr = m2.mapv(|v| (v / denom).sqrt());
    Ok(EnsembleResult {
        grid: grid.to_vec(),
        mean,
        stderr,
        n_traj,
        total_jumps,
        min_fidelity,
        floor_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::build_anharmonic;
    use crate::oracle::{fidelity, ngs_to_dense, ProductBasis};
    use approx::assert_abs_diff_eq;

    fn coherent_shape() -> Shape {
        Shape {
            n_spins: 0,
            n_modes: 1,
            n_gaussians: 1,
            squeezing: false,
        }
    }

    fn coherent_state(alpha: C64) -> NgsState {
        let mut st = NgsState::zeros(coherent_shape()).unwrap();
        let o = st.mode_offset(0, 0, 0);
        st.z[o] = alpha.re;
        st.z[o + 1] = alpha.im;
        st
    }

    fn damped_cavity_runner(nu: f64, kappa: f64, dt: f64) -> TrajectoryRunner {
        let mut spec = LindbladSpec::default();
        spec.push(ChannelKind::CavityDecay, kappa).unwrap();
        let shape = coherent_shape();
        let k = spec.damping_operator(0, 1).unwrap();
        let channels = standard_channels(&spec, &shape).unwrap();
        let opts = TrajectoryOpts {
            dt,
            init_noise: 0.0,
            ..Default::default()
        };
        TrajectoryRunner::new(shape, Some(build_anharmonic(nu, 0.0)), Some(k), channels, opts)
            .unwrap()
    }

    #[test]
    fn damped_cavity_trajectory_is_exact_for_coherent_states() {
        // Photon loss leaves a coherent state coherent, so every trajectory
        // deterministically follows <n>(t) = |alpha|^2 e^{-kappa t}.
        let (nu, kappa) = (1.0, 0.8);
        let alpha0 = C64::new(1.2, 0.0);
        let mut runner = damped_cavity_runner(nu, kappa, 1e-3);
        let init = coherent_state(alpha0);
        let grid = [0.0, 0.5, 1.0, 1.5, 2.0];
        let n_op = crate::operator::number_op(0, 1, 0);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut ns = Vec::new();
        runner
            .run(&init, &grid, &mut rng, |_, st| {
                ns.push(crate::energy::expectation(st, &n_op)?.re);
                Ok(())
            })
            .unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let expect = alpha0.norm_sqr() * (-kappa * t).exp();
            assert_abs_diff_eq!(ns[i], expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn jump_count_matches_inhomogeneous_poisson_mean() {
        let (nu, kappa, tfin) = (0.6, 0.9, 1.5);
        let alpha0 = C64::new(1.2, 0.0);
        let mut runner = damped_cavity_runner(nu, kappa, 2e-3);
        let init = coherent_state(alpha0);
        let grid = [tfin];
        let n_traj = 200;
        let mut counts = Vec::new();
        for traj in 0..n_traj {
            let mut rng = ChaCha12Rng::seed_from_u64(11);
            rng.set_stream(traj);
            let stats = runner.run(&init, &grid, &mut rng, |_, _| Ok(())).unwrap();
            counts.push(stats.jumps.len() as f64);
        }
        let lambda = alpha0.norm_sqr() * (1.0 - (-kappa * tfin).exp());
        let mean = counts.iter().sum::<f64>() / n_traj as f64;
        let tol = 4.0 * (lambda / n_traj as f64).sqrt();
        assert!(
            (mean - lambda).abs() < tol,
            "jump mean {mean} vs {lambda} +- {tol}"
        );
    }

    #[test]
    fn spin_decay_ensemble_matches_exponential() {
        let shape = Shape {
            n_spins: 1,
            n_modes: 1,
            n_gaussians: 1,
            squeezing: false,
        };
        let (delta, gamma, tfin) = (0.7, 0.5, 1.5);
        let mut h = SpinBosonOperator::zero(1, 1);
        h.add_term(
            C64::new(delta / 2.0, 0.0),
            &[(0, crate::operator::SpinLabel::Z)],
            &[],
        )
        .unwrap();
        let mut spec = LindbladSpec::default();
        spec.push(ChannelKind::SingleSpinDecay, gamma).unwrap();
        let k = spec.damping_operator(1, 1).unwrap();
        let channels = standard_channels(&spec, &shape).unwrap();
        let opts = TrajectoryOpts {
            dt: 2e-3,
            ..Default::default()
        };
        let mut runner = TrajectoryRunner::new(shape, Some(h), Some(k), channels, opts).unwrap();
        // All-up initial state: excited sector occupied, ground sector empty.
        let mut init = NgsState::zeros(shape).unwrap();
        let down = init.block_offset(1, 0);
        init.z[down] = -9.0;
        let grid = [0.5, 1.0, tfin];
        let sz = crate::operator::total_sz(1, 1);
        let res = run_ensemble(&mut runner, &init, &[sz], &grid, 150, 23).unwrap();
        for (gi, &t) in grid.iter().enumerate() {
            let expect = (-gamma * t).exp() - 0.5;
            let dev = (res.mean[(gi, 0)] - expect).abs();
            let tol = 4.0 * res.stderr[(gi, 0)] + 0.02;
            assert!(dev < tol, "t={t}: {} vs {expect} +- {tol}", res.mean[(gi, 0)]);
        }
        assert!(res.total_jumps > 0);
        assert_abs_diff_eq!(res.min_fidelity, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn photon_gain_projection_finds_unit_coherent_state() {
        // Best coherent approximation of a^dag|0> = |1> sits at |alpha| = 1
        // with fidelity e^{-1}.
        let pre = coherent_state(C64::new(0.0, 0.0));
        let mut op = SpinBosonOperator::zero(0, 1);
        op.add_term(C64::new(1.0, 0.0), &[], &[(0, 1, 0)]).unwrap();
        let wop = op.dagger().mul(&op).unwrap();
        let mut init = pre.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for v in init.z.iter_mut() {
            *v += rng.gen::<f64>() * 1e-4;
        }
        let res = project_gd(&pre, &op, &wop, &init, &GdOpts::default(), &mut rng).unwrap();
        let o = res.state.mode_offset(0, 0, 0);
        let alpha = C64::new(res.state.z[o], res.state.z[o + 1]);
        assert_abs_diff_eq!(alpha.norm(), 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(res.fidelity, (-1.0_f64).exp(), epsilon = 1e-6);
    }

    #[test]
    fn spin_relabel_matches_dense_lowering() {
        let shape = Shape {
            n_spins: 1,
            n_modes: 1,
            n_gaussians: 2,
            squeezing: true,
        };
        let mut st = NgsState::zeros(shape).unwrap();
        let vals = [
            0.1, 0.3, 0.5, -0.2, 0.15, 0.4, -0.1, 0.2, 0.35, 0.1, 0.25, -0.3,
        ];
        for (i, v) in st.z.iter_mut().enumerate() {
            *v = vals[i % vals.len()] * (1.0 + 0.05 * i as f64);
        }
        for sigma in 0..2 {
            for p in 0..2 {
                let o = st.mode_offset(sigma, p, 0);
                st.z[o + 2] = st.z[o + 2].abs();
            }
        }
        st.normalize().unwrap();
        let basis = ProductBasis::new(1, &[22]).unwrap();
        let mut lower = SpinBosonOperator::zero(1, 1);
        lower
            .add_term(C64::new(1.0, 0.0), &[(0, crate::operator::SpinLabel::Minus)], &[])
            .unwrap();
        let dense_pre = ngs_to_dense(&st, &basis).unwrap();
        let dense_post = crate::oracle::apply(&lower, &basis, &dense_pre).unwrap();
        apply_spin_relabel(&mut st, 0).unwrap();
        let dense_relabel = ngs_to_dense(&st, &basis).unwrap();
        let f = fidelity(&dense_relabel, &dense_post);
        // Exact up to the revivable empty-component floor, whose weight is
        // e^{-18} per emptied slot.
        assert!(f > 1.0 - 1e-7, "fidelity {f}");
    }

    #[test]
    fn mode_scale_matches_dense_annihilation() {
        let shape = Shape {
            n_spins: 0,
            n_modes: 2,
            n_gaussians: 2,
            squeezing: false,
        };
        let mut st = NgsState::zeros(shape).unwrap();
        for (i, v) in st.z.iter_mut().enumerate() {
            *v = 0.2 + 0.11 * i as f64;
        }
        st.normalize().unwrap();
        let basis = ProductBasis::new(0, &[26, 26]).unwrap();
        let mut a0 = SpinBosonOperator::zero(0, 2);
        a0.add_term(C64::new(1.0, 0.0), &[], &[(0, 0, 1)]).unwrap();
        let dense_pre = ngs_to_dense(&st, &basis).unwrap();
        let dense_post = crate::oracle::apply(&a0, &basis, &dense_pre).unwrap();
        apply_mode_scale(&mut st, 0, 1, 1.0).unwrap();
        let dense_scaled = ngs_to_dense(&st, &basis).unwrap();
        let f = fidelity(&dense_scaled, &dense_post);
        assert!(f > 1.0 - 1e-8, "fidelity {f}");
    }

    #[test]
    fn ensemble_is_deterministic_per_seed() {
        let mut runner = damped_cavity_runner(0.8, 1.0, 5e-3);
        let init = coherent_state(C64::new(0.9, 0.2));
        let grid = [0.4, 0.8];
        let n_op = crate::operator::number_op(0, 1, 0);
        let a = run_ensemble(&mut runner, &init, &[n_op.clone()], &grid, 5, 99).unwrap();
        let b = run_ensemble(&mut runner, &init, &[n_op.clone()], &grid, 5, 99).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.stderr, b.stderr);
        let c = run_ensemble(&mut runner, &init, &[n_op], &grid, 5, 100).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn anneal_and_gradient_ascent_agree_on_momentum_kick() {
        let pre = coherent_state(C64::new(0.7, -0.4));
        let op = crate::operator::quadrature_x(0, 1, 0);
        let wop = op.dagger().mul(&op).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let gd = project_gd(&pre, &op, &wop, &pre, &GdOpts::default(), &mut rng).unwrap();
        let sa = project_anneal(&pre, &op, &wop, &pre, 120, &mut rng).unwrap();
        assert!(
            gd.fidelity >= sa.fidelity - 1e-3,
            "gd {} vs sa {}",
            gd.fidelity,
            sa.fidelity
        );
    }
}
