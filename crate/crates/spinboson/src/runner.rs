//! Binds a parsed run configuration to an engine, executes it, and collects
//! the time-series bundle.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::config::{
    config_hash, emit_csv, emit_json, parse_observable, Diagnostics, InitialKind, Method,
    ModelKind, ObservableSpec, OutputFormat, ResultBundle, RunSpec, SchemeKind,
};
use crate::energy;
use crate::error::{Error, Result};
use crate::gaussian::{NgsState, Shape};
use crate::geometry::{FlowMode, GeometryOpts, NgsFlow};
use crate::integrate::{rk4, rk45, AdaptiveOpts};
use crate::operator::{
    annihilation, build_anharmonic, build_htc, build_tc, collective_damping_hp,
    collective_lowering_hp, hp_transform, number_op, quadrature_x, sz_site, total_sz, ChannelKind,
    HpVariant, HtcParams, LindbladSpec, SpinBosonOperator,
};
use crate::oracle::{self, LindbladOracle, ProductBasis};
use crate::trajectory::{
    run_ensemble, standard_channels, GdOpts, JumpChannel, JumpRoute, StepScheme, TrajectoryOpts,
    TrajectoryRunner,
};
use crate::twa::{
    run_collective_twa, run_htc_twa, CollectiveObservable, CollectiveTwaParams, HtcTwaParams,
    TwaObservable,
};
use crate::C64;

/// RNG stream reserved for initial-state jitter; trajectory streams use
/// small indices.
const INIT_STREAM: u64 = 1 << 32;
/// Initial squeezing magnitude: the (r, phi) metric degenerates at r = 0.
const SQUEEZE_FLOOR: f64 = 1e-3;
/// Log-amplitude of initially empty superposition branches. Their cross
/// terms with the occupied branch shift initial observables linearly in the
/// weight, while activation velocities scale inversely with it; this sits
/// between the two.
const EMPTY_BRANCH_KAPPA: f64 = -6.0;

/// Squeeze magnitude of initially empty branches. Their orientation
/// directions carry Gram weight `~ e^{2 kappa} r^2`; at the generic floor
/// that lands on the pseudo-inverse cutoff and the step size collapses.
const EMPTY_BRANCH_SQUEEZE: f64 = 0.1;

/// Angular separation between successive empty branches on an occupied
/// mode's circle of constant amplitude.
const FAN_STEP: f64 = 0.9;

/// Radius of the empty-branch ring around a vacuum mode.
const BRANCH_RING: f64 = 0.35;

/// Fixed-step bridge over the start of deterministic flows. Near-coincident
/// branches give the initial tangent Gram a geometric tail of singular
/// values; the ones straddling the pseudo-inverse cutoff make the embedded
/// error estimate jitter and stall the adaptive integrator until the flow
/// has pulled the branches apart.
const WARMUP_TIME: f64 = 0.1;
const WARMUP_DT: f64 = 2e-4;

/// Operator-space binding of a model: Hamiltonian plus mode layout.
struct Rep {
    h: SpinBosonOperator,
    n_spins: usize,
    n_modes: usize,
    /// Collective spin length when the bosonic large-spin picture is active;
    /// mode 1 is then the spin-wave mode and its vacuum the fully excited
    /// spin state.
    hp_s: Option<f64>,
}

fn bind_rep(spec: &RunSpec) -> Result<Rep> {
    let m = &spec.model;
    Ok(match m.kind {
        ModelKind::Htc => {
            let p = HtcParams {
                n_spins: m.n_spins,
                detuning: m.delta,
                coupling: m.coupling,
                holstein: m.lambda,
                vibration_frequency: m.nu,
                disorder: m.epsilon.clone(),
            };
            Rep {
                h: build_htc(&p)?,
                n_spins: m.n_spins,
                n_modes: 1 + m.n_spins,
                hp_s: None,
            }
        }
        ModelKind::Anharmonic => Rep {
            h: build_anharmonic(m.nu, m.anharmonicity),
            n_spins: 0,
            n_modes: 1,
            hp_s: None,
        },
        ModelKind::GaussianHeff => {
            let a = annihilation(0, 1, 0);
            let h = a.add(&a.dagger())?.scaled(C64::new(m.xi, 0.0));
            Rep {
                h,
                n_spins: 0,
                n_modes: 1,
                hp_s: None,
            }
        }
        ModelKind::TcCollective => {
            let exact = build_tc(m.n_spins, m.delta, m.coupling)?;
            if spec.method == Method::Ngs && spec.numerics.hp {
                let s = m.n_spins as f64 / 2.0;
                Rep {
                    h: hp_transform(&exact, HpVariant::LargeSpinFirstOrder { s })?,
                    n_spins: 0,
                    n_modes: 2,
                    hp_s: Some(s),
                }
            } else {
                Rep {
                    h: exact,
                    n_spins: m.n_spins,
                    n_modes: 1,
                    hp_s: None,
                }
            }
        }
    })
}

fn ansatz_shape(spec: &RunSpec, rep: &Rep) -> Shape {
    Shape {
        n_spins: rep.n_spins,
        n_modes: rep.n_modes,
        n_gaussians: spec.numerics.n_gaussians,
        squeezing: spec.numerics.squeezing,
    }
}

/// Variational initial state shared by all operator-space engines: a
/// product state (or random coherent superposition) on the first branch,
/// with the remaining branches nearly empty and jittered apart so the flow
/// can activate them.
fn initial_ngs(spec: &RunSpec, rep: &Rep) -> Result<NgsState> {
    if rep.hp_s.is_some() && !spec.initial.excited {
        return Err(Error::Config(
            "initial.excited = false leaves the collective bosonic representation's \
             validity range; set numerics.hp = false"
                .into(),
        ));
    }
    let shape = ansatz_shape(spec, rep);
    let mut st = NgsState::zeros(shape)?;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.numerics.seed);
    rng.set_stream(INIT_STREAM);
    let alpha = C64::new(spec.initial.cavity_alpha[0], spec.initial.cavity_alpha[1]);
    let ppm = shape.params_per_mode();
    match spec.initial.kind {
        InitialKind::Product => {
            // Spin bit 0 is the excited state.
            let sigma0 = if spec.initial.excited {
                0
            } else {
                (1usize << rep.n_spins) - 1
            };
            for sigma in 0..shape.n_configs() {
                for p in 0..shape.n_gaussians {
                    let off = st.block_offset(sigma, p);
                    let primary = sigma == sigma0 && p == 0;
                    // Stagger the empty-branch weights: branches with equal
                    // weight see identical gradients, converge onto the same
                    // attractor, and collapse the tangent Gram.
                    st.z[off] = if primary {
                        0.0
                    } else {
                        EMPTY_BRANCH_KAPPA - 0.5 * (p.max(1) - 1) as f64
                    };
                    for k in 0..shape.n_modes {
                        let base = off + 2 + k * ppm;
                        let (x0, y0) = if k == 0 {
                            (alpha.re, alpha.im)
                        } else {
                            (0.0, 0.0)
                        };
                        if primary {
                            st.z[base] = x0;
                            st.z[base + 1] = y0;
                        } else {
                            // Fan occupied amplitudes out in phase and put
                            // vacuum modes on a ring, so each empty branch
                            // starts in its own niche with uniform pairwise
                            // separations; random jitter lets branch pairs
                            // start nearly degenerate.
                            let a0 = C64::new(x0, y0);
                            let q = p.max(1) - 1;
                            let c = if a0.norm() > 0.5 {
                                let sgn = if p % 2 == 0 { -1.0 } else { 1.0 };
                                let ang = sgn * FAN_STEP * p.div_ceil(2) as f64;
                                a0 * C64::new(0.0, ang).exp()
                            } else {
                                let n_empty = (shape.n_gaussians - 1).max(1);
                                let ang = 2.0 * std::f64::consts::PI
                                    * (q as f64 + 0.382 * (k + sigma) as f64)
                                    / n_empty as f64;
                                a0 + BRANCH_RING * C64::new(0.0, ang).exp()
                            };
                            st.z[base] = c.re;
                            st.z[base + 1] = c.im;
                        }
                        if shape.squeezing {
                            if primary {
                                st.z[base + 2] = SQUEEZE_FLOOR;
                            } else {
                                st.z[base + 2] = EMPTY_BRANCH_SQUEEZE;
                                st.z[base + 3] =
                                    2.0 * std::f64::consts::PI * rng.gen::<f64>();
                            }
                        }
                    }
                }
            }
        }
        InitialKind::RandomSuperposition => {
            if rep.n_spins != 0 {
                return Err(Error::Config(
                    "initial.kind = random_superposition needs a spinless model".into(),
                ));
            }
            for p in 0..shape.n_gaussians {
                let off = st.block_offset(0, p);
                st.z[off] = (0.5 + 0.5 * rng.gen::<f64>()).ln();
                st.z[off + 1] = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
                for k in 0..shape.n_modes {
                    let base = off + 2 + k * ppm;
                    let (x0, y0) = if k == 0 {
                        (alpha.re, alpha.im)
                    } else {
                        (0.0, 0.0)
                    };
                    st.z[base] = x0 + 2.0 * rng.gen::<f64>() - 1.0;
                    st.z[base + 1] = y0 + 2.0 * rng.gen::<f64>() - 1.0;
                    if shape.squeezing {
                        st.z[base + 2] = SQUEEZE_FLOOR;
                    }
                }
            }
        }
    }
    st.normalize()?;
    Ok(st)
}

/// Observable bound to the operator-space engines.
enum BoundObs {
    Op(SpinBosonOperator),
    Norm,
    Infidelity,
}

fn bind_observable(ob: ObservableSpec, rep: &Rep) -> Result<BoundObs> {
    use ObservableSpec as O;
    let (ns, nm) = (rep.n_spins, rep.n_modes);
    let half = C64::new(0.5, 0.0);
    let op = match ob {
        O::TotalSz => {
            if let Some(s) = rep.hp_s {
                // S_z = s - n_spinwave about the excited pole.
                SpinBosonOperator::constant(0, nm, C64::new(s, 0.0))
                    .add(&number_op(0, nm, 1).scaled(C64::new(-1.0, 0.0)))?
            } else if ns == 0 {
                return Err(Error::Config("observable sz needs a spin model".into()));
            } else {
                total_sz(ns, nm)
            }
        }
        O::SzSite(j) => {
            if j >= ns {
                return Err(Error::Config(format!(
                    "observable sz_{j} has no site in this representation"
                )));
            }
            // Bare Pauli expectation, twice the spin projection.
            sz_site(ns, nm, j).scaled(C64::new(2.0, 0.0))
        }
        O::CavityNumber => number_op(ns, nm, 0),
        O::VibNumber(k) => {
            if rep.hp_s.is_some() || 1 + k >= nm {
                return Err(Error::Config(format!(
                    "observable n_vib_{k} has no mode in this model"
                )));
            }
            number_op(ns, nm, 1 + k)
        }
        O::CavityX => quadrature_x(ns, nm, 0),
        O::CavityRe => {
            let a = annihilation(ns, nm, 0);
            a.add(&a.dagger())?.scaled(half)
        }
        O::CavityIm => {
            let a = annihilation(ns, nm, 0);
            a.dagger()
                .add(&a.scaled(C64::new(-1.0, 0.0)))?
                .scaled(C64::new(0.0, 0.5))
        }
        O::SpinNumber => {
            if rep.hp_s.is_none() {
                return Err(Error::Config(
                    "observable n_spin needs the collective bosonic representation".into(),
                ));
            }
            number_op(0, nm, 1)
        }
        O::Energy => rep.h.clone(),
        O::Norm => return Ok(BoundObs::Norm),
        O::Infidelity => return Ok(BoundObs::Infidelity),
        O::CavityNumberSymbol | O::VibNumberSymbol(_) | O::SpinNumberSymbol => {
            return Err(Error::Config(
                "symbol estimators exist only for the phase-space method".into(),
            ));
        }
    };
    Ok(BoundObs::Op(op))
}

/// Jump channels plus the damping generator `K = (1/2) Σ L†L` for the bound
/// representation.
fn damping_and_channels(
    spec: &RunSpec,
    rep: &Rep,
    shape: &Shape,
) -> Result<(Option<SpinBosonOperator>, Vec<JumpChannel>)> {
    let l = &spec.lindblad;
    if l.is_empty() {
        return Ok((None, Vec::new()));
    }
    if let Some(s) = rep.hp_s {
        for (name, v) in l.fields() {
            if v > 0.0 && !matches!(name, "cavity_decay" | "collective_decay") {
                return Err(Error::Config(format!(
                    "lindblad.{name} is not available in the collective bosonic representation"
                )));
            }
        }
        let mut lspec = LindbladSpec::default();
        if l.cavity_decay > 0.0 {
            lspec.push(ChannelKind::CavityDecay, l.cavity_decay)?;
        }
        let mut channels = standard_channels(&lspec, shape)?;
        let mut k = lspec.damping_operator(0, rep.n_modes)?;
        if l.collective_decay > 0.0 {
            let lower = collective_lowering_hp(1, s, l.collective_decay);
            let damp = collective_damping_hp(1, s, l.collective_decay);
            // weight = L†L = 2K for this single channel
            channels.push(JumpChannel::with_weight(
                lower,
                damp.scaled(C64::new(2.0, 0.0)),
                JumpRoute::Project,
            ));
            k = k.add(&damp)?;
        }
        return Ok((Some(k), channels));
    }
    if rep.n_spins == 0 && (l.spin_decay > 0.0 || l.collective_decay > 0.0) {
        return Err(Error::Config(
            "spin decay channels need a spin model".into(),
        ));
    }
    let lspec = lindblad_spec(spec)?;
    let channels = standard_channels(&lspec, shape)?;
    let k = lspec.damping_operator(rep.n_spins, rep.n_modes)?;
    Ok((Some(k), channels))
}

fn lindblad_spec(spec: &RunSpec) -> Result<LindbladSpec> {
    let l = &spec.lindblad;
    let mut out = LindbladSpec::default();
    for (kind, rate) in [
        (ChannelKind::CavityDecay, l.cavity_decay),
        (ChannelKind::SingleSpinDecay, l.spin_decay),
        (ChannelKind::CollectiveSpinDecay, l.collective_decay),
        (ChannelKind::SinglePhotonGain, l.photon_gain),
        (ChannelKind::TwoPhotonLoss, l.two_photon_loss),
        (ChannelKind::MomentumKick, l.momentum_kick),
    ] {
        if rate > 0.0 {
            out.push(kind, rate)?;
        }
    }
    Ok(out)
}

fn resolve_cutoffs(spec: &RunSpec, rep: &Rep) -> Result<Vec<usize>> {
    let c = &spec.numerics.fock_cutoffs;
    if c.is_empty() {
        let mut v = vec![16];
        v.resize(rep.n_modes, 8);
        Ok(v)
    } else if c.len() == rep.n_modes {
        Ok(c.clone())
    } else if c.len() == 1 {
        Ok(vec![c[0]; rep.n_modes])
    } else {
        Err(Error::Config(format!(
            "numerics.fock_cutoffs has {} entries for {} modes",
            c.len(),
            rep.n_modes
        )))
    }
}

fn reject_unused_for_trajectories(obs: &[BoundObs]) -> Result<Vec<SpinBosonOperator>> {
    obs.iter()
        .map(|o| match o {
            BoundObs::Op(op) => Ok(op.clone()),
            BoundObs::Norm | BoundObs::Infidelity => Err(Error::Config(
                "norm and infidelity are not defined for jump-trajectory ensembles".into(),
            )),
        })
        .collect()
}

type Series = (Array2<f64>, Array2<f64>, Diagnostics, usize);

/// Closed (norm-conserving) or deterministic non-Hermitian variational flow.
fn run_ngs_deterministic(
    spec: &RunSpec,
    rep: &Rep,
    grid: &[f64],
    obs: &[BoundObs],
) -> Result<Series> {
    let shape = ansatz_shape(spec, rep);
    let init = initial_ngs(spec, rep)?;
    let open = !spec.lindblad.is_empty();
    let damping = if open {
        let (k, _) = damping_and_channels(spec, rep, &shape)?;
        k
    } else {
        None
    };
    let mode = if open {
        FlowMode::NonHermitian
    } else {
        FlowMode::RealTime
    };
    let mut flow = NgsFlow::new(
        shape,
        mode,
        Some(rep.h.clone()),
        damping,
        GeometryOpts::default(),
    )?;
    let needs_ref = obs.iter().any(|o| matches!(o, BoundObs::Infidelity));
    let mut reference = if needs_ref {
        if open {
            return Err(Error::Config(
                "infidelity tracking is only wired for closed dynamics".into(),
            ));
        }
        let basis = ProductBasis::new(rep.n_spins, &resolve_cutoffs(spec, rep)?)?;
        let mut psi = oracle::ngs_to_dense(&init, &basis)?;
        let n = oracle::inner(&psi, &psi).re.sqrt();
        psi.mapv_inplace(|c| c / n);
        Some((basis, psi))
    } else {
        None
    };
    let aopts = AdaptiveOpts {
        rtol: spec.numerics.rtol,
        atol: spec.numerics.atol,
        ..Default::default()
    };
    let mut z = init.z.clone();
    let (ng, no) = (grid.len(), obs.len());
    let mut mean = Array2::zeros((ng, no));
    let mut steps = 0usize;
    let mut t = 0.0;
    for (gi, &tg) in grid.iter().enumerate() {
        if tg > t {
            let mut ts = t;
            if ts < WARMUP_TIME {
                let tw = WARMUP_TIME.min(tg);
                let st = rk4(&mut flow, &mut z, ts, tw, WARMUP_DT)?;
                steps += st.steps_accepted;
                ts = tw;
            }
            if tg > ts {
                let st = rk45(&mut flow, &mut z, ts, tg, &aopts)?;
                steps += st.steps_accepted;
            }
            if let Some((basis, psi)) = reference.as_mut() {
                let rst = oracle::evolve_schrodinger(&rep.h, basis, psi, tg - t, &aopts)?;
                steps += rst.steps_accepted;
            }
            t = tg;
        }
        let state = NgsState::new(shape, z.clone())?;
        for (oi, ob) in obs.iter().enumerate() {
            mean[[gi, oi]] = match ob {
                BoundObs::Op(op) => energy::expectation(&state, op)?.re,
                BoundObs::Norm => state.norm_sqr(),
                BoundObs::Infidelity => {
                    let (basis, psi) = reference.as_ref().unwrap();
                    let dense = oracle::ngs_to_dense(&state, basis)?;
                    1.0 - oracle::fidelity(psi, &dense).sqrt()
                }
            };
        }
    }
    let diagnostics = Diagnostics {
        min_geometry_rank: (flow.diagnostics.min_rank != usize::MAX)
            .then_some(flow.diagnostics.min_rank),
        integrator_steps: steps,
        ..Default::default()
    };
    Ok((mean, Array2::zeros((ng, no)), diagnostics, 1))
}

/// Jump-unraveled open variational dynamics.
fn run_ngs_trajectories(
    spec: &RunSpec,
    rep: &Rep,
    grid: &[f64],
    obs: &[BoundObs],
) -> Result<Series> {
    let shape = ansatz_shape(spec, rep);
    let init = initial_ngs(spec, rep)?;
    let ops = reject_unused_for_trajectories(obs)?;
    let (k, channels) = damping_and_channels(spec, rep, &shape)?;
    let n = &spec.numerics;
    let opts = TrajectoryOpts {
        dt: n.dt,
        substeps: n.substeps,
        scheme: match n.scheme {
            SchemeKind::Trotter => StepScheme::Trotter,
            SchemeKind::Joint => StepScheme::Joint,
        },
        gd: GdOpts {
            max_iters: n.gd.max_iters,
            grad_tol: n.gd.grad_tol,
            init_step: n.gd.init_step,
            jitter: n.gd.jitter,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut runner = TrajectoryRunner::new(shape, Some(rep.h.clone()), k, channels, opts)?;
    let res = run_ensemble(&mut runner, &init, &ops, grid, n.n_traj, n.seed)?;
    let diagnostics = Diagnostics {
        total_jumps: res.total_jumps,
        min_fidelity: Some(res.min_fidelity),
        floor_hits: res.floor_hits,
        ..Default::default()
    };
    Ok((res.mean, res.stderr, diagnostics, res.n_traj))
}

/// Dense truncated-Fock state propagation (Schrodinger or effective
/// non-Hermitian).
fn run_oracle_closed(spec: &RunSpec, rep: &Rep, grid: &[f64], obs: &[BoundObs]) -> Result<Series> {
    let basis = ProductBasis::new(rep.n_spins, &resolve_cutoffs(spec, rep)?)?;
    let init = initial_ngs(spec, rep)?;
    let mut psi = oracle::ngs_to_dense(&init, &basis)?;
    let n0 = oracle::inner(&psi, &psi).re.sqrt();
    psi.mapv_inplace(|c| c / n0);
    let open = !spec.lindblad.is_empty();
    let k_op = if open {
        if rep.n_spins == 0 && (spec.lindblad.spin_decay > 0.0 || spec.lindblad.collective_decay > 0.0)
        {
            return Err(Error::Config("spin decay channels need a spin model".into()));
        }
        Some(lindblad_spec(spec)?.damping_operator(rep.n_spins, rep.n_modes)?)
    } else {
        None
    };
    let aopts = AdaptiveOpts {
        rtol: spec.numerics.rtol,
        atol: spec.numerics.atol,
        ..Default::default()
    };
    let (ng, no) = (grid.len(), obs.len());
    let mut mean = Array2::zeros((ng, no));
    let mut steps = 0usize;
    let mut t = 0.0;
    for (gi, &tg) in grid.iter().enumerate() {
        if tg > t {
            let st = match &k_op {
                Some(k) => oracle::evolve_effective(&rep.h, k, &basis, &mut psi, tg - t, &aopts)?,
                None => oracle::evolve_schrodinger(&rep.h, &basis, &mut psi, tg - t, &aopts)?,
            };
            steps += st.steps_accepted;
            t = tg;
        }
        for (oi, ob) in obs.iter().enumerate() {
            mean[[gi, oi]] = match ob {
                BoundObs::Op(op) => oracle::expectation(op, &basis, &psi)?.re,
                BoundObs::Norm => oracle::inner(&psi, &psi).re,
                BoundObs::Infidelity => {
                    return Err(Error::Config(
                        "the dense reference defines the fidelity baseline".into(),
                    ))
                }
            };
        }
    }
    let diagnostics = Diagnostics {
        integrator_steps: steps,
        ..Default::default()
    };
    Ok((mean, Array2::zeros((ng, no)), diagnostics, 1))
}

/// Dense density-matrix propagation of the full Lindblad generator.
fn run_oracle_lindblad(
    spec: &RunSpec,
    rep: &Rep,
    grid: &[f64],
    obs: &[BoundObs],
) -> Result<Series> {
    if spec.lindblad.is_empty() {
        return Err(Error::Config(
            "method oracle_lindblad needs at least one lindblad channel".into(),
        ));
    }
    if rep.n_spins == 0 && (spec.lindblad.spin_decay > 0.0 || spec.lindblad.collective_decay > 0.0) {
        return Err(Error::Config("spin decay channels need a spin model".into()));
    }
    let basis = ProductBasis::new(rep.n_spins, &resolve_cutoffs(spec, rep)?)?;
    let init = initial_ngs(spec, rep)?;
    let mut psi = oracle::ngs_to_dense(&init, &basis)?;
    let n0 = oracle::inner(&psi, &psi).re.sqrt();
    psi.mapv_inplace(|c| c / n0);
    let jumps = lindblad_spec(spec)?.jump_operators(rep.n_spins, rep.n_modes)?;
    let lo = LindbladOracle::new(rep.h.clone(), jumps, basis)?;
    let dim = psi.len();
    let mut rho = Array2::from_shape_fn((dim, dim), |(i, j)| psi[i] * psi[j].conj());
    let aopts = AdaptiveOpts {
        rtol: spec.numerics.rtol,
        atol: spec.numerics.atol,
        ..Default::default()
    };
    let (ng, no) = (grid.len(), obs.len());
    let mut mean = Array2::zeros((ng, no));
    let mut steps = 0usize;
    let mut t = 0.0;
    for (gi, &tg) in grid.iter().enumerate() {
        if tg > t {
            let st = lo.evolve(&mut rho, tg - t, &aopts)?;
            steps += st.steps_accepted;
            t = tg;
        }
        let tr = LindbladOracle::trace(&rho).re;
        for (oi, ob) in obs.iter().enumerate() {
            mean[[gi, oi]] = match ob {
                BoundObs::Op(op) => lo.expectation(op, &rho)?.re / tr,
                BoundObs::Norm => tr,
                BoundObs::Infidelity => {
                    return Err(Error::Config(
                        "the dense reference defines the fidelity baseline".into(),
                    ))
                }
            };
        }
    }
    let diagnostics = Diagnostics {
        integrator_steps: steps,
        ..Default::default()
    };
    Ok((mean, Array2::zeros((ng, no)), diagnostics, 1))
}

fn reject_phase_space_lindblad(spec: &RunSpec, allowed: &[&str]) -> Result<()> {
    for (name, v) in spec.lindblad.fields() {
        if v > 0.0 && !allowed.contains(&name) {
            return Err(Error::Config(format!(
                "lindblad.{name} is not available in the phase-space engine"
            )));
        }
    }
    Ok(())
}

/// Stochastic phase-space sampling.
fn run_twa(spec: &RunSpec, grid: &[f64], obs: &[ObservableSpec]) -> Result<Series> {
    if spec.initial.kind != InitialKind::Product {
        return Err(Error::Config(
            "the phase-space engine samples product initial states only".into(),
        ));
    }
    let m = &spec.model;
    let n = &spec.numerics;
    let l = &spec.lindblad;
    let alpha = C64::new(spec.initial.cavity_alpha[0], spec.initial.cavity_alpha[1]);
    let res = match m.kind {
        ModelKind::Htc => {
            reject_phase_space_lindblad(spec, &["cavity_decay", "spin_decay", "collective_decay"])?;
            let tobs = obs
                .iter()
                .map(|&o| {
                    use ObservableSpec as O;
                    Ok(match o {
                        O::TotalSz => TwaObservable::TotalSz,
                        O::SzSite(j) if j < m.n_spins => TwaObservable::SzSite(j),
                        O::CavityNumber => TwaObservable::CavityNumber,
                        O::CavityNumberSymbol => TwaObservable::CavityNumberSymbol,
                        O::CavityX => TwaObservable::CavityX,
                        O::CavityRe => TwaObservable::CavityRe,
                        O::CavityIm => TwaObservable::CavityIm,
                        O::VibNumber(k) if k < m.n_spins => TwaObservable::VibNumber(k),
                        O::VibNumberSymbol(k) if k < m.n_spins => {
                            TwaObservable::VibNumberSymbol(k)
                        }
                        other => {
                            return Err(Error::Config(format!(
                                "observable {other:?} is not available for phase-space sampling \
                                 of this model"
                            )))
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let p = HtcTwaParams {
                n_spins: m.n_spins,
                delta: m.delta,
                coupling: m.coupling,
                lambda: m.lambda,
                nu: m.nu,
                epsilon: m.epsilon.clone(),
                cavity_decay: l.cavity_decay,
                spin_decay: l.spin_decay,
                collective_decay: l.collective_decay,
                cavity_frequency: m.cavity_frequency,
                cavity_alpha: alpha,
                cavity_nbar: 0.0,
                excited: spec.initial.excited,
                dt: n.dt,
            };
            run_htc_twa(&p, &tobs, grid, n.n_traj, n.seed)?
        }
        ModelKind::TcCollective => {
            if !n.hp {
                return Err(Error::Config(
                    "phase-space sampling of the collective model uses the bosonic \
                     representation; set numerics.hp = true, or model.kind = \"htc\" with \
                     lambda = 0 for per-spin sampling"
                        .into(),
                ));
            }
            if !spec.initial.excited {
                return Err(Error::Config(
                    "initial.excited = false leaves the collective bosonic representation's \
                     validity range"
                        .into(),
                ));
            }
            reject_phase_space_lindblad(spec, &["cavity_decay", "collective_decay"])?;
            let cobs = obs
                .iter()
                .map(|&o| {
                    use ObservableSpec as O;
                    Ok(match o {
                        O::TotalSz => CollectiveObservable::TotalSz,
                        O::SpinNumber => CollectiveObservable::SpinNumber,
                        O::SpinNumberSymbol => CollectiveObservable::SpinNumberSymbol,
                        O::CavityNumber => CollectiveObservable::CavityNumber,
                        O::CavityNumberSymbol => CollectiveObservable::CavityNumberSymbol,
                        O::CavityRe => CollectiveObservable::CavityRe,
                        O::CavityIm => CollectiveObservable::CavityIm,
                        other => {
                            return Err(Error::Config(format!(
                                "observable {other:?} is not available for collective \
                                 phase-space sampling"
                            )))
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let ns = m.n_spins as f64;
            let p = CollectiveTwaParams {
                s: ns / 2.0,
                delta: m.delta,
                coupling: m.coupling / ns.sqrt(),
                cavity_decay: l.cavity_decay,
                collective_decay: l.collective_decay,
                cavity_frequency: m.cavity_frequency,
                cavity_alpha: alpha,
                cavity_nbar: 0.0,
                dt: n.dt,
            };
            run_collective_twa(&p, &cobs, grid, n.n_traj, n.seed)?
        }
        ModelKind::Anharmonic | ModelKind::GaussianHeff => {
            return Err(Error::Config(
                "the phase-space engine covers the spin-cavity models".into(),
            ))
        }
    };
    let diagnostics = Diagnostics {
        clamp_events: res.clamp_events,
        max_hp_fraction: res.max_hp_fraction,
        ..Default::default()
    };
    Ok((res.mean, res.stderr, diagnostics, res.n_traj))
}

/// Execute a validated run configuration.
pub fn run(spec: &RunSpec) -> Result<ResultBundle> {
    spec.validate()?;
    let started = Instant::now();
    let grid = spec.grid();
    let obs_specs = spec
        .output
        .observables
        .iter()
        .map(|s| parse_observable(s))
        .collect::<Result<Vec<_>>>()?;
    let (mean, stderr, diagnostics, n_traj) = match spec.method {
        Method::Twa => run_twa(spec, &grid, &obs_specs)?,
        Method::Ngs => {
            let rep = bind_rep(spec)?;
            let obs = obs_specs
                .iter()
                .map(|&o| bind_observable(o, &rep))
                .collect::<Result<Vec<_>>>()?;
            if spec.lindblad.is_empty() || !spec.numerics.unraveling {
                run_ngs_deterministic(spec, &rep, &grid, &obs)?
            } else {
                run_ngs_trajectories(spec, &rep, &grid, &obs)?
            }
        }
        Method::OracleClosed | Method::OracleLindblad => {
            let rep = bind_rep(spec)?;
            let obs = obs_specs
                .iter()
                .map(|&o| bind_observable(o, &rep))
                .collect::<Result<Vec<_>>>()?;
            if spec.method == Method::OracleClosed {
                run_oracle_closed(spec, &rep, &grid, &obs)?
            } else {
                run_oracle_lindblad(spec, &rep, &grid, &obs)?
            }
        }
    };
    Ok(ResultBundle {
        config_hash: config_hash(spec),
        code_version: env!("CARGO_PKG_VERSION"),
        method: spec.method,
        seed: spec.numerics.seed,
        n_traj,
        wall_time_s: started.elapsed().as_secs_f64(),
        diagnostics,
        grid,
        columns: spec.output.observables.clone(),
        mean,
        stderr,
    })
}

/// Run and serialize in the configured output format.
pub fn run_to_string(spec: &RunSpec) -> Result<(ResultBundle, String)> {
    let bundle = run(spec)?;
    let text = match spec.output.format {
        OutputFormat::Csv => emit_csv(&bundle),
        OutputFormat::Json => emit_json(&bundle),
    };
    Ok((bundle, text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn base_toml(method: &str, extra: &str) -> String {
        format!(
            r#"
method = "{method}"

[model]
kind = "htc"
n_spins = 1
coupling = 0.1
lambda = 0.1

[output]
t_final = 0.5
n_points = 6
observables = ["sz", "n_cav"]
{extra}
"#
        )
    }

    #[test]
    fn closed_methods_agree_on_short_htc_window() {
        let mut ngs: RunSpec = parse_config(&base_toml("ngs", "")).unwrap();
        ngs.numerics.n_gaussians = 4;
        ngs.numerics.fock_cutoffs = vec![12, 8];
        let mut ora = ngs.clone();
        ora.method = Method::OracleClosed;
        let bn = run(&ngs).unwrap();
        let bo = run(&ora).unwrap();
        for gi in 0..bn.grid.len() {
            for oi in 0..2 {
                assert!(
                    (bn.mean[[gi, oi]] - bo.mean[[gi, oi]]).abs() < 2e-4,
                    "row {gi} col {oi}: {} vs {}",
                    bn.mean[[gi, oi]],
                    bo.mean[[gi, oi]]
                );
            }
        }
    }

    #[test]
    fn initial_state_is_shared_between_variational_and_dense_runs() {
        let spec: RunSpec = parse_config(&base_toml("ngs", "")).unwrap();
        let rep = bind_rep(&spec).unwrap();
        let init = initial_ngs(&spec, &rep).unwrap();
        let basis = ProductBasis::new(rep.n_spins, &[10, 6]).unwrap();
        let dense = oracle::ngs_to_dense(&init, &basis).unwrap();
        // Dominated by spin up (bit 0 clear), cavity coherent alpha = 1,
        // vib vacuum; the nearly empty activation branches leak ~1e-3.
        let reference = oracle::dense_coherent(&basis, 0, C64::new(1.0, 0.0), 0).unwrap();
        let f = oracle::fidelity(&dense, &reference);
        assert!(f > 0.998, "fidelity {f}");
    }

    #[test]
    fn open_cavity_trajectories_match_density_matrix_reference() {
        let extra = "[lindblad]\ncavity_decay = 1.0";
        let mut ngs: RunSpec =
            parse_config(&base_toml("ngs", &format!("\n{extra}"))).unwrap();
        ngs.model.coupling = 0.0;
        ngs.model.lambda = 0.0;
        ngs.numerics.n_traj = 24;
        ngs.numerics.dt = 2e-3;
        let mut ora = ngs.clone();
        ora.method = Method::OracleLindblad;
        ora.numerics.fock_cutoffs = vec![10, 4];
        let bn = run(&ngs).unwrap();
        let bo = run(&ora).unwrap();
        // decoupled spins: cavity decay is exact for the ansatz and jumps
        // leave coherent states invariant, so the per-trajectory init
        // noise (1e-4 per parameter) dominates the spread
        let col = 1;
        for gi in 0..bn.grid.len() {
            let d = (bn.mean[[gi, col]] - bo.mean[[gi, col]]).abs();
            let tol = 4.0 * bn.stderr[[gi, col]] + 5e-4;
            assert!(d <= tol, "row {gi}: dev {d} tol {tol}");
        }
    }

    #[test]
    fn collective_decay_uses_bosonic_channel_when_hp_is_active() {
        let toml = r#"
method = "ngs"

[model]
kind = "tc_collective"
n_spins = 2
delta = 1.0
coupling = 0.1

[lindblad]
collective_decay = 0.05

[output]
t_final = 1.0
n_points = 5
observables = ["sz", "n_cav"]
"#;
        let mut spec = parse_config(toml).unwrap();
        spec.numerics.n_traj = 8;
        spec.numerics.dt = 2e-3;
        let b = run(&spec).unwrap();
        // S_z starts at s = 1 and decays
        assert!((b.mean[[0, 0]] - 1.0).abs() < 5e-3, "sz(0) = {}", b.mean[[0, 0]]);
        assert!(b.mean[[b.grid.len() - 1, 0]] < b.mean[[0, 0]]);
    }

    #[test]
    fn twa_run_reports_phase_space_diagnostics() {
        let toml = r#"
method = "twa"

[model]
kind = "tc_collective"
n_spins = 2
delta = 1.0
coupling = 0.1

[lindblad]
collective_decay = 0.05

[numerics]
n_traj = 64
dt = 0.005

[output]
t_final = 1.0
n_points = 5
observables = ["sz", "n_cav"]
"#;
        let spec = parse_config(toml).unwrap();
        let b = run(&spec).unwrap();
        assert!(b.diagnostics.max_hp_fraction.is_some());
        assert!((b.mean[[0, 0]] - 1.0).abs() < 0.2);
    }

    #[test]
    fn config_errors_name_the_offending_observable() {
        let mut spec: RunSpec = parse_config(&base_toml("ngs", "")).unwrap();
        spec.output.observables = vec!["n_vib_3".into()];
        let err = run(&spec).unwrap_err().to_string();
        assert!(err.contains("n_vib_3"), "{err}");
    }
}
