//! Tangent-space geometry and variational equations of motion.
//!
//! The Gram matrix `A[mu][nu] = <v_mu|v_nu>` splits into the metric
//! `g = 2 Re A` and the symplectic form `omega = 2 Im A`. Real-time flow
//! solves `omega zdot = -grad E`, imaginary-time flow `g zdot = -grad eps`
//! (normalized energy), and the damped flow
//! `g zdot = -grad <K> + J^T grad E` with `J = -G omega`, falling back to a
//! direct evaluation of the Hamiltonian tangent overlap when the metric is
//! rank deficient.

use crate::energy::{
    accumulate_ket_tangent, braket, gram, matrix_element, norm_tangent, tangent_frame,
    PairWorkspace, TangentPoly,
};
use crate::error::{Error, Result};
use crate::gaussian::{NgsState, Shape};
use crate::integrate::Ode;
use crate::operator::SpinBosonOperator;
use crate::C64;
use ndarray::{Array1, Array2};
use ndarray_linalg::{Solve, SVD};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy)]
pub struct GeometryOpts {
    /// Relative singular-value cutoff for pseudo-inverses, and the Tikhonov
    /// scale of the flow's filtered tangent-space solves.
    pub pinv_tol: f64,
}

impl Default for GeometryOpts {
    fn default() -> Self {
        Self { pinv_tol: 1e-10 }
    }
}

/// Moore-Penrose pseudo-inverse with relative cutoff; returns the rank and
/// the absolute threshold used.
pub fn pinv(m: &Array2<f64>, rel_tol: f64) -> Result<(Array2<f64>, usize, f64)> {
    let (u, s, vt) = m
        .svd(true, true)
        .map_err(|e| Error::Linalg(format!("svd: {e}")))?;
    let u = u.ok_or_else(|| Error::Linalg("svd returned no U".into()))?;
    let vt = vt.ok_or_else(|| Error::Linalg("svd returned no VT".into()))?;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let thresh = rel_tol * smax;
    let mut rank = 0usize;
    let n = m.nrows();
    let mut out = Array2::zeros((n, n));
    for (i, &sv) in s.iter().enumerate() {
        if sv > thresh && sv.is_finite() {
            rank += 1;
            // out += v_i u_i^T / s_i
            let vi = vt.row(i);
            let ui = u.column(i);
            for r in 0..n {
                for c in 0..n {
                    out[(r, c)] += vi[r] * ui[c] / sv;
                }
            }
        }
    }
    Ok((out, rank, thresh))
}

/// Full geometric data for one state; built with SVD throughout, intended
/// for diagnostics and verification rather than inner loops.
pub struct GeometricStructures {
    pub a: Array2<C64>,
    pub g: Array2<f64>,
    pub omega: Array2<f64>,
    pub g_pinv: Array2<f64>,
    pub omega_pinv: Array2<f64>,
    /// Almost-complex structure `J = -G omega`.
    pub j: Array2<f64>,
    pub rank_g: usize,
    pub rank_omega: usize,
    pub pinv_tol: f64,
}

pub fn build_geometry(state: &NgsState, opts: &GeometryOpts) -> Result<GeometricStructures> {
    let m = state.shape.param_count();
    let mut ws = PairWorkspace::new();
    ws.build(state, state)?;
    let mut frame = Vec::new();
    tangent_frame(state, &mut frame);
    let mut a = Array2::zeros((m, m));
    gram(&ws, state, &frame, &mut a)?;
    let g = a.mapv(|v| 2.0 * v.re);
    let omega = a.mapv(|v| 2.0 * v.im);
    let (g_pinv, rank_g, _) = pinv(&g, opts.pinv_tol)?;
    let (omega_pinv, rank_omega, _) = pinv(&omega, opts.pinv_tol)?;
    let j = -g_pinv.dot(&omega);
    Ok(GeometricStructures {
        a,
        g,
        omega,
        g_pinv,
        omega_pinv,
        j,
        rank_g,
        rank_omega,
        pinv_tol: opts.pinv_tol,
    })
}

impl GeometricStructures {
    /// Frobenius defect of `J^2 = -1` over the full parameter space.
    pub fn kahler_defect_full(&self) -> f64 {
        let m = self.j.nrows();
        let j2 = self.j.dot(&self.j);
        let mut acc = 0.0;
        for i in 0..m {
            for k in 0..m {
                let d = j2[(i, k)] + if i == k { 1.0 } else { 0.0 };
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// Frobenius defect of `J^2 = -1` restricted to the range of `J`
    /// (directions truly present in the tangent space; degenerate
    /// parameters such as an unused squeeze phase are excluded).
    pub fn kahler_defect_ranged(&self) -> Result<f64> {
        let (_, s, vt) = self
            .j
            .svd(false, true)
            .map_err(|e| Error::Linalg(format!("svd: {e}")))?;
        let vt = vt.ok_or_else(|| Error::Linalg("svd returned no VT".into()))?;
        let smax = s.iter().cloned().fold(0.0, f64::max);
        let m = self.j.nrows();
        let j2 = self.j.dot(&self.j);
        let mut acc = 0.0;
        for (i, &sv) in s.iter().enumerate() {
            if sv <= self.pinv_tol.sqrt() * smax {
                continue;
            }
            // ||(J^2 + 1) v_i||^2
            let vi = vt.row(i);
            for r in 0..m {
                let mut val = vi[r];
                for c in 0..m {
                    val += j2[(r, c)] * vi[c];
                }
                acc += val * val;
            }
        }
        Ok(acc.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMode {
    /// `omega zdot = -grad E`; norm and energy conserving.
    RealTime,
    /// `g zdot = -grad eps` with the normalized energy; converges to
    /// variational ground states.
    ImagTime,
    /// `g zdot = -grad <K> + J^T grad E`: joint Hamiltonian flow and
    /// norm-decaying damping, the inter-jump propagation law.
    NonHermitian,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FlowDiagnostics {
    pub evals: usize,
    pub lu_solves: usize,
    pub svd_fallbacks: usize,
    pub min_rank: usize,
    pub direct_im_c: usize,
}

/// Variational flow as an ODE over the flat parameter vector.
pub struct NgsFlow {
    pub shape: Shape,
    pub mode: FlowMode,
    pub hamiltonian: Option<SpinBosonOperator>,
    pub damping: Option<SpinBosonOperator>,
    pub opts: GeometryOpts,
    pub diagnostics: FlowDiagnostics,
    ws: PairWorkspace,
    frame: Vec<TangentPoly>,
    a: Array2<C64>,
    c_h: Vec<C64>,
    c_k: Vec<C64>,
    c_n: Vec<C64>,
    state_buf: Option<NgsState>,
}

impl NgsFlow {
    pub fn new(
        shape: Shape,
        mode: FlowMode,
        hamiltonian: Option<SpinBosonOperator>,
        damping: Option<SpinBosonOperator>,
        opts: GeometryOpts,
    ) -> Result<Self> {
        if matches!(mode, FlowMode::RealTime | FlowMode::ImagTime) && hamiltonian.is_none() {
            return Err(Error::InvalidInput(
                "real- and imaginary-time flows need a Hamiltonian".into(),
            ));
        }
        if mode == FlowMode::NonHermitian && hamiltonian.is_none() && damping.is_none() {
            return Err(Error::InvalidInput("damped flow needs H or K".into()));
        }
        let m = shape.param_count();
        Ok(Self {
            shape,
            mode,
            hamiltonian,
            damping,
            opts,
            diagnostics: FlowDiagnostics {
                min_rank: usize::MAX,
                ..Default::default()
            },
            ws: PairWorkspace::new(),
            frame: Vec::new(),
            a: Array2::zeros((m, m)),
            c_h: vec![ZERO; m],
            c_k: vec![ZERO; m],
            c_n: vec![ZERO; m],
            state_buf: None,
        })
    }

    /// Solve `mat x = rhs`: LU first, SVD pseudo-inverse (with one
    /// loosened-tolerance retry) when LU fails or its solution does not
    /// satisfy the system.
    fn robust_solve(
        &mut self,
        mat: &Array2<f64>,
        rhs: &Array1<f64>,
    ) -> Result<Array1<f64>> {
        if mat.iter().any(|v| !v.is_finite()) || rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "tangent-space system has non-finite entries".into(),
            ));
        }
        let mat_norm = mat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if let Ok(x) = mat.solve(rhs) {
            if x.iter().all(|v| v.is_finite()) {
                let mut resid = 0.0;
                let mx = mat.dot(&x);
                let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                for i in 0..rhs.len() {
                    let d = mx[i] - rhs[i];
                    resid += d * d;
                }
                let scale = rhs_norm + mat_norm * x_norm;
                // A solution larger than the pseudo-inverse could produce
                // lives in a direction the cutoff would truncate.
                let cap = rhs_norm / (self.opts.pinv_tol * mat_norm).max(1e-300);
                if resid.sqrt() <= 1e-8 * scale.max(1e-300) && x_norm <= cap {
                    self.diagnostics.lu_solves += 1;
                    return Ok(x);
                }
            }
        }
        self.diagnostics.svd_fallbacks += 1;
        // Tikhonov-filtered SVD solve rather than a hard-cutoff pseudo-
        // inverse: a rank threshold truncates exactly the directions that
        // pull coalescing branches apart and makes the right-hand side jump
        // whenever a singular value crosses it, which traps branches on top
        // of each other and stalls the adaptive integrator.
        if let Ok((u, s, vt)) = mat.svd(true, true) {
            let (u, vt) = (u.expect("svd U"), vt.expect("svd VT"));
            let smax = s.iter().cloned().fold(0.0, f64::max);
            let lam = (self.opts.pinv_tol * smax).max(1e-300);
            let rank = s.iter().filter(|&&sv| sv > lam).count();
            self.diagnostics.min_rank = self.diagnostics.min_rank.min(rank);
            let uts = u.t().dot(rhs);
            let n = rhs.len();
            let mut x = Array1::zeros(n);
            for (i, &sv) in s.iter().enumerate() {
                let f = sv / (sv * sv + lam * lam) * uts[i];
                for r in 0..n {
                    x[r] += vt[(i, r)] * f;
                }
            }
            if x.iter().all(|v: &f64| v.is_finite()) {
                return Ok(x);
            }
        }
        // Last resort when the SVD itself fails to converge: ridge-
        // regularized normal equations at the pseudo-inverse cutoff scale.
        let lam = (self.opts.pinv_tol * mat_norm).max(1e-300);
        let mut reg = mat.t().dot(mat);
        for i in 0..reg.nrows() {
            reg[(i, i)] += lam * lam;
        }
        let mtb = mat.t().dot(rhs);
        if let Ok(x) = reg.solve(&mtb) {
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
        Err(Error::Linalg(
            "tangent-space solve produced non-finite updates at both tolerances".into(),
        ))
    }

    /// Solve a tangent-space system block by block: spin orthogonality makes
    /// the Gram (hence `g` and `omega`) block diagonal over configurations.
    fn solve_sectored(&mut self, mat: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
        let n_cfg = self.shape.n_configs();
        if n_cfg <= 1 {
            return self.robust_solve(mat, rhs);
        }
        let m = rhs.len();
        let sector = m / n_cfg;
        let mut out = Array1::zeros(m);
        for s in 0..n_cfg {
            let r = s * sector..(s + 1) * sector;
            let block = mat.slice(ndarray::s![r.clone(), r.clone()]).to_owned();
            let rb = rhs.slice(ndarray::s![r.clone()]).to_owned();
            let xb = self.robust_solve(&block, &rb)?;
            out.slice_mut(ndarray::s![r]).assign(&xb);
        }
        Ok(out)
    }

    /// Blockwise LU of `mat x = rhs` without fallbacks; `None` when any
    /// block fails or produces non-finite entries.
    fn lu_sectored(&self, mat: &Array2<f64>, rhs: &Array1<f64>) -> Option<Array1<f64>> {
        let n_cfg = self.shape.n_configs().max(1);
        let m = rhs.len();
        let sector = m / n_cfg;
        let mut out = Array1::zeros(m);
        for s in 0..n_cfg {
            let r = s * sector..(s + 1) * sector;
            let block = mat.slice(ndarray::s![r.clone(), r.clone()]).to_owned();
            let rb = rhs.slice(ndarray::s![r.clone()]).to_owned();
            let xb = block.solve(&rb).ok()?;
            if !xb.iter().all(|v| v.is_finite()) {
                return None;
            }
            out.slice_mut(ndarray::s![r]).assign(&xb);
        }
        Some(out)
    }

    /// One right-hand-side evaluation at parameters `z`.
    pub fn eval(&mut self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        self.diagnostics.evals += 1;
        let m = self.shape.param_count();
        if z.len() != m || dz.len() != m {
            return Err(Error::ShapeMismatch("flow parameter vector length".into()));
        }
        // Reuse the state buffer to avoid reallocating z.
        let state = match self.state_buf.take() {
            Some(mut s) => {
                s.z.copy_from_slice(z);
                s
            }
            None => NgsState::new(self.shape, z.to_vec())?,
        };
        let result = self.eval_inner(&state, dz);
        self.state_buf = Some(state);
        result
    }

    fn eval_inner(&mut self, state: &NgsState, dz: &mut [f64]) -> Result<()> {
        let m = self.shape.param_count();
        self.ws.build(state, state)?;
        tangent_frame(state, &mut self.frame);
        gram(&self.ws, state, &self.frame, &mut self.a)?;
        let g = self.a.mapv(|v| 2.0 * v.re);

        match self.mode {
            FlowMode::RealTime => {
                let h = self.hamiltonian.as_ref().unwrap().clone();
                self.c_h.fill(ZERO);
                accumulate_ket_tangent(&self.ws, state, &self.frame, &h, ONE, &mut self.c_h)?;
                let grad_e = Array1::from_iter(self.c_h.iter().map(|c| 2.0 * c.re));
                let omega = self.a.mapv(|v| 2.0 * v.im);
                let zdot = self.solve_sectored(&omega, &grad_e.mapv(|v| -v))?;
                dz.copy_from_slice(zdot.as_slice().unwrap());
            }
            FlowMode::ImagTime => {
                let h = self.hamiltonian.as_ref().unwrap().clone();
                self.c_h.fill(ZERO);
                accumulate_ket_tangent(&self.ws, state, &self.frame, &h, ONE, &mut self.c_h)?;
                norm_tangent(&self.ws, state, &self.frame, &mut self.c_n)?;
                let n2 = braket(&self.ws).re;
                if !(n2 > 0.0) || !n2.is_finite() {
                    return Err(Error::NonFinite(format!("norm^2 = {n2} in flow")));
                }
                let e = matrix_element(&self.ws, &self.shape, &h)?.re;
                let eps = e / n2;
                let grad_eps = Array1::from_iter(
                    self.c_h
                        .iter()
                        .zip(self.c_n.iter())
                        .map(|(ch, cn)| (2.0 * ch.re - eps * 2.0 * cn.re) / n2),
                );
                let zdot = self.solve_sectored(&g, &grad_eps.mapv(|v| -v))?;
                dz.copy_from_slice(zdot.as_slice().unwrap());
            }
            FlowMode::NonHermitian => {
                let mut rhs = Array1::zeros(m);
                if let Some(k) = self.damping.clone() {
                    self.c_k.fill(ZERO);
                    accumulate_ket_tangent(&self.ws, state, &self.frame, &k, ONE, &mut self.c_k)?;
                    for i in 0..m {
                        rhs[i] -= 2.0 * self.c_k[i].re;
                    }
                }
                if let Some(h) = self.hamiltonian.clone() {
                    self.c_h.fill(ZERO);
                    accumulate_ket_tangent(&self.ws, state, &self.frame, &h, ONE, &mut self.c_h)?;
                    let grad_e = Array1::from_iter(self.c_h.iter().map(|c| 2.0 * c.re));
                    // J^T grad E = omega G grad E when the metric is
                    // invertible; otherwise fall back to the direct
                    // tangent overlap -2 Im C.
                    match self.lu_sectored(&g, &grad_e) {
                        Some(u) => {
                            let omega = self.a.mapv(|v| 2.0 * v.im);
                            let ju = omega.dot(&u);
                            // Validate the metric solve before trusting it.
                            let gu = g.dot(&u);
                            let mut resid = 0.0;
                            let mut scale = 0.0;
                            for i in 0..m {
                                let d = gu[i] - grad_e[i];
                                resid += d * d;
                                scale += grad_e[i] * grad_e[i];
                            }
                            if resid.sqrt() <= 1e-6 * scale.sqrt().max(1e-300) {
                                for i in 0..m {
                                    rhs[i] += ju[i];
                                }
                            } else {
                                self.diagnostics.direct_im_c += 1;
                                for i in 0..m {
                                    rhs[i] -= 2.0 * self.c_h[i].im;
                                }
                            }
                        }
                        None => {
                            self.diagnostics.direct_im_c += 1;
                            for i in 0..m {
                                rhs[i] -= 2.0 * self.c_h[i].im;
                            }
                        }
                    }
                }
                let zdot = self.solve_sectored(&g, &rhs)?;
                dz.copy_from_slice(zdot.as_slice().unwrap());
            }
        }
        if dz.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter velocities".into()));
        }
        Ok(())
    }
}

impl Ode<Vec<f64>> for NgsFlow {
    fn rhs(&mut self, _t: f64, y: &Vec<f64>, dy: &mut Vec<f64>) -> Result<()> {
        self.eval(y, dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{rk45, AdaptiveOpts};
    use crate::operator::{build_anharmonic, ChannelKind, LindbladSpec};
    use approx::assert_abs_diff_eq;

    fn coherent_state(alpha: C64, squeezing: bool) -> NgsState {
        let shape = Shape {
            n_spins: 0,
            n_modes: 1,
            n_gaussians: 1,
            squeezing,
        };
        let mut st = NgsState::zeros(shape).unwrap();
        let o = st.mode_offset(0, 0, 0);
        st.z[o] = alpha.re;
        st.z[o + 1] = alpha.im;
        st
    }

    fn harmonic(nu: f64) -> SpinBosonOperator {
        build_anharmonic(nu, 0.0)
    }

    #[test]
    fn real_time_coherent_rotation() {
        // H = nu n: alpha(t) = alpha0 e^{-i nu t}, kappa/theta free phase.
        let nu = 1.3;
        let st = coherent_state(C64::new(0.8, 0.3), false);
        let mut flow = NgsFlow::new(
            st.shape,
            FlowMode::RealTime,
            Some(harmonic(nu)),
            None,
            GeometryOpts::default(),
        )
        .unwrap();
        let mut z = st.z.clone();
        let t = 0.9;
        rk45(&mut flow, &mut z, 0.0, t, &AdaptiveOpts::default()).unwrap();
        let end = NgsState::new(st.shape, z).unwrap();
        let o = end.mode_offset(0, 0, 0);
        let alpha_t = C64::new(end.z[o], end.z[o + 1]);
        let expect = C64::new(0.8, 0.3) * (-C64::i() * nu * t).exp();
        assert!((alpha_t - expect).norm() < 1e-7, "{alpha_t} vs {expect}");
        // Norm conserved.
        assert_abs_diff_eq!(end.norm_sqr(), st.norm_sqr(), epsilon = 1e-8);
    }

    #[test]
    fn real_time_conserves_energy_anharmonic() {
        let st = {
            let shape = Shape {
                n_spins: 0,
                n_modes: 1,
                n_gaussians: 2,
                squeezing: true,
            };
            let mut s = NgsState::zeros(shape).unwrap();
            let o0 = s.mode_offset(0, 0, 0);
            s.z[o0] = 1.0;
            s.z[o0 + 2] = 0.15;
            let o1 = s.mode_offset(0, 1, 0);
            s.z[o1] = 0.6;
            s.z[o1 + 1] = -0.3;
            s.z[o1 + 2] = 0.05;
            s.normalize().unwrap();
            s
        };
        let h = build_anharmonic(1.0, 1.0);
        let e0 = crate::energy::expectation(&st, &h).unwrap().re;
        let mut flow = NgsFlow::new(
            st.shape,
            FlowMode::RealTime,
            Some(h.clone()),
            None,
            GeometryOpts::default(),
        )
        .unwrap();
        let mut z = st.z.clone();
        rk45(&mut flow, &mut z, 0.0, 2.0, &AdaptiveOpts::default()).unwrap();
        let end = NgsState::new(st.shape, z).unwrap();
        let e1 = crate::energy::expectation(&end, &h).unwrap().re;
        assert!((e1 - e0).abs() < 1e-6 * (1.0 + e0.abs()), "E drift {e0} -> {e1}");
        assert!((end.norm_sqr() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn imag_time_relaxes_energy_and_conserves_norm() {
        let st = {
            let shape = Shape {
                n_spins: 0,
                n_modes: 1,
                n_gaussians: 1,
                squeezing: true,
            };
            let mut s = NgsState::zeros(shape).unwrap();
            let o = s.mode_offset(0, 0, 0);
            s.z[o] = 0.9;
            s.z[o + 1] = -0.4;
            s.z[o + 2] = 0.2;
            s
        };
        let h = build_anharmonic(1.0, 0.5);
        let eps0 = crate::energy::expectation(&st, &h).unwrap().re;
        let n0 = st.norm_sqr();
        let mut flow = NgsFlow::new(
            st.shape,
            FlowMode::ImagTime,
            Some(h.clone()),
            None,
            GeometryOpts::default(),
        )
        .unwrap();
        let mut z = st.z.clone();
        rk45(&mut flow, &mut z, 0.0, 6.0, &AdaptiveOpts::default()).unwrap();
        let end = NgsState::new(st.shape, z).unwrap();
        let eps1 = crate::energy::expectation(&end, &h).unwrap().re;
        assert!(eps1 < eps0, "energy should relax: {eps0} -> {eps1}");
        // Ground state of omega n + mu n^2 is the vacuum.
        assert!(eps1 < 1e-4, "eps1={eps1}");
        assert_abs_diff_eq!(end.norm_sqr(), n0, epsilon = 1e-6 * n0);
    }

    #[test]
    fn damped_flow_decays_coherent_cavity() {
        // H = nu n, cavity decay kappa_c: exact Lindblad gives
        // alpha(t) = alpha0 e^{-i nu t - kappa_c t/2} and for a coherent
        // state the trajectory has no jumps in the mean... the
        // deterministic non-Hermitian segment alone keeps the state
        // coherent with exactly this alpha and norm e^{-kappa |alpha0|^2 (1 - e^{-kappa t}) ...}.
        let nu = 0.7;
        let kappa = 0.5;
        let alpha0 = C64::new(1.1, -0.2);
        let st = coherent_state(alpha0, false);
        let mut spec = LindbladSpec::default();
        spec.push(ChannelKind::CavityDecay, kappa).unwrap();
        let k = spec.damping_operator(0, 1).unwrap();
        let mut flow = NgsFlow::new(
            st.shape,
            FlowMode::NonHermitian,
            Some(harmonic(nu)),
            Some(k),
            GeometryOpts::default(),
        )
        .unwrap();
        let mut z = st.z.clone();
        let t = 1.2;
        rk45(&mut flow, &mut z, 0.0, t, &AdaptiveOpts::default()).unwrap();
        let end = NgsState::new(st.shape, z).unwrap();
        let o = end.mode_offset(0, 0, 0);
        let alpha_t = C64::new(end.z[o], end.z[o + 1]);
        let expect = alpha0 * (-C64::i() * nu * t - kappa * t / 2.0).exp();
        assert!((alpha_t - expect).norm() < 1e-6, "{alpha_t} vs {expect}");
        // Norm^2 decays as exp(-|alpha0|^2 (1 - e^{-kappa t})).
        let expect_n2 = (-(alpha0.norm_sqr()) * (1.0 - (-kappa * t).exp())).exp();
        assert!(
            (end.norm_sqr() - expect_n2).abs() < 1e-6,
            "norm {} vs {}",
            end.norm_sqr(),
            expect_n2
        );
    }

    #[test]
    fn damped_flow_scalar_decay_rate() {
        // K = c (a constant): zdot has only kappa decaying at -c.
        let st = coherent_state(C64::new(0.4, 0.1), false);
        let mut k = SpinBosonOperator::zero(0, 1);
        k.add_term(C64::new(0.8, 0.0), &[], &[]).unwrap();
        let mut flow = NgsFlow::new(
            st.shape,
            FlowMode::NonHermitian,
            None,
            Some(k),
            GeometryOpts::default(),
        )
        .unwrap();
        let mut dz = vec![0.0; st.z.len()];
        flow.eval(&st.z, &mut dz).unwrap();
        let o = st.block_offset(0, 0);
        assert_abs_diff_eq!(dz[o], -0.8, epsilon = 1e-9);
        for (i, v) in dz.iter().enumerate() {
            if i != o {
                assert!(v.abs() < 1e-9, "param {i} moved: {v}");
            }
        }
    }

    #[test]
    fn kahler_property_on_generic_state() {
        let shape = Shape {
            n_spins: 1,
            n_modes: 1,
            n_gaussians: 2,
            squeezing: true,
        };
        let mut st = NgsState::zeros(shape).unwrap();
        let vals = [0.3, -0.2, 0.5, 0.1, 0.25, 0.7, -0.15, 0.4];
        for (i, v) in st.z.iter_mut().enumerate() {
            *v = vals[i % vals.len()] * (1.0 + (i as f64) * 0.03);
        }
        for sigma in 0..2 {
            for p in 0..2 {
                let o = st.mode_offset(sigma, p, 0);
                st.z[o + 2] = 0.2 + st.z[o + 2].abs();
            }
        }
        let geo = build_geometry(&st, &GeometryOpts::default()).unwrap();
        assert_eq!(geo.rank_g, shape.param_count());
        let defect = geo.kahler_defect_full();
        assert!(defect < 1e-8, "J^2 defect {defect}");
    }

    #[test]
    fn kahler_ranged_defect_small_at_weak_squeezing() {
        // As r -> 0 the squeeze-phase direction degenerates; the ranged
        // defect stays controlled while the full one blows up.
        let shape = Shape {
            n_spins: 0,
            n_modes: 1,
            n_gaussians: 1,
            squeezing: true,
        };
        let mut st = NgsState::zeros(shape).unwrap();
        let o = st.mode_offset(0, 0, 0);
        st.z[o] = 0.5;
        st.z[o + 1] = 0.2;
        st.z[o + 2] = 1e-6;
        st.z[o + 3] = 0.3;
        let geo = build_geometry(&st, &GeometryOpts::default()).unwrap();
        let ranged = geo.kahler_defect_ranged().unwrap();
        assert!(ranged < 1e-6, "ranged defect {ranged}");
        // The unrestricted defect blows up: the squeeze pair degenerates
        // jointly and its metric direction falls below the cutoff.
        assert!(geo.kahler_defect_full() > 1e-2);
    }

    #[test]
    fn flow_diagnostics_track_solves() {
        let st = coherent_state(C64::new(0.3, 0.0), false);
        let mut flow = NgsFlow::new(
            st.shape,
            FlowMode::RealTime,
            Some(harmonic(1.0)),
            None,
            GeometryOpts::default(),
        )
        .unwrap();
        let mut dz = vec![0.0; st.z.len()];
        flow.eval(&st.z, &mut dz).unwrap();
        assert_eq!(flow.diagnostics.evals, 1);
        assert!(flow.diagnostics.lu_solves + flow.diagnostics.svd_fallbacks >= 1);
    }
}
