//! Named, ready-to-run configurations covering each benchmark scenario.

use crate::config::{
    InitialKind, Method, ModelKind, ModelSection, OutputSection, RunSpec,
};

/// A named run configuration with a one-line summary.
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub spec: RunSpec,
}

fn model(kind: ModelKind) -> ModelSection {
    ModelSection {
        kind,
        n_spins: 1,
        delta: 0.0,
        coupling: 0.0,
        nu: 1.0,
        lambda: 0.0,
        epsilon: Vec::new(),
        anharmonicity: 1.0,
        xi: 0.0,
        cavity_frequency: 0.0,
    }
}

fn output(t_final: f64, n_points: usize, obs: &[&str]) -> OutputSection {
    OutputSection {
        t_final,
        t_start: 0.0,
        n_points,
        observables: obs.iter().map(|s| s.to_string()).collect(),
        path: None,
        format: Default::default(),
    }
}

fn spec(method: Method, model: ModelSection, output: OutputSection) -> RunSpec {
    RunSpec {
        method,
        model,
        lindblad: Default::default(),
        initial: Default::default(),
        numerics: Default::default(),
        output,
    }
}

fn anharmonic(squeezing: bool) -> RunSpec {
    let mut s = spec(
        Method::Ngs,
        model(ModelKind::Anharmonic),
        output(10.0, 201, &["infidelity", "n_cav", "x_cav"]),
    );
    s.numerics.n_gaussians = 4;
    s.numerics.squeezing = squeezing;
    s.numerics.fock_cutoffs = vec![30];
    s
}

fn htc_closed(coupling: f64, lambda: f64, n_gaussians: usize) -> RunSpec {
    let mut m = model(ModelKind::Htc);
    m.n_spins = 3;
    m.coupling = coupling;
    m.lambda = lambda;
    let mut s = spec(
        Method::Ngs,
        m,
        output(
            20.0,
            201,
            &["sz", "n_cav", "n_vib_0", "n_vib_1", "n_vib_2", "energy", "norm"],
        ),
    );
    s.numerics.n_gaussians = n_gaussians;
    s.numerics.fock_cutoffs = vec![10];
    s
}

fn htc_closed_twa(coupling: f64, lambda: f64) -> RunSpec {
    let mut m = model(ModelKind::Htc);
    m.n_spins = 3;
    m.coupling = coupling;
    m.lambda = lambda;
    let mut s = spec(
        Method::Twa,
        m,
        output(20.0, 201, &["sz", "n_cav", "n_vib_0", "n_vib_1", "n_vib_2"]),
    );
    s.numerics.n_traj = 10_000;
    s.numerics.dt = 5e-3;
    s
}

fn htc_open(cavity_decay: f64) -> RunSpec {
    let mut m = model(ModelKind::Htc);
    m.n_spins = 3;
    m.coupling = 0.1;
    m.lambda = 1.0;
    let mut s = spec(Method::Ngs, m, output(10.0, 101, &["sz", "n_cav"]));
    s.lindblad.cavity_decay = cavity_decay;
    s.numerics.n_gaussians = 8;
    s.numerics.n_traj = 40;
    s.numerics.fock_cutoffs = vec![10, 8, 8, 8];
    s
}

fn htc_open_twa(cavity_decay: f64) -> RunSpec {
    let mut m = model(ModelKind::Htc);
    m.n_spins = 3;
    m.coupling = 0.1;
    m.lambda = 1.0;
    let mut s = spec(
        Method::Twa,
        m,
        output(10.0, 101, &["sz", "n_cav", "n_cav_symbol"]),
    );
    s.lindblad.cavity_decay = cavity_decay;
    s.numerics.n_traj = 10_000;
    s.numerics.dt = 5e-3;
    s
}

fn tc_superradiance(collective_decay: f64, twa: bool) -> RunSpec {
    let mut m = model(ModelKind::TcCollective);
    m.n_spins = 3;
    m.delta = 1.0;
    m.coupling = 0.1;
    let mut s = spec(
        if twa { Method::Twa } else { Method::Ngs },
        m,
        output(10.0, 101, &["sz", "n_cav", "n_spin"]),
    );
    s.lindblad.collective_decay = collective_decay;
    if twa {
        s.numerics.n_traj = 10_000;
        s.numerics.dt = 5e-3;
    } else {
        s.numerics.n_gaussians = 8;
        s.numerics.n_traj = 40;
        s.numerics.fock_cutoffs = vec![10, 10];
    }
    s
}

fn htc_fidelity(coupling: f64, lambda: f64) -> RunSpec {
    let mut m = model(ModelKind::Htc);
    m.n_spins = 1;
    m.coupling = coupling;
    m.lambda = lambda;
    let mut s = spec(
        Method::Ngs,
        m,
        output(10.0, 101, &["infidelity", "sz", "n_cav"]),
    );
    s.numerics.n_gaussians = 8;
    s.numerics.fock_cutoffs = vec![14, 10];
    s
}

/// All presets, rebuilt on each call.
pub fn all() -> Vec<Preset> {
    let gamma_weak = 0.01 / 3f64.sqrt();
    let gamma_strong = 0.1 / 3f64.sqrt();
    let mut list = Vec::new();
    let mut push = |name, summary, spec| list.push(Preset { name, summary, spec });

    push(
        "anharmonic-squeezed",
        "quartic oscillator from a coherent state, 4 squeezed Gaussians",
        anharmonic(true),
    );
    push(
        "anharmonic-coherent",
        "quartic oscillator with the squeezing parameters frozen",
        anharmonic(false),
    );
    {
        let mut m = model(ModelKind::GaussianHeff);
        m.xi = 0.5;
        let mut s = spec(Method::Ngs, m, output(4.0, 81, &["x_cav", "n_cav", "norm"]));
        s.lindblad.cavity_decay = 1.0;
        s.numerics.unraveling = false;
        s.numerics.n_gaussians = 2;
        s.numerics.fock_cutoffs = vec![40];
        s.initial.kind = InitialKind::RandomSuperposition;
        push(
            "gaussian-nonhermitian",
            "linearly driven damped mode from a random two-Gaussian superposition",
            s,
        );
    }
    push(
        "htc-closed-weak",
        "closed dynamics, weak coupling to cavity and vibrations",
        htc_closed(0.1, 0.1, 4),
    );
    push(
        "htc-closed-holstein",
        "closed dynamics, strong vibrational dressing",
        htc_closed(0.1, 1.0, 12),
    );
    push(
        "htc-closed-cavity",
        "closed dynamics, strong cavity exchange",
        htc_closed(1.0, 0.1, 2),
    );
    push(
        "htc-closed-strong",
        "closed dynamics, strong coupling in both channels",
        htc_closed(1.0, 1.0, 4),
    );
    {
        let mut s = htc_closed(0.1, 1.0, 12);
        s.model.epsilon = vec![0.2, 0.3, 0.4];
        push(
            "htc-closed-disordered",
            "strong vibrational dressing with static site disorder",
            s,
        );
    }
    push(
        "htc-closed-weak-twa",
        "phase-space sampling of the weak-coupling closed dynamics",
        htc_closed_twa(0.1, 0.1),
    );
    push(
        "htc-closed-holstein-twa",
        "phase-space sampling at strong vibrational dressing",
        htc_closed_twa(0.1, 1.0),
    );
    push(
        "htc-closed-cavity-twa",
        "phase-space sampling at strong cavity exchange",
        htc_closed_twa(1.0, 0.1),
    );
    push(
        "htc-closed-strong-twa",
        "phase-space sampling with both couplings strong",
        htc_closed_twa(1.0, 1.0),
    );
    push(
        "htc-open-weak-loss",
        "jump-unraveled dynamics with cavity loss at the coupling scale",
        htc_open(0.1),
    );
    push(
        "htc-open-strong-loss",
        "jump-unraveled dynamics with cavity loss ten times the coupling",
        htc_open(1.0),
    );
    push(
        "htc-open-weak-loss-twa",
        "phase-space counterpart of the weak-loss run",
        htc_open_twa(0.1),
    );
    push(
        "htc-open-strong-loss-twa",
        "phase-space counterpart of the strong-loss run",
        htc_open_twa(1.0),
    );
    push(
        "tc-superradiance-weak",
        "collective decay below threshold, bosonic large-spin ansatz",
        tc_superradiance(gamma_weak, false),
    );
    push(
        "tc-superradiance-strong",
        "collective decay at the coupling scale, bosonic large-spin ansatz",
        tc_superradiance(gamma_strong, false),
    );
    push(
        "tc-superradiance-weak-twa",
        "phase-space counterpart of the weak collective decay run",
        tc_superradiance(gamma_weak, true),
    );
    push(
        "tc-superradiance-strong-twa",
        "phase-space counterpart of the strong collective decay run",
        tc_superradiance(gamma_strong, true),
    );
    push(
        "htc-fidelity-weak",
        "single-emitter overlap tracking against the dense reference, weak coupling",
        htc_fidelity(0.1, 0.1),
    );
    push(
        "htc-fidelity-holstein",
        "single-emitter overlap tracking, strong vibrational dressing",
        htc_fidelity(0.1, 1.0),
    );
    push(
        "htc-fidelity-cavity",
        "single-emitter overlap tracking, strong cavity exchange",
        htc_fidelity(1.0, 0.1),
    );
    push(
        "htc-fidelity-strong",
        "single-emitter overlap tracking, both couplings strong",
        htc_fidelity(1.0, 1.0),
    );
    {
        let mut m = model(ModelKind::Htc);
        m.coupling = 0.0;
        m.cavity_frequency = 1.0;
        let mut s = spec(
            Method::Twa,
            m,
            output(10.0, 101, &["re_cav", "im_cav", "n_cav", "n_cav_symbol"]),
        );
        s.lindblad.cavity_decay = 0.2;
        s.numerics.n_traj = 2000;
        s.numerics.dt = 2e-3;
        push(
            "free-cavity-decay",
            "decoupled lossy cavity sampled in phase space; the mean follows a damped rotation",
            s,
        );
    }
    list
}

pub fn names() -> Vec<&'static str> {
    all().into_iter().map(|p| p.name).collect()
}

pub fn get(name: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{config_hash, parse_config, to_toml};

    #[test]
    fn every_preset_round_trips_through_toml_and_validates() {
        let list = all();
        assert!(list.len() >= 20);
        for p in &list {
            let text = to_toml(&p.spec);
            let parsed = parse_config(&text)
                .unwrap_or_else(|e| panic!("preset {} does not parse: {e}", p.name));
            parsed
                .validate()
                .unwrap_or_else(|e| panic!("preset {} does not validate: {e}", p.name));
            assert_eq!(
                config_hash(&parsed),
                config_hash(&p.spec),
                "preset {} drifts through serialization",
                p.name
            );
        }
    }

    #[test]
    fn preset_names_are_unique_and_resolvable() {
        let ns = names();
        let mut sorted = ns.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), ns.len());
        for n in ns {
            assert!(get(n).is_some());
        }
    }
}
