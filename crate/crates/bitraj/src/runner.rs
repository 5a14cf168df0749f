//! Suite and experiment execution.
//!
//! `run_check` assembles the full invariant suite — the table properties
//! Q1–Q5/Q7/Q8 on seeded random instances, the phenomenological
//! experiments, the composite identities, and the master-layer identities —
//! into a sorted report. `run_experiment` and `run_table` drive single
//! config-defined experiments and CSV table export.

use serde::Serialize;

use crate::biprob;
use crate::composite::{
    self, choi_cptp_check, compose, convergence_csv, dynamical_map_exact, factorization_check,
    moments_identity_check,
};
use crate::config::{ExperimentSpec, LoadedConfig};
use crate::error::{Error, Result};
use crate::master;
use crate::numeric::{self, cr, CMatrix};
use crate::phenomenology::{self, ExperimentReport};
use crate::rng::{self, SeededRng};
use crate::system::{InitializationEvent, MeasurementSchedule, Observable, QuantumSystem};

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub ns: Vec<usize>,
    /// random instances per (d, n) cell
    pub instances: usize,
    pub q3_instances: usize,
    pub cptp_instances: usize,
    pub tol_equality: f64,
    pub tol_psd: f64,
    pub convergence_grids: Vec<usize>,
    pub zeno_n: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            dims: vec![2, 3, 4],
            ns: vec![1, 2, 3, 4],
            instances: 5,
            q3_instances: 10,
            cptp_instances: 20,
            tol_equality: 1e-10,
            tol_psd: 1e-10,
            convergence_grids: vec![8, 16, 32, 64],
            zeno_n: 100,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub rng_algorithm: &'static str,
    pub seed: u64,
    pub passed: bool,
    pub results: Vec<ExperimentReport>,
}

impl SuiteReport {
    fn new(seed: u64, mut results: Vec<ExperimentReport>) -> Self {
        results.sort_by(|a, b| a.name.cmp(&b.name));
        let passed = results.iter().all(|r| r.passed);
        Self { rng_algorithm: rng::RNG_ALGORITHM, seed, passed, results }
    }
}

struct RandomInstance {
    sys: QuantumSystem,
    init: InitializationEvent,
    schedule: MeasurementSchedule,
}

fn random_instance(rng: &mut SeededRng, d: usize, n: usize) -> RandomInstance {
    let sys = rng::random_system(rng, d);
    let init = rng::random_init(rng, &sys, 0.0);
    let schedule = rng::random_schedule(rng, &sys, 0.0, n).expect("valid random schedule");
    RandomInstance { sys, init, schedule }
}

fn cell_rng(seed: u64, stream: u64) -> SeededRng {
    use rand_chacha::rand_core::SeedableRng;
    let mut r = SeededRng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Max |Q| over sampled pairs that differ in the final outcome; causality
/// makes these exact zeros.
fn q2_deviation(inst: &RandomInstance, rng: &mut SeededRng) -> Result<f64> {
    use rand::Rng;
    let n = inst.schedule.len();
    let mut dev: f64 = 0.0;
    for _ in 0..8 {
        let mut f_plus = Vec::with_capacity(n);
        let mut f_minus = Vec::with_capacity(n);
        for j in 0..n {
            let obs = inst.schedule.observable(j);
            f_plus.push(obs.outcomes()[rng.gen_range(0..obs.len())]);
            f_minus.push(obs.outcomes()[rng.gen_range(0..obs.len())]);
        }
        let last = inst.schedule.observable(n - 1);
        if last.len() < 2 {
            break;
        }
        if f_plus[n - 1] == f_minus[n - 1] {
            let idx = last.outcome_index(f_minus[n - 1])?;
            f_minus[n - 1] = last.outcomes()[(idx + 1) % last.len()];
        }
        let q = biprob::biprob(&inst.sys, &inst.init, &inst.schedule, &f_plus, &f_minus)?;
        dev = dev.max(q.norm());
    }
    Ok(dev)
}

fn q_property_entries(opts: &SuiteOptions) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::new();
    for (cell, (&d, &n)) in opts
        .dims
        .iter()
        .flat_map(|d| opts.ns.iter().map(move |n| (d, n)))
        .enumerate()
    {
        let mut rng = cell_rng(opts.seed, cell as u64 + 1);
        let mut q1: f64 = 0.0;
        let mut q2: f64 = 0.0;
        let mut q4: f64 = 0.0;
        let mut q5: f64 = 0.0;
        let mut q7: f64 = 0.0;
        let mut q8: f64 = 0.0;
        for _ in 0..opts.instances {
            let inst = random_instance(&mut rng, d, n);
            let table = biprob::full_table(&inst.sys, &inst.init, &inst.schedule)?;
            q1 = q1.max(table.q1_deviation());
            q2 = q2.max(q2_deviation(&inst, &mut rng)?);
            match table.check_positivity() {
                Ok(metric) => q4 = q4.max((-metric.min_eigenvalue()).max(0.0)),
                Err(Error::NotPsd { min_eigenvalue }) => q4 = q4.max(-min_eigenvalue),
                Err(e) => return Err(e),
            }
            for j in 1..n {
                q5 = q5.max(table.check_bi_consistency(j)?);
            }
            q7 = q7.max(table.q7_deviation()?);
            let resolutions: Vec<_> = (0..n)
                .map(|j| {
                    use rand::Rng;
                    if j == 0 || rng.gen_bool(0.5) {
                        Some(rng::random_resolution(&mut rng, inst.schedule.observable(j)))
                    } else {
                        None
                    }
                })
                .collect();
            q8 = q8.max(biprob::check_additivity(
                &inst.sys,
                &inst.init,
                &inst.schedule,
                &resolutions,
            )?);
        }
        let tag = format!("d{d}_n{n}");
        out.push(ExperimentReport::equality(format!("q1_norm_{tag}"), q1, opts.tol_equality));
        out.push(ExperimentReport::equality(format!("q2_causality_{tag}"), q2, opts.tol_equality));
        out.push(ExperimentReport::equality(format!("q4_psd_{tag}"), q4, opts.tol_psd));
        if n >= 2 {
            out.push(ExperimentReport::equality(
                format!("q5_biconsistency_{tag}"),
                q5,
                opts.tol_equality,
            ));
        }
        out.push(ExperimentReport::equality(
            format!("q7_measurement_link_{tag}"),
            q7,
            opts.tol_equality,
        ));
        out.push(ExperimentReport::equality(
            format!("q8_additivity_{tag}"),
            q8,
            opts.tol_equality,
        ));
    }
    Ok(out)
}

fn q3_entry(opts: &SuiteOptions) -> Result<ExperimentReport> {
    let mut rng = cell_rng(opts.seed, 1009);
    let mut dev: f64 = 0.0;
    for rep in 0..opts.q3_instances {
        use rand::Rng;
        let d_a = 2;
        let d_b = rng.gen_range(2..=3);
        let n = 1 + rep % 2;
        let sys_a = rng::random_system(&mut rng, d_a);
        let sys_b = rng::random_system(&mut rng, d_b);
        let comp = compose(
            &sys_a,
            &sys_b,
            0.0,
            &rng::random_hermitian(&mut rng, d_a),
            &rng::random_hermitian(&mut rng, d_b),
        )?;
        let init_a = rng::random_init(&mut rng, &sys_a, 0.0);
        let init_b = rng::random_init(&mut rng, &sys_b, 0.0);
        let times = rng::random_times(&mut rng, 0.0, n);
        let pairs: Vec<_> = times
            .into_iter()
            .enumerate()
            .map(|(j, t)| {
                (
                    t,
                    rng::random_fine_observable(&mut rng, d_a, &format!("A{j}")),
                    rng::random_fine_observable(&mut rng, d_b, &format!("B{j}")),
                )
            })
            .collect();
        dev = dev.max(factorization_check(&comp, &init_a, &init_b, &pairs)?);
    }
    Ok(ExperimentReport::equality("q3_factorization", dev, opts.tol_equality))
}

fn phenomenology_entries(opts: &SuiteOptions) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::new();
    let mut rng = cell_rng(opts.seed, 2003);

    // random-instance equality experiments
    let inst = random_instance(&mut rng, 3, 3);
    out.push(
        phenomenology::causality_experiment(&inst.sys, &inst.init, &inst.schedule)?
            .renamed("causality_random_d3_n3"),
    );
    let inst = random_instance(&mut rng, 4, 4);
    out.push(
        phenomenology::markov_experiment(&inst.sys, &inst.init, &inst.schedule)?
            .renamed("markov_random_d4_n4"),
    );

    // double stochasticity and t-independence of the correlation matrix
    let sys = rng::random_system(&mut rng, 3);
    let k = rng::random_fine_observable(&mut rng, 3, "K");
    let l = rng::random_fine_observable(&mut rng, 3, "L");
    let c0 = phenomenology::uncertainty_correlation(&sys, &k, &l, 0.0)?;
    let c1 = phenomenology::uncertainty_correlation(&sys, &k, &l, 5.3)?;
    let mut dev: f64 = 0.0;
    for (row0, row1) in c0.iter().zip(&c1) {
        dev = dev.max((row0.iter().sum::<f64>() - 1.0).abs());
        for (a, b) in row0.iter().zip(row1) {
            dev = dev.max((a - b).abs());
        }
    }
    for j in 0..c0[0].len() {
        dev = dev.max((c0.iter().map(|row| row[j]).sum::<f64>() - 1.0).abs());
    }
    out.push(ExperimentReport::equality("uncertainty_correlation_random_d3", dev, opts.tol_equality));

    // statics equivalence on a random instance
    let sys = rng::random_system(&mut rng, 3);
    let init = rng::random_init(&mut rng, &sys, 0.0);
    let k = rng::random_fine_observable(&mut rng, 3, "K");
    out.push(phenomenology::statics_equivalence(&sys, &init, &k, 1.3)?.renamed("statics_random_d3"));

    // the shipped two-slit witness: inconsistency and blur placement
    let (sys, init, schedule, blur) = phenomenology::witness::two_slit();
    out.push(
        phenomenology::inconsistency_witness(&sys, &init, &schedule, 1)?
            .renamed("inconsistency_two_slit"),
    );
    out.push(
        phenomenology::causality_experiment(&sys, &init, &schedule)?.renamed("causality_two_slit"),
    );
    let (terminal, interior) =
        phenomenology::coarse_grain_placement_experiment(&sys, &init, &schedule, 1, &blur)?;
    out.push(ExperimentReport::equality("coarse_placement_terminal_two_slit", terminal, 1e-12));
    out.push(ExperimentReport::violation("coarse_placement_interior_two_slit", interior, 0.01));

    // Zeno ladder on the Rabi qubit
    let sys = crate::system::standard::rabi_qubit();
    let z = crate::system::standard::qubit_z();
    let p1 = phenomenology::zeno_experiment(&sys, &z, 1.0, 1.0, 1)?;
    let p2 = phenomenology::zeno_experiment(&sys, &z, 1.0, 1.0, 2)?;
    let pn = phenomenology::zeno_experiment(&sys, &z, 1.0, 1.0, opts.zeno_n)?;
    let closed = |n: usize| {
        (std::f64::consts::PI / (2.0 * n as f64)).cos().powi(2 * n as i32)
    };
    let dev = (p1 - closed(1))
        .abs()
        .max((p2 - closed(2)).abs())
        .max((pn - closed(opts.zeno_n)).abs());
    out.push(
        ExperimentReport::equality("zeno_closed_form_qubit", dev, opts.tol_equality)
            .with_value(pn),
    );
    let mut monotone_dev: f64 = 0.0;
    let mut prev = -1.0;
    let mut n = 1usize;
    while n <= 256 {
        let p = phenomenology::zeno_experiment(&sys, &z, 1.0, 1.0, n)?;
        monotone_dev = monotone_dev.max(prev - p);
        prev = p;
        n *= 2;
    }
    out.push(ExperimentReport::equality("zeno_monotone_ladder", monotone_dev.max(0.0), 1e-12));

    // short-time survival: finite difference against the variance formula
    let v2 = crate::system::survival_variance(&sys, &z, 1.0, 0.0)?;
    let dt = 1e-3;
    let fd = (1.0 - phenomenology::zeno_experiment(&sys, &z, 1.0, dt, 1)?) / (dt * dt);
    out.push(ExperimentReport::equality(
        "survival_variance_finite_difference",
        (fd - v2).abs() / v2,
        0.01,
    ));
    out.push(ExperimentReport::equality(
        "survival_variance_closed_form",
        (v2 - std::f64::consts::PI.powi(2) / 4.0).abs(),
        opts.tol_equality,
    ));

    // stationarity: global time shift leaves probabilities unchanged
    let mut dev: f64 = 0.0;
    for _ in 0..3 {
        let d = 3;
        let sys = rng::random_system(&mut rng, d);
        let obs = rng::random_fine_observable(&mut rng, d, "K0");
        let weights: Vec<(&Observable, f64, f64)> =
            obs.outcomes().iter().map(|&f| (&obs, f, 1.0 / d as f64)).collect();
        let init0 = InitializationEvent::from_weights(&sys, 0.0, &weights)?;
        let schedule0 = rng::random_schedule(&mut rng, &sys, 0.0, 3)?;
        let shift = 0.7;
        let init1 = InitializationEvent::from_weights(&sys, shift, &weights)?;
        let schedule1 = schedule0.shifted(shift);
        let table0 = biprob::full_table(&sys, &init0, &schedule0)?;
        let table1 = biprob::full_table(&sys, &init1, &schedule1)?;
        for ((plus, minus, v0), (_, _, v1)) in table0.iter().zip(table1.iter()) {
            let _ = (plus, minus);
            dev = dev.max((v0 - v1).norm());
        }
    }
    out.push(ExperimentReport::equality("stationarity_shift_invariance", dev, opts.tol_equality));

    Ok(out)
}

fn composite_entries(opts: &SuiteOptions) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::new();
    let mut rng = cell_rng(opts.seed, 3001);

    // moments identity across every split, assignments to +, −, or both
    let mut dev: f64 = 0.0;
    for _ in 0..4 {
        use rand::Rng;
        let d_b = rng.gen_range(2..=3);
        let n = rng.gen_range(1..=3usize);
        let sys_a = rng::random_system(&mut rng, 2);
        let sys_b = rng::random_system(&mut rng, d_b);
        let comp = compose(
            &sys_a,
            &sys_b,
            1.0,
            &rng::random_hermitian(&mut rng, 2),
            &rng::random_hermitian(&mut rng, d_b),
        )?;
        let rho_b = rng::random_density(&mut rng, d_b);
        let times = rng::random_times(&mut rng, 0.0, n);
        for mask in 0..3usize.pow(n as u32) {
            let mut i_plus = Vec::new();
            let mut i_minus = Vec::new();
            let mut m = mask;
            for pos in 1..=n {
                match m % 3 {
                    0 => i_plus.push(pos),
                    1 => i_minus.push(pos),
                    _ => {
                        i_plus.push(pos);
                        i_minus.push(pos);
                    }
                }
                m /= 3;
            }
            dev = dev.max(moments_identity_check(&comp, &rho_b, &times, &i_plus, &i_minus)?);
        }
    }
    out.push(ExperimentReport::equality("moments_identity_random", dev, opts.tol_equality));

    // exact map: trace preservation and Choi positivity on random couplings
    let mut trace_dev: f64 = 0.0;
    let mut choi_dev: f64 = 0.0;
    for _ in 0..opts.cptp_instances {
        use rand::Rng;
        let sys_a = rng::random_system(&mut rng, 2);
        let sys_b = rng::random_system(&mut rng, 2);
        let lambda = rng.gen_range(-2.0..2.0);
        let comp = compose(
            &sys_a,
            &sys_b,
            lambda,
            &rng::random_hermitian(&mut rng, 2),
            &rng::random_hermitian(&mut rng, 2),
        )?;
        let rho_b = rng::random_density(&mut rng, 2);
        let t = rng.gen_range(0.1..2.0);
        let superop = dynamical_map_exact(&comp, &rho_b, t)?;
        let (min_eig, tdev) = choi_cptp_check(&superop)?;
        trace_dev = trace_dev.max(tdev);
        choi_dev = choi_dev.max((-min_eig).max(0.0));
    }
    out.push(ExperimentReport::equality("map_trace_preservation_random", trace_dev, opts.tol_equality));
    out.push(ExperimentReport::equality("map_choi_psd_random", choi_dev, 1e-9));

    // transpose map: the non-CP negative control must be flagged
    let mut transpose = CMatrix::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            transpose[(j * 2 + i, i * 2 + j)] = cr(1.0);
        }
    }
    let (min_eig, _) = choi_cptp_check(&transpose)?;
    out.push(ExperimentReport::violation("map_transpose_non_cp_control", -min_eig, 0.5));

    // shipped dephasing witness: first-order convergence of both path sums
    let (comp, rho_b) = composite::witness::dephasing();
    let rows = composite::map_convergence(&comp, &rho_b, 1.0, &opts.convergence_grids)?;
    let mut ratio_dev: f64 = 0.0;
    for row in rows.iter().skip(1) {
        if let Some(r) = row.ratio_vs_previous {
            ratio_dev = ratio_dev.max((r - 0.5).abs());
        }
    }
    out.push(ExperimentReport::equality("map_convergence_ratio_dephasing", ratio_dev, 0.2));

    let init_a =
        InitializationEvent::pure(comp.sys_a(), 0.0, &crate::system::standard::qubit_x(), 1.0)?;
    let init_b = InitializationEvent::from_density_matrix(comp.sys_b(), 0.0, &rho_b)?;
    let schedule = MeasurementSchedule::new(
        0.0,
        vec![
            (0.5, crate::system::standard::qubit_x()),
            (1.0, crate::system::standard::qubit_z()),
        ],
    )?;
    let rows = composite::surrogate_convergence(
        &comp,
        &init_a,
        &init_b,
        &schedule,
        &[1.0, 1.0],
        &[-1.0, 1.0],
        &opts.convergence_grids,
    )?;
    let mut ratio_dev: f64 = 0.0;
    for row in rows.iter().skip(1) {
        if let Some(r) = row.ratio_vs_previous {
            ratio_dev = ratio_dev.max((r - 0.5).abs());
        }
    }
    out.push(ExperimentReport::equality("surrogate_convergence_ratio_dephasing", ratio_dev, 0.2));

    // commuting drive: exact at the coarsest aligned grid
    let sys_a = QuantumSystem::new(numeric::qubit::sigma_z().scale(0.5))?;
    let sys_b = QuantumSystem::new(numeric::qubit::sigma_z().scale(0.9))?;
    let commuting = compose(&sys_a, &sys_b, 0.8, &numeric::qubit::sigma_z(), &numeric::qubit::sigma_z())?;
    let init_a = InitializationEvent::pure(&sys_a, 0.0, &crate::system::standard::qubit_x(), 1.0)?;
    let init_b = InitializationEvent::pure(&sys_b, 0.0, &crate::system::standard::qubit_x(), 1.0)?;
    let schedule = MeasurementSchedule::new(
        0.0,
        vec![
            (0.5, crate::system::standard::qubit_x()),
            (1.0, crate::system::standard::qubit_x()),
        ],
    )?;
    let mut dev: f64 = 0.0;
    for f in [[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]] {
        let exact =
            composite::reduced_biprob_exact(&commuting, &init_a, &init_b, &schedule, &f, &f)?;
        let approx =
            composite::surrogate_biprob(&commuting, &init_a, &init_b, &schedule, &f, &f, 2)?;
        dev = dev.max((exact - approx).norm());
    }
    out.push(ExperimentReport::equality("surrogate_commuting_drive_exact", dev, opts.tol_equality));

    Ok(out)
}

fn master_entries(opts: &SuiteOptions) -> Result<Vec<ExperimentReport>> {
    let mut out = Vec::new();
    let mut rng = cell_rng(opts.seed, 4001);

    // decomposition identity on random instances
    let mut dev: f64 = 0.0;
    for _ in 0..3 {
        use rand::Rng;
        let d = rng.gen_range(2..=3);
        let basis = master::generator_basis(d)?;
        let inst = random_instance(&mut rng, d, 2);
        for _ in 0..4 {
            let f_plus: Vec<f64> = (0..2)
                .map(|j| {
                    let obs = inst.schedule.observable(j);
                    obs.outcomes()[rng.gen_range(0..obs.len())]
                })
                .collect();
            let mut f_minus = f_plus.clone();
            f_minus[0] = {
                let obs = inst.schedule.observable(0);
                obs.outcomes()[rng.gen_range(0..obs.len())]
            };
            dev = dev.max(master::decomposition_check(
                &inst.sys,
                &basis,
                &inst.init,
                &inst.schedule,
                &f_plus,
                &f_minus,
            )?);
        }
    }
    out.push(ExperimentReport::equality("master_decomposition_random", dev, opts.tol_equality));

    // multi-time correlation: moments form equals the direct trace
    let mut dev: f64 = 0.0;
    for _ in 0..3 {
        use rand::Rng;
        let d = rng.gen_range(2..=3);
        let n = rng.gen_range(1..=3usize);
        let basis = master::generator_basis(d)?;
        let sys = rng::random_system(&mut rng, d);
        let init = rng::random_init(&mut rng, &sys, 0.0);
        let times = rng::random_times(&mut rng, 0.0, n);
        let observables: Vec<CMatrix> =
            (0..n).map(|_| rng::random_hermitian(&mut rng, d)).collect();
        for mask in 0..3usize.pow(n as u32) {
            let mut i_plus = Vec::new();
            let mut i_minus = Vec::new();
            let mut m = mask;
            for pos in 1..=n {
                match m % 3 {
                    0 => i_plus.push(pos),
                    1 => i_minus.push(pos),
                    _ => {
                        i_plus.push(pos);
                        i_minus.push(pos);
                    }
                }
                m /= 3;
            }
            let direct =
                master::multitime_correlation(&sys, &init, &times, &observables, &i_plus, &i_minus)?;
            let moments = master::multitime_correlation_moments(
                &sys,
                &basis,
                &init,
                &times,
                &observables,
                &i_plus,
                &i_minus,
            )?;
            dev = dev.max((direct - moments).norm());
        }
    }
    out.push(ExperimentReport::equality("master_mtc_moments_form", dev, opts.tol_equality));

    // coordinate round trip, including degenerate spectra
    let mut dev: f64 = 0.0;
    for d in 2..=4 {
        let basis = master::generator_basis(d)?;
        let sys = QuantumSystem::new(CMatrix::zeros(d, d))?;
        for _ in 0..3 {
            let m = rng::random_hermitian(&mut rng, d);
            let obs = crate::system::observable_from_matrix(&sys, "F", &m)?;
            let co = master::observable_to_coords(&basis, &obs)?;
            dev = dev.max(master::roundtrip_residual(&basis, &obs, &co)?);
            let m = rng::random_degenerate_hermitian(&mut rng, d);
            let obs = crate::system::observable_from_matrix(&sys, "D", &m)?;
            let co = master::observable_to_coords(&basis, &obs)?;
            dev = dev.max(master::roundtrip_residual(&basis, &obs, &co)?);
        }
    }
    out.push(ExperimentReport::equality("master_coords_roundtrip", dev, 1e-9));

    // classical limit: commuting instances stay classical
    let mut offdiag_dev: f64 = 0.0;
    let mut consistency_dev: f64 = 0.0;
    for _ in 0..3 {
        use rand::Rng;
        let d = rng.gen_range(2..=3);
        let obs = rng::random_fine_observable(&mut rng, d, "K");
        // Hamiltonian diagonal in the same eigenbasis
        let mut h = CMatrix::zeros(d, d);
        for i in 0..d {
            h += obs.projector(i).scale(rng.gen_range(-1.0..1.0));
        }
        let sys = QuantumSystem::new(h)?;
        let weights: Vec<(&Observable, f64, f64)> =
            obs.outcomes().iter().map(|&f| (&obs, f, 1.0 / d as f64)).collect();
        let init = InitializationEvent::from_weights(&sys, 0.0, &weights)?;
        let times = rng::random_times(&mut rng, 0.0, 3);
        let (offdiag, consistency) = master::classical_limit_witness(&sys, &init, &obs, &times)?;
        offdiag_dev = offdiag_dev.max(offdiag);
        consistency_dev = consistency_dev.max(consistency);
    }
    out.push(ExperimentReport::equality("classical_limit_offdiagonal_mass", offdiag_dev, 1e-12));
    out.push(ExperimentReport::equality("classical_limit_consistency", consistency_dev, 1e-12));

    Ok(out)
}

/// Evaluate one configured experiment; returns its reports plus any CSV
/// artifacts (convergence tables).
pub fn run_spec_experiment(
    cfg: &LoadedConfig,
    spec: &ExperimentSpec,
    n_override: Option<usize>,
    grid_override: Option<usize>,
) -> Result<(Vec<ExperimentReport>, Vec<Artifact>)> {
    let need_schedule = |key: &Option<String>| -> Result<&MeasurementSchedule> {
        let name = key.as_ref().ok_or_else(|| Error::SchemaError {
            path: format!("experiments.{}", spec.name),
            message: "missing schedule reference".into(),
        })?;
        Ok(&cfg.schedules[name])
    };
    let need_observable = |key: &Option<String>| -> Result<&Observable> {
        let name = key.as_ref().ok_or_else(|| Error::SchemaError {
            path: format!("experiments.{}", spec.name),
            message: "missing observable reference".into(),
        })?;
        Ok(&cfg.observables[name])
    };
    let grids = |default: &[usize]| -> Vec<usize> {
        if let Some(g) = grid_override {
            return vec![g, 2 * g, 4 * g, 8 * g];
        }
        spec.grids.clone().unwrap_or_else(|| default.to_vec())
    };
    let mut artifacts = Vec::new();
    let reports = match spec.kind.as_str() {
        "causality" => {
            let schedule = need_schedule(&spec.schedule)?;
            vec![phenomenology::causality_experiment(&cfg.system, &cfg.init, schedule)?
                .renamed(&spec.name)]
        }
        "inconsistency" => {
            let schedule = need_schedule(&spec.schedule)?;
            let j = spec.position.unwrap_or(1);
            let threshold = spec.threshold.unwrap_or(phenomenology::VIOLATION_THRESHOLD);
            vec![phenomenology::inconsistency_witness_with_threshold(
                &cfg.system,
                &cfg.init,
                schedule,
                j,
                threshold,
            )?
            .renamed(&spec.name)]
        }
        "markov" => {
            let schedule = need_schedule(&spec.schedule)?;
            vec![phenomenology::markov_experiment(&cfg.system, &cfg.init, schedule)?
                .renamed(&spec.name)]
        }
        "uncertainty" => {
            let k = need_observable(&spec.observable)?;
            let l = need_observable(&spec.observable_b)?;
            let t = spec.time.unwrap_or(0.0);
            let c = phenomenology::uncertainty_correlation(&cfg.system, k, l, t)?;
            let mut dev: f64 = 0.0;
            for row in &c {
                dev = dev.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            for j in 0..c[0].len() {
                dev = dev.max((c.iter().map(|r| r[j]).sum::<f64>() - 1.0).abs());
            }
            vec![ExperimentReport::equality(&spec.name, dev, cfg.tol_equality)]
        }
        "zeno" => {
            let k = need_observable(&spec.observable)?;
            let k0 = spec.outcome.unwrap_or(k.outcomes()[0]);
            let total_t = spec.total_time.unwrap_or(1.0);
            let n = n_override.or(spec.n).unwrap_or(100);
            let value = phenomenology::zeno_experiment(&cfg.system, k, k0, total_t, n)?;
            let report = match spec.expected {
                Some(expected) => ExperimentReport::equality(
                    &spec.name,
                    (value - expected).abs(),
                    spec.threshold.unwrap_or(1e-4),
                ),
                None => ExperimentReport::equality(&spec.name, 0.0, cfg.tol_equality),
            };
            vec![report.with_value(value)]
        }
        "coarse_placement" => {
            let schedule = need_schedule(&spec.schedule)?;
            let j = spec.position.unwrap_or(1);
            let res_name = spec.resolution.as_ref().ok_or_else(|| Error::SchemaError {
                path: format!("experiments.{}", spec.name),
                message: "missing resolution reference".into(),
            })?;
            let res = &cfg.resolutions[res_name];
            let (terminal, interior) = phenomenology::coarse_grain_placement_experiment(
                &cfg.system,
                &cfg.init,
                schedule,
                j,
                res,
            )?;
            vec![
                ExperimentReport::equality(format!("{}_terminal", spec.name), terminal, 1e-12),
                ExperimentReport::violation(
                    format!("{}_interior", spec.name),
                    interior,
                    spec.threshold.unwrap_or(phenomenology::VIOLATION_THRESHOLD),
                ),
            ]
        }
        "statics" => {
            let k = need_observable(&spec.observable)?;
            let t = spec.time.unwrap_or(1.0);
            vec![phenomenology::statics_equivalence(&cfg.system, &cfg.init, k, t)?
                .renamed(&spec.name)]
        }
        "surrogate_convergence" => {
            let (comp, rho_b) = cfg.composite.as_ref().ok_or_else(|| Error::SchemaError {
                path: format!("experiments.{}", spec.name),
                message: "needs a composite block".into(),
            })?;
            let schedule = need_schedule(&spec.schedule)?;
            let f_plus = spec.f_plus.clone().ok_or_else(|| Error::SchemaError {
                path: format!("experiments.{}.f_plus", spec.name),
                message: "missing".into(),
            })?;
            let f_minus = spec.f_minus.clone().unwrap_or_else(|| f_plus.clone());
            let init_b = InitializationEvent::from_density_matrix(comp.sys_b(), cfg.init.time(), rho_b)?;
            let rows = composite::surrogate_convergence(
                comp,
                &cfg.init,
                &init_b,
                schedule,
                &f_plus,
                &f_minus,
                &grids(&[8, 16, 32, 64]),
            )?;
            artifacts.push(Artifact {
                filename: format!("convergence_{}.csv", spec.name),
                contents: convergence_csv(&rows),
            });
            let mut ratio_dev: f64 = 0.0;
            for row in rows.iter().skip(1) {
                if let Some(r) = row.ratio_vs_previous {
                    ratio_dev = ratio_dev.max((r - 0.5).abs());
                }
            }
            vec![ExperimentReport::equality(&spec.name, ratio_dev, spec.threshold.unwrap_or(0.2))]
        }
        "map_convergence" => {
            let (comp, rho_b) = cfg.composite.as_ref().ok_or_else(|| Error::SchemaError {
                path: format!("experiments.{}", spec.name),
                message: "needs a composite block".into(),
            })?;
            let t = spec.time.unwrap_or(1.0);
            let rows = composite::map_convergence(comp, rho_b, t, &grids(&[8, 16, 32, 64]))?;
            artifacts.push(Artifact {
                filename: format!("convergence_{}.csv", spec.name),
                contents: convergence_csv(&rows),
            });
            let mut ratio_dev: f64 = 0.0;
            for row in rows.iter().skip(1) {
                if let Some(r) = row.ratio_vs_previous {
                    ratio_dev = ratio_dev.max((r - 0.5).abs());
                }
            }
            vec![ExperimentReport::equality(&spec.name, ratio_dev, spec.threshold.unwrap_or(0.2))]
        }
        other => return Err(Error::UnknownExperiment(other.to_string())),
    };
    Ok((reports, artifacts))
}

/// A file emitted by a run.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub filename: String,
    pub contents: String,
}

/// Run the full invariant suite plus any configured experiments.
pub fn run_check(cfg: Option<&LoadedConfig>, opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut results = Vec::new();
    results.extend(q_property_entries(opts)?);
    results.push(q3_entry(opts)?);
    results.extend(phenomenology_entries(opts)?);
    results.extend(composite_entries(opts)?);
    results.extend(master_entries(opts)?);
    if let Some(cfg) = cfg {
        for spec in &cfg.experiments {
            let (reports, _) = run_spec_experiment(cfg, spec, None, None)?;
            results.extend(reports);
        }
    }
    Ok(SuiteReport::new(opts.seed, results))
}

/// Run one named experiment from a configuration.
pub fn run_experiment(
    cfg: &LoadedConfig,
    name: &str,
    n_override: Option<usize>,
    grid_override: Option<usize>,
) -> Result<(Vec<ExperimentReport>, Vec<Artifact>)> {
    let spec = cfg
        .experiments
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownExperiment(name.to_string()))?;
    run_spec_experiment(cfg, spec, n_override, grid_override)
}

/// Export every configured schedule's bi-probability table as CSV.
pub fn run_table(cfg: &LoadedConfig) -> Result<Vec<Artifact>> {
    let mut artifacts = Vec::new();
    for name in &cfg.schedule_order {
        let schedule = &cfg.schedules[name];
        let table = biprob::full_table(&cfg.system, &cfg.init, schedule)?;
        artifacts.push(Artifact {
            filename: format!("table_{name}.csv"),
            contents: table.to_csv(),
        });
    }
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        let opts = SuiteOptions {
            dims: vec![2, 3],
            ns: vec![1, 2],
            instances: 2,
            q3_instances: 2,
            cptp_instances: 3,
            convergence_grids: vec![8, 16],
            ..SuiteOptions::default()
        };
        let report = run_check(None, &opts).unwrap();
        for r in &report.results {
            assert!(r.passed, "{} failed: deviation {:e} vs {:e}", r.name, r.deviation, r.threshold);
        }
        assert!(report.passed);
        // sorted by name
        let names: Vec<_> = report.results.iter().map(|r| r.name.clone()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn suite_is_deterministic() {
        let opts = SuiteOptions {
            dims: vec![2],
            ns: vec![2],
            instances: 2,
            q3_instances: 1,
            cptp_instances: 2,
            convergence_grids: vec![8, 16],
            ..SuiteOptions::default()
        };
        let a = run_check(None, &opts).unwrap();
        let b = run_check(None, &opts).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }
}
