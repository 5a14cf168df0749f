//! Phenomenological observations as numerically testable experiments.
//!
//! Each experiment returns an [`ExperimentReport`] with a deviation and a
//! threshold. Equality-type experiments pass when the deviation stays at or
//! below the threshold; violation-type witnesses pass when the deviation
//! exceeds it (the point being that a classical identity must fail).

use serde::Serialize;

use crate::biprob;
use crate::error::{Error, Result};
use crate::numeric;
use crate::system::{
    coarse_grain, heisenberg_projector, synthetic_observable, InitializationEvent,
    MeasurementSchedule, Observable, QuantumSystem, Resolution,
};

/// Default equality threshold for identities that hold algebraically.
pub const EQUALITY_TOL: f64 = 1e-10;
/// Default threshold a designed violation witness must exceed.
pub const VIOLATION_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Equality,
    Violation,
}

/// One table row of witness data attached to a report.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessEntry {
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub deviation: f64,
    pub threshold: f64,
    #[serde(rename = "type")]
    pub kind: ExperimentKind,
    pub passed: bool,
    /// measured quantity for value-carrying experiments (e.g. the Zeno
    /// survival probability)
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<WitnessEntry>>,
}

impl ExperimentReport {
    pub fn equality(name: impl Into<String>, deviation: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            deviation,
            threshold,
            kind: ExperimentKind::Equality,
            passed: deviation <= threshold,
            value: None,
            witness: None,
        }
    }

    pub fn violation(name: impl Into<String>, deviation: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            deviation,
            threshold,
            kind: ExperimentKind::Violation,
            passed: deviation >= threshold,
            value: None,
            witness: None,
        }
    }

    pub fn with_value(mut self, value: f64) -> Self {
        self.value = Some(value);
        self
    }

    pub fn with_witness(mut self, witness: Vec<WitnessEntry>) -> Self {
        self.witness = Some(witness);
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Probabilities for every outcome sequence of the schedule, keyed in
/// schedule order. Enumeration at desk scale.
fn all_probabilities(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut seqs: Vec<Vec<f64>> = vec![vec![]];
    for (_, obs) in schedule.entries() {
        let mut next = Vec::with_capacity(seqs.len() * obs.len());
        for s in &seqs {
            for &f in obs.outcomes() {
                let mut s2 = s.clone();
                s2.push(f);
                next.push(s2);
            }
        }
        seqs = next;
    }
    seqs.into_iter()
        .map(|f| {
            let p = biprob::probability(sys, init, schedule, &f)?;
            Ok((f, p))
        })
        .collect()
}

/// Deviation of Σ_{f_j} P(f⃗) from the distribution without entry j
/// (0-based schedule position).
fn marginalization_deviation(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    j: usize,
) -> Result<f64> {
    use std::collections::BTreeMap;
    let full = all_probabilities(sys, init, schedule)?;
    let reduced_schedule = schedule.without_entry(j);
    let reduced = all_probabilities(sys, init, &reduced_schedule)?;
    let mut marginal: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    for (f, p) in &full {
        let mut key = f.clone();
        key.remove(j);
        let bits: Vec<u64> = key.iter().map(|v| v.to_bits()).collect();
        *marginal.entry(bits).or_default() += p;
    }
    let mut dev: f64 = 0.0;
    for (f, p) in &reduced {
        let bits: Vec<u64> = f.iter().map(|v| v.to_bits()).collect();
        let acc = marginal.remove(&bits).unwrap_or_default();
        dev = dev.max((acc - p).abs());
    }
    for (_, acc) in marginal {
        dev = dev.max(acc.abs());
    }
    Ok(dev)
}

/// Causality: marginalizing the latest entry always reproduces the shorter
/// distribution. Equality-type at 1e-10.
pub fn causality_experiment(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
) -> Result<ExperimentReport> {
    let n = schedule.len();
    if n < 2 {
        return Err(Error::PositionOutOfRange { position: n, min: 2, max: usize::MAX });
    }
    let dev = marginalization_deviation(sys, init, schedule, n - 1)?;
    Ok(ExperimentReport::equality("causality", dev, EQUALITY_TOL))
}

/// Inconsistency: marginalizing an interior entry generally fails the
/// classical consistency condition. Violation-type; the witness deviation
/// must exceed the threshold.
pub fn inconsistency_witness(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    j: usize,
) -> Result<ExperimentReport> {
    inconsistency_witness_with_threshold(sys, init, schedule, j, VIOLATION_THRESHOLD)
}

pub fn inconsistency_witness_with_threshold(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    j: usize,
    threshold: f64,
) -> Result<ExperimentReport> {
    let n = schedule.len();
    if j < 1 || j >= n {
        return Err(Error::PositionOutOfRange { position: j, min: 1, max: n.saturating_sub(1) });
    }
    let dev = marginalization_deviation(sys, init, schedule, j - 1)?;
    Ok(ExperimentReport::violation("inconsistency", dev, threshold))
}

/// Markovianity for perfectly fine-grained sequences: the joint probability
/// factorizes into pairwise transition probabilities times the first-step
/// distribution.
pub fn markov_experiment(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
) -> Result<ExperimentReport> {
    let n = schedule.len();
    for (_, obs) in schedule.entries() {
        if !obs.is_fine_grained() {
            return Err(Error::NotFineGrained(obs.name().into()));
        }
    }
    // transition matrices T_j[k_j, k_{j-1}] = tr[P̂_{t_j}(k_j) P̂_{t_{j-1}}(k_{j-1})]
    let mut transitions: Vec<Vec<Vec<f64>>> = Vec::new();
    for j in 1..n {
        let (t_cur, obs_cur) = &schedule.entries()[j];
        let (t_prev, obs_prev) = &schedule.entries()[j - 1];
        let mut t_mat = vec![vec![0.0; obs_prev.len()]; obs_cur.len()];
        for (a, &fa) in obs_cur.outcomes().iter().enumerate() {
            let pa = heisenberg_projector(sys, obs_cur, fa, *t_cur)?;
            for (b, &fb) in obs_prev.outcomes().iter().enumerate() {
                let pb = heisenberg_projector(sys, obs_prev, fb, *t_prev)?;
                t_mat[a][b] = numeric::trace(&(&pa * &pb)).re;
            }
        }
        transitions.push(t_mat);
    }
    let first = schedule.truncated(1);
    let mut dev: f64 = 0.0;
    for (f, p_joint) in all_probabilities(sys, init, schedule)? {
        let indices: Vec<usize> = f
            .iter()
            .enumerate()
            .map(|(j, &v)| schedule.observable(j).outcome_index(v))
            .collect::<Result<_>>()?;
        let mut product = biprob::probability(sys, init, &first, &f[..1])?;
        for j in 1..n {
            product *= transitions[j - 1][indices[j]][indices[j - 1]];
        }
        dev = dev.max((p_joint - product).abs());
    }
    Ok(ExperimentReport::equality("markov", dev, EQUALITY_TOL))
}

/// Rapid-succession correlation C_{k,ℓ} = |⟨Ψ^K_t(k)|Ψ^L_t(ℓ)⟩|² between
/// two fine-grained devices; doubly stochastic and independent of t.
pub fn uncertainty_correlation(
    sys: &QuantumSystem,
    k_obs: &Observable,
    l_obs: &Observable,
    t: f64,
) -> Result<Vec<Vec<f64>>> {
    for obs in [k_obs, l_obs] {
        if !obs.is_fine_grained() {
            return Err(Error::NotFineGrained(obs.name().into()));
        }
    }
    let mut c = vec![vec![0.0; l_obs.len()]; k_obs.len()];
    for (i, &fk) in k_obs.outcomes().iter().enumerate() {
        let pk = heisenberg_projector(sys, k_obs, fk, t)?;
        for (j, &fl) in l_obs.outcomes().iter().enumerate() {
            let pl = heisenberg_projector(sys, l_obs, fl, t)?;
            c[i][j] = numeric::trace(&(&pk * &pl)).re;
        }
    }
    Ok(c)
}

/// Survival probability after n equally spaced measurements of k₀ over
/// [0, total_t]: ∏_j P^{K|K}(k₀|k₀) between consecutive grid points.
/// Approaches 1 as n grows (quantum Zeno effect).
pub fn zeno_experiment(
    sys: &QuantumSystem,
    k_obs: &Observable,
    k0: f64,
    total_t: f64,
    n: usize,
) -> Result<f64> {
    if !k_obs.is_fine_grained() {
        return Err(Error::NotFineGrained(k_obs.name().into()));
    }
    if n == 0 {
        return Err(Error::BadDimension("zeno needs n >= 1".into()));
    }
    let dt = total_t / n as f64;
    let mut product = 1.0;
    for j in 0..n {
        let s = j as f64 * dt;
        let p_prev = heisenberg_projector(sys, k_obs, k0, s)?;
        let p_next = heisenberg_projector(sys, k_obs, k0, s + dt)?;
        product *= numeric::trace(&(&p_next * &p_prev)).re;
    }
    Ok(product)
}

/// Coarse-grained device placement. The same blur that is harmless at the
/// end of a sequence (terminal deviation ≈ 0) breaks the classical cell-sum
/// picture when deployed mid-sequence.
///
/// Returns (terminal_dev, interior_dev): the terminal check truncates the
/// schedule at position j so the blurred device measures last; the interior
/// check keeps the full schedule (zero when j is already terminal).
pub fn coarse_grain_placement_experiment(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    j: usize,
    res: &Resolution,
) -> Result<(f64, f64)> {
    let n = schedule.len();
    if j < 1 || j > n {
        return Err(Error::PositionOutOfRange { position: j, min: 1, max: n });
    }
    let coarse_obs = coarse_grain(schedule.observable(j - 1), res)?;

    let placement_deviation = |sched: &MeasurementSchedule| -> Result<f64> {
        let coarse_schedule = sched.with_observable(j - 1, coarse_obs.clone());
        let fine = all_probabilities(sys, init, sched)?;
        let coarse = all_probabilities(sys, init, &coarse_schedule)?;
        let mut dev: f64 = 0.0;
        for (fc, pc) in &coarse {
            let cell_index = coarse_obs.outcome_index(fc[j - 1])?;
            let members = &res.cells()[cell_index].1;
            let mut cell_sum = 0.0;
            for (ff, pf) in &fine {
                let fine_index = schedule.observable(j - 1).outcome_index(ff[j - 1])?;
                if !members.contains(&fine_index) {
                    continue;
                }
                let matches = ff
                    .iter()
                    .zip(fc.iter())
                    .enumerate()
                    .all(|(pos, (a, b))| pos == j - 1 || a == b);
                if matches {
                    cell_sum += pf;
                }
            }
            dev = dev.max((cell_sum - pc).abs());
        }
        Ok(dev)
    };

    let terminal_dev = placement_deviation(&schedule.truncated(j))?;
    let interior_dev = if j < n { placement_deviation(schedule)? } else { 0.0 };
    Ok((terminal_dev, interior_dev))
}

/// Quantum statics: the probability of reading K at time t equals the
/// immediate readout of the synthetic observable K_t whose reference-time
/// projectors are P̂^K_t(k). The Δt → 0⁺ limit is realized exactly through
/// same-time overlaps.
pub fn statics_equivalence(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    k_obs: &Observable,
    t: f64,
) -> Result<ExperimentReport> {
    if t <= init.time() {
        return Err(Error::InvalidState(format!(
            "measurement time {t} must exceed initialization time {}",
            init.time()
        )));
    }
    let synthetic = synthetic_observable(sys, k_obs, t)?;
    let schedule = MeasurementSchedule::new(init.time(), vec![(t, k_obs.clone())])?;
    let mut dev: f64 = 0.0;
    for &f in k_obs.outcomes() {
        let direct = biprob::probability(sys, init, &schedule, &[f])?;
        let frozen = numeric::trace(
            &(heisenberg_projector(sys, &synthetic, f, init.time())? * init.metric()),
        )
        .re;
        dev = dev.max((direct - frozen).abs());
    }
    Ok(ExperimentReport::equality("statics_equivalence", dev, 1e-12))
}

/// The shipped two-slit style witness: free qubit, ρ̂ = |0⟩⟨0|, X at t = 1
/// then Z at t = 2, with the X device fully blurred.
pub mod witness {
    use super::*;
    use crate::system::standard::{free_qubit, qubit_x, qubit_z};

    pub fn two_slit() -> (QuantumSystem, InitializationEvent, MeasurementSchedule, Resolution) {
        let sys = free_qubit();
        let z = qubit_z();
        let x = qubit_x();
        let init = InitializationEvent::pure(&sys, 0.0, &z, 1.0).expect("valid init");
        let schedule = MeasurementSchedule::new(0.0, vec![(1.0, x.clone()), (2.0, qubit_z())])
            .expect("valid schedule");
        let blur = Resolution::new(&x, vec![(0.0, vec![1.0, -1.0])]).expect("valid blur");
        (sys, init, schedule, blur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::standard::{free_qubit, qubit_x, qubit_z, rabi_qubit};
    use approx::assert_abs_diff_eq;

    #[test]
    fn causality_marginal_always_works() {
        let (sys, init, schedule, _) = witness::two_slit();
        let report = causality_experiment(&sys, &init, &schedule).unwrap();
        assert!(report.passed, "deviation {}", report.deviation);
        assert!(report.deviation <= 1e-12);
    }

    #[test]
    fn inconsistency_qubit_witness_is_one_half() {
        // Σ_x P(z, x) = 1/2 per z, while P(z) = δ_{z,+1}: deviation 1/2
        let (sys, init, schedule, _) = witness::two_slit();
        let report = inconsistency_witness(&sys, &init, &schedule, 1).unwrap();
        assert!(report.passed);
        assert_abs_diff_eq!(report.deviation, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn inconsistency_vanishes_for_commuting_devices() {
        let sys = free_qubit();
        let z = qubit_z();
        let init = InitializationEvent::pure(&sys, 0.0, &z, 1.0).unwrap();
        let schedule =
            MeasurementSchedule::new(0.0, vec![(1.0, z.clone()), (2.0, z.clone())]).unwrap();
        let report = inconsistency_witness(&sys, &init, &schedule, 1).unwrap();
        assert!(report.deviation <= 1e-12);
        assert!(!report.passed);
    }

    #[test]
    fn markov_chain_rule_qubit() {
        let sys = rabi_qubit();
        let z = qubit_z();
        let init = InitializationEvent::pure(&sys, 0.0, &z, 1.0).unwrap();
        let entries: Vec<_> = [0.3, 0.7, 1.1].iter().map(|&t| (t, z.clone())).collect();
        let schedule = MeasurementSchedule::new(0.0, entries).unwrap();
        let report = markov_experiment(&sys, &init, &schedule).unwrap();
        assert!(report.passed, "deviation {}", report.deviation);
    }

    #[test]
    fn uncertainty_correlation_z_x() {
        let sys = free_qubit();
        let c = uncertainty_correlation(&sys, &qubit_z(), &qubit_x(), 0.0).unwrap();
        for row in &c {
            for &v in row {
                assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
            }
        }
        // equivalent devices give a permutation matrix
        let c_zz = uncertainty_correlation(&sys, &qubit_z(), &qubit_z(), 0.0).unwrap();
        assert_abs_diff_eq!(c_zz[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c_zz[0][1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn uncertainty_correlation_time_independent() {
        let sys = rabi_qubit();
        let c0 = uncertainty_correlation(&sys, &qubit_z(), &qubit_x(), 0.0).unwrap();
        let c5 = uncertainty_correlation(&sys, &qubit_z(), &qubit_x(), 5.3).unwrap();
        for (r0, r5) in c0.iter().zip(&c5) {
            for (a, b) in r0.iter().zip(r5) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
        // double stochasticity
        for row in &c0 {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        }
        for j in 0..2 {
            assert_abs_diff_eq!(c0[0][j] + c0[1][j], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn zeno_closed_form() {
        let sys = rabi_qubit();
        let z = qubit_z();
        let p1 = zeno_experiment(&sys, &z, 1.0, 1.0, 1).unwrap();
        assert_abs_diff_eq!(p1, 0.0, epsilon = 1e-12);
        let p2 = zeno_experiment(&sys, &z, 1.0, 1.0, 2).unwrap();
        assert_abs_diff_eq!(p2, 0.25, epsilon = 1e-12);
        let p100 = zeno_experiment(&sys, &z, 1.0, 1.0, 100).unwrap();
        let closed = (std::f64::consts::PI / 200.0).cos().powi(200);
        assert_abs_diff_eq!(p100, closed, epsilon = 1e-12);
        assert!((p100 - 0.97563).abs() <= 1e-4);
        // frozen dynamics survive exactly
        let free = free_qubit();
        assert_abs_diff_eq!(zeno_experiment(&free, &z, 1.0, 1.0, 7).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zeno_monotone_ladder_and_bound() {
        let sys = rabi_qubit();
        let z = qubit_z();
        let mut prev = -1.0;
        let mut n = 1usize;
        while n <= 256 {
            let p = zeno_experiment(&sys, &z, 1.0, 1.0, n).unwrap();
            assert!(p >= prev - 1e-12, "not monotone at n={n}");
            if n >= 50 {
                let bound = std::f64::consts::PI.powi(2) / (4.0 * n as f64) + 1e-3;
                assert!(1.0 - p <= bound, "short-time bound violated at n={n}");
            }
            prev = p;
            n *= 2;
        }
    }

    #[test]
    fn coarse_placement_witness() {
        let (sys, init, schedule, blur) = witness::two_slit();
        let (terminal, interior) =
            coarse_grain_placement_experiment(&sys, &init, &schedule, 1, &blur).unwrap();
        assert!(terminal <= 1e-12, "terminal {terminal:e}");
        assert_abs_diff_eq!(interior, 0.5, epsilon = 1e-12);
        // commuting instance: both placements are classical
        let z = qubit_z();
        let sched_c =
            MeasurementSchedule::new(0.0, vec![(1.0, z.clone()), (2.0, z.clone())]).unwrap();
        let blur_z = Resolution::new(&z, vec![(0.0, vec![1.0, -1.0])]).unwrap();
        let (t_c, i_c) =
            coarse_grain_placement_experiment(&sys, &init, &sched_c, 1, &blur_z).unwrap();
        assert!(t_c <= 1e-12 && i_c <= 1e-12);
    }

    #[test]
    fn statics_equivalence_exact() {
        let sys = rabi_qubit();
        let z = qubit_z();
        let init = InitializationEvent::pure(&sys, 0.0, &z, 1.0).unwrap();
        let report = statics_equivalence(&sys, &init, &z, 1.0).unwrap();
        assert!(report.passed, "deviation {}", report.deviation);
    }
}
