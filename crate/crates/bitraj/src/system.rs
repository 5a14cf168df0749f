//! Quantum systems and their measurement devices.
//!
//! A system is a finite-dimensional Hilbert space with a time-independent
//! Hamiltonian (ħ = 1, Hamiltonian entries are angular frequencies). An
//! observable is a complete family of orthogonal projectors at reference
//! time t = 0; its Heisenberg picture at time t is P̂_t(f) = U_t† P̂_0(f) U_t
//! with U_t = exp(−itĤ). Coarse-graining is a partition of the outcome set;
//! initialization events are convex combinations of rank-1 projectors.

use crate::error::{Error, Result};
use crate::numeric::{
    self, eig_hermitian, expm_hermitian_phase, max_norm, require_hermitian, CMatrix,
};

/// Tolerance for projector-family checks (orthogonality, completeness,
/// idempotence, rank counting).
pub const PROJECTOR_TOL: f64 = 1e-10;
/// PSD tolerance on metric eigenvalues.
pub const PSD_TOL: f64 = 1e-10;
/// Relative eigenvalue-clustering tolerance used when decomposing a
/// Hermitian matrix into an observable, scaled by (1 + spectral spread).
pub const DEGENERACY_RTOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct QuantumSystem {
    dim: usize,
    hamiltonian: CMatrix,
}

impl QuantumSystem {
    pub fn new(hamiltonian: CMatrix) -> Result<Self> {
        let h = require_hermitian(&hamiltonian)?;
        let dim = h.nrows();
        if dim < 2 {
            return Err(Error::BadDimension(format!(
                "system dimension must be at least 2, got {dim}"
            )));
        }
        Ok(Self { dim, hamiltonian: h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    /// Evolution operator U(t, t′) = exp(−i(t−t′)Ĥ).
    pub fn evolution(&self, t: f64, t_prime: f64) -> CMatrix {
        expm_hermitian_phase(&self.hamiltonian, t - t_prime)
            .expect("hamiltonian validated at construction")
    }
}

/// A measuring device: a finite outcome set with one projector per outcome,
/// forming a complete orthogonal family at reference time t = 0.
#[derive(Debug, Clone)]
pub struct Observable {
    name: String,
    outcomes: Vec<f64>,
    projectors: Vec<CMatrix>,
    dim: usize,
    fine_grained: bool,
}

impl Observable {
    pub fn new(name: impl Into<String>, outcomes: Vec<f64>, projectors: Vec<CMatrix>) -> Result<Self> {
        let name = name.into();
        if outcomes.is_empty() || outcomes.len() != projectors.len() {
            return Err(Error::DimensionMismatch(format!(
                "observable `{name}`: {} outcomes vs {} projectors",
                outcomes.len(),
                projectors.len()
            )));
        }
        if outcomes.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidState(format!(
                "observable `{name}` has a non-finite outcome value"
            )));
        }
        for (i, a) in outcomes.iter().enumerate() {
            if outcomes[..i].contains(a) {
                return Err(Error::InvalidState(format!(
                    "observable `{name}` has duplicate outcome {a}"
                )));
            }
        }
        let dim = projectors[0].nrows();
        let mut herm = Vec::with_capacity(projectors.len());
        for p in &projectors {
            if p.nrows() != dim || p.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "observable `{name}`: projector is {}x{}, expected {dim}x{dim}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            herm.push(require_hermitian(p)?);
        }
        // Orthogonality P(f)P(f') = δ P(f) and completeness Σ P(f) = 1.
        let mut sum = CMatrix::zeros(dim, dim);
        for (i, p) in herm.iter().enumerate() {
            sum += p;
            for (j, q) in herm.iter().enumerate() {
                let prod = p * q;
                let expected = if i == j { p.clone() } else { CMatrix::zeros(dim, dim) };
                let dev = max_norm(&(prod - expected));
                if dev > PROJECTOR_TOL {
                    return Err(Error::InvalidState(format!(
                        "observable `{name}`: projectors {i},{j} violate orthogonality/idempotence by {dev:.3e}"
                    )));
                }
            }
        }
        let completeness = max_norm(&(sum - numeric::identity(dim)));
        if completeness > PROJECTOR_TOL {
            return Err(Error::InvalidState(format!(
                "observable `{name}`: projector family incomplete by {completeness:.3e}"
            )));
        }
        let fine_grained = herm
            .iter()
            .all(|p| (numeric::trace(p).re - 1.0).abs() <= PROJECTOR_TOL);
        Ok(Self { name, outcomes, projectors: herm, dim, fine_grained })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_fine_grained(&self) -> bool {
        self.fine_grained
    }

    pub fn projector(&self, index: usize) -> &CMatrix {
        &self.projectors[index]
    }

    pub fn projectors(&self) -> &[CMatrix] {
        &self.projectors
    }

    pub fn outcome_index(&self, value: f64) -> Result<usize> {
        self.outcomes
            .iter()
            .position(|&f| f == value)
            .ok_or(Error::UnknownOutcome { observable: self.name.clone(), outcome: value })
    }

    /// Hilbert space representation Σ_f f·P̂(f) of the observable.
    pub fn hermitian_form(&self) -> CMatrix {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for (f, p) in self.outcomes.iter().zip(&self.projectors) {
            acc += p.scale(*f);
        }
        acc
    }
}

/// A partition of a parent observable's outcome set into labeled cells.
/// Cell labels are fresh coarse outcome values; no numeric post-processing
/// (e.g. averaging of members) is implied.
#[derive(Debug, Clone)]
pub struct Resolution {
    parent: Observable,
    /// (coarse label, member indices into the parent outcome list)
    cells: Vec<(f64, Vec<usize>)>,
}

impl Resolution {
    /// Cells given as (label, member outcome values).
    pub fn new(parent: &Observable, cells: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let mut indexed = Vec::with_capacity(cells.len());
        let mut seen = vec![false; parent.len()];
        for (label, members) in &cells {
            if members.is_empty() {
                return Err(Error::CellMismatch {
                    observable: parent.name().into(),
                    reason: format!("cell {label} is empty"),
                });
            }
            if indexed.iter().any(|(l, _): &(f64, Vec<usize>)| l == label) {
                return Err(Error::CellMismatch {
                    observable: parent.name().into(),
                    reason: format!("duplicate cell label {label}"),
                });
            }
            let mut idx = Vec::with_capacity(members.len());
            for m in members {
                let i = parent.outcome_index(*m)?;
                if seen[i] {
                    return Err(Error::CellMismatch {
                        observable: parent.name().into(),
                        reason: format!("outcome {m} appears in two cells"),
                    });
                }
                seen[i] = true;
                idx.push(i);
            }
            idx.sort_unstable();
            indexed.push((*label, idx));
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::CellMismatch {
                observable: parent.name().into(),
                reason: "cells do not cover the parent outcome set".into(),
            });
        }
        Ok(Self { parent: parent.clone(), cells: indexed })
    }

    /// The trivial resolution: every cell a singleton labeled by its member.
    pub fn trivial(parent: &Observable) -> Self {
        let cells = parent
            .outcomes()
            .iter()
            .enumerate()
            .map(|(i, &f)| (f, vec![i]))
            .collect();
        Self { parent: parent.clone(), cells }
    }

    pub fn parent(&self) -> &Observable {
        &self.parent
    }

    pub fn cells(&self) -> &[(f64, Vec<usize>)] {
        &self.cells
    }

    /// Map a parent outcome index to its (cell index, cell label).
    pub fn cell_of(&self, parent_index: usize) -> (usize, f64) {
        for (ci, (label, members)) in self.cells.iter().enumerate() {
            if members.contains(&parent_index) {
                return (ci, *label);
            }
        }
        unreachable!("resolution cells cover the parent outcome set")
    }
}

/// An initialization event at time t₀: a convex combination of rank-1
/// projectors of perfectly fine-grained devices, cached as the metric ρ̂.
#[derive(Debug, Clone)]
pub struct InitializationEvent {
    time: f64,
    weights: Vec<(String, f64, f64)>,
    metric: CMatrix,
}

impl InitializationEvent {
    /// Build ρ̂ = Σ p |Ψ(k)⟩⟨Ψ(k)| from (fine-grained observable, outcome,
    /// weight) triples, with the projectors taken at time t₀.
    pub fn from_weights(
        sys: &QuantumSystem,
        time: f64,
        weights: &[(&Observable, f64, f64)],
    ) -> Result<Self> {
        let mut sum = 0.0;
        let mut metric = CMatrix::zeros(sys.dim(), sys.dim());
        let mut stored = Vec::with_capacity(weights.len());
        for (obs, outcome, w) in weights {
            if !obs.is_fine_grained() {
                return Err(Error::NotFineGrained(obs.name().into()));
            }
            if obs.dim() != sys.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "observable `{}` has dim {}, system has {}",
                    obs.name(),
                    obs.dim(),
                    sys.dim()
                )));
            }
            if *w < 0.0 {
                return Err(Error::WeightSumError { sum: *w });
            }
            let proj = heisenberg_projector(sys, obs, *outcome, time)?;
            metric += proj.scale(*w);
            sum += w;
            stored.push((obs.name().to_string(), *outcome, *w));
        }
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::WeightSumError { sum });
        }
        Ok(Self { time, weights: stored, metric })
    }

    /// Pure initialization on a single fine-grained outcome.
    pub fn pure(sys: &QuantumSystem, time: f64, obs: &Observable, outcome: f64) -> Result<Self> {
        Self::from_weights(sys, time, &[(obs, outcome, 1.0)])
    }

    /// Accept any valid density matrix as a metric; its spectral
    /// decomposition supplies the rank-1 convex combination.
    pub fn from_density_matrix(sys: &QuantumSystem, time: f64, rho: &CMatrix) -> Result<Self> {
        let rho = require_hermitian(rho)?;
        if rho.nrows() != sys.dim() {
            return Err(Error::DimensionMismatch(format!(
                "density matrix is {}x{}, system dim {}",
                rho.nrows(),
                rho.ncols(),
                sys.dim()
            )));
        }
        let (values, _) = eig_hermitian(&rho)?;
        if values.iter().any(|&v| v < -PSD_TOL) {
            return Err(Error::InvalidState(format!(
                "density matrix has negative eigenvalue {:.3e}",
                values.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        let tr = numeric::trace(&rho).re;
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidState(format!("density matrix trace {tr} is not 1")));
        }
        let weights = values
            .iter()
            .enumerate()
            .map(|(k, &v)| (format!("spectral[{k}]"), k as f64, v.max(0.0)))
            .collect();
        Ok(Self { time, weights, metric: rho })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn metric(&self) -> &CMatrix {
        &self.metric
    }

    pub fn weights(&self) -> &[(String, f64, f64)] {
        &self.weights
    }
}

/// Strictly increasing deployment times paired with observables, following
/// an initialization at t₀ < t₁ < … < t_n.
#[derive(Debug, Clone)]
pub struct MeasurementSchedule {
    t0: f64,
    entries: Vec<(f64, Observable)>,
}

impl MeasurementSchedule {
    pub fn new(t0: f64, entries: Vec<(f64, Observable)>) -> Result<Self> {
        let mut prev = t0;
        let mut dim = None;
        for (t, obs) in &entries {
            if *t <= prev {
                return Err(Error::InvalidState(format!(
                    "schedule times must be strictly increasing: {t} after {prev}"
                )));
            }
            prev = *t;
            match dim {
                None => dim = Some(obs.dim()),
                Some(d) if d != obs.dim() => {
                    return Err(Error::DimensionMismatch(format!(
                        "observable `{}` has dim {}, schedule has {d}",
                        obs.name(),
                        obs.dim()
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { t0, entries })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, Observable)] {
        &self.entries
    }

    pub fn time(&self, j: usize) -> f64 {
        self.entries[j].0
    }

    pub fn observable(&self, j: usize) -> &Observable {
        &self.entries[j].1
    }

    /// Schedule with entry at 0-based position `j` removed.
    pub fn without_entry(&self, j: usize) -> Self {
        let mut entries = self.entries.clone();
        entries.remove(j);
        Self { t0: self.t0, entries }
    }

    /// Schedule truncated to the first `k` entries.
    pub fn truncated(&self, k: usize) -> Self {
        Self { t0: self.t0, entries: self.entries[..k].to_vec() }
    }

    /// Schedule with its observable at position `j` replaced.
    pub fn with_observable(&self, j: usize, obs: Observable) -> Self {
        let mut entries = self.entries.clone();
        entries[j].1 = obs;
        Self { t0: self.t0, entries }
    }

    /// All times (and t₀) shifted by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            t0: self.t0 + dt,
            entries: self.entries.iter().map(|(t, o)| (*t + dt, o.clone())).collect(),
        }
    }
}

/// Heisenberg-picture projector P̂^F_t(f) = U_t† P̂^F_0(f) U_t.
pub fn heisenberg_projector(
    sys: &QuantumSystem,
    obs: &Observable,
    outcome: f64,
    t: f64,
) -> Result<CMatrix> {
    let idx = obs.outcome_index(outcome)?;
    Ok(heisenberg_projector_by_index(sys, obs, idx, t))
}

pub(crate) fn heisenberg_projector_by_index(
    sys: &QuantumSystem,
    obs: &Observable,
    index: usize,
    t: f64,
) -> CMatrix {
    if t == 0.0 {
        return obs.projector(index).clone();
    }
    let u = sys.evolution(t, 0.0);
    u.adjoint() * obs.projector(index) * u
}

/// Coarse-grained device: π̂(f̄) = Σ_{f ∈ ω(f̄)} P̂(f), outcomes are the
/// cell labels of the resolution.
pub fn coarse_grain(obs: &Observable, res: &Resolution) -> Result<Observable> {
    if res.parent().name() != obs.name()
        || res.parent().outcomes() != obs.outcomes()
        || res.parent().dim() != obs.dim()
    {
        return Err(Error::CellMismatch {
            observable: obs.name().into(),
            reason: format!("resolution was built for `{}`", res.parent().name()),
        });
    }
    let mut outcomes = Vec::with_capacity(res.cells().len());
    let mut projectors = Vec::with_capacity(res.cells().len());
    for (label, members) in res.cells() {
        let mut p = CMatrix::zeros(obs.dim(), obs.dim());
        for &i in members {
            p += obs.projector(i);
        }
        outcomes.push(*label);
        projectors.push(p);
    }
    Observable::new(format!("{}_bar", obs.name()), outcomes, projectors)
}

/// Spectral decomposition of a Hermitian matrix into an observable:
/// outcomes are eigenvalue clusters (tolerance `DEGENERACY_RTOL` scaled by
/// 1 + spread), projectors are the spectral projectors.
pub fn observable_from_matrix(
    sys: &QuantumSystem,
    name: impl Into<String>,
    m: &CMatrix,
) -> Result<Observable> {
    if m.nrows() != sys.dim() || m.ncols() != sys.dim() {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}, system dim {}",
            m.nrows(),
            m.ncols(),
            sys.dim()
        )));
    }
    let (values, vectors) = eig_hermitian(m)?;
    let d = values.len();
    let spread = values[d - 1] - values[0];
    let tol = DEGENERACY_RTOL * (1.0 + spread.abs());
    let mut outcomes = Vec::new();
    let mut projectors = Vec::new();
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && values[end] - values[end - 1] <= tol {
            end += 1;
        }
        let cluster = &values[start..end];
        let rep = cluster.iter().sum::<f64>() / cluster.len() as f64;
        let mut p = CMatrix::zeros(d, d);
        for k in start..end {
            let v = vectors.column(k);
            p += &v * v.adjoint();
        }
        outcomes.push(rep);
        projectors.push(p);
        start = end;
    }
    Observable::new(name, outcomes, projectors)
}

/// The synthetic observable K_t whose t = 0 projectors are P̂^K_t(k);
/// it eliminates the passage of time in single-measurement contexts.
pub fn synthetic_observable(sys: &QuantumSystem, obs: &Observable, t: f64) -> Result<Observable> {
    let projectors = (0..obs.len())
        .map(|i| heisenberg_projector_by_index(sys, obs, i, t))
        .collect();
    Observable::new(format!("{}_at_{t}", obs.name()), obs.outcomes().to_vec(), projectors)
}

/// Survival variance v(k,t)² = ⟨Ĥ²⟩ − ⟨Ĥ⟩² in the state spanned by the
/// range of P̂^K_t(k); drives the short-time decay 1 − v²Δt².
pub fn survival_variance(
    sys: &QuantumSystem,
    obs: &Observable,
    outcome: f64,
    t: f64,
) -> Result<f64> {
    if !obs.is_fine_grained() {
        return Err(Error::NotFineGrained(obs.name().into()));
    }
    let p = heisenberg_projector(sys, obs, outcome, t)?;
    let h = sys.hamiltonian();
    let h2 = h * h;
    let mean = numeric::trace(&(h * &p)).re;
    let mean_sq = numeric::trace(&(&h2 * &p)).re;
    Ok((mean_sq - mean * mean).max(0.0))
}

/// Pre-built qubit observables used across tests and shipped witnesses.
pub mod standard {
    use super::*;

    pub fn qubit_z() -> Observable {
        Observable::new(
            "Z",
            vec![1.0, -1.0],
            vec![numeric::qubit::ket0_proj(), numeric::qubit::ket1_proj()],
        )
        .expect("valid projector family")
    }

    pub fn qubit_x() -> Observable {
        Observable::new(
            "X",
            vec![1.0, -1.0],
            vec![numeric::qubit::plus_proj(), numeric::qubit::minus_proj()],
        )
        .expect("valid projector family")
    }

    /// A free qubit (Ĥ = 0).
    pub fn free_qubit() -> QuantumSystem {
        QuantumSystem::new(CMatrix::zeros(2, 2)).expect("valid system")
    }

    /// Rabi qubit Ĥ = (π/2)σ_x.
    pub fn rabi_qubit() -> QuantumSystem {
        QuantumSystem::new(numeric::qubit::sigma_x().scale(std::f64::consts::FRAC_PI_2))
            .expect("valid system")
    }
}
