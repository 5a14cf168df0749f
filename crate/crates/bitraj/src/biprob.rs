//! Complex bi-probability distributions for measurement schedules.
//!
//! The central object is
//!
//!   Q(f⃗⁺, f⃗⁻) = tr[(∏_{j=n}^{1} P̂_{t_j}(f_j⁺)) ρ̂ (∏_{j=1}^{n} P̂_{t_j}(f_j⁻))],
//!
//! whose diagonal carries the measurable multi-time probabilities and whose
//! off-diagonal encodes interference. Tables store outcome-index keys in
//! latest-first order (f_n, …, f_1); pairs with f_n⁺ ≠ f_n⁻ vanish by
//! cyclicity and terminal orthogonality and are never stored. The Gram
//! operator of a table over the sequence basis is its Gudder metric: a PSD,
//! unit-trace operator whose kernel defines the quotient Hilbert space.
//!
//! Public functions take outcome values in schedule order (earliest first);
//! the latest-first convention is an internal storage and export detail.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::{self, cr, trace_of_product_adjoint, CMatrix, C64};
use crate::system::{
    coarse_grain, InitializationEvent, MeasurementSchedule, Observable, QuantumSystem, Resolution,
};

/// Default cap on stored table pairs.
pub const ENUMERATION_CAP: u128 = 1_000_000;
/// Probabilities at or below this floor cannot condition.
pub const CONDITIONAL_FLOOR: f64 = 1e-14;
/// PSD tolerance on the Gudder metric's minimum eigenvalue.
pub const PSD_TOL: f64 = 1e-10;
/// Eigenvalues above this count towards the metric rank.
pub const RANK_TOL: f64 = 1e-10;

/// Evolved projector families P̂_{t_j}(f) for every schedule entry.
pub(crate) struct ScheduleContext {
    pub projectors: Vec<Vec<CMatrix>>,
    pub dim: usize,
}

impl ScheduleContext {
    pub fn new(sys: &QuantumSystem, schedule: &MeasurementSchedule) -> Result<Self> {
        for (_, obs) in schedule.entries() {
            if obs.dim() != sys.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "observable `{}` has dim {}, system has {}",
                    obs.name(),
                    obs.dim(),
                    sys.dim()
                )));
            }
        }
        let projectors = schedule
            .entries()
            .iter()
            .map(|(t, obs)| {
                let u = sys.evolution(*t, 0.0);
                let udag = u.adjoint();
                (0..obs.len()).map(|i| &udag * obs.projector(i) * &u).collect()
            })
            .collect();
        Ok(Self { projectors, dim: sys.dim() })
    }

    /// L(f⃗) = P̂_{t_n}(f_n) ··· P̂_{t_1}(f_1), indices in schedule order.
    pub fn chain(&self, indices: &[usize]) -> CMatrix {
        let mut acc = numeric::identity(self.dim);
        for (j, &k) in indices.iter().enumerate().rev() {
            acc = acc * &self.projectors[j][k];
        }
        acc
    }
}

fn outcome_indices(schedule: &MeasurementSchedule, values: &[f64]) -> Result<Vec<usize>> {
    if values.len() != schedule.len() {
        return Err(Error::LengthMismatch { expected: schedule.len(), got: values.len() });
    }
    values
        .iter()
        .zip(schedule.entries())
        .map(|(v, (_, obs))| obs.outcome_index(*v))
        .collect()
}

/// The bi-probability Q(f⃗⁺, f⃗⁻). Sequences are outcome values in schedule
/// order. Pairs differing in the final outcome return exactly zero without
/// computation.
pub fn biprob(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    f_plus: &[f64],
    f_minus: &[f64],
) -> Result<C64> {
    let plus = outcome_indices(schedule, f_plus)?;
    let minus = outcome_indices(schedule, f_minus)?;
    if let (Some(a), Some(b)) = (plus.last(), minus.last()) {
        if a != b {
            return Ok(C64::default());
        }
    }
    let ctx = ScheduleContext::new(sys, schedule)?;
    let l_plus = ctx.chain(&plus);
    let l_minus = ctx.chain(&minus);
    Ok(trace_of_product_adjoint(&(l_plus * init.metric()), &l_minus))
}

/// The measurable probability P(f⃗) = Q(f⃗, f⃗).
pub fn probability(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    f: &[f64],
) -> Result<f64> {
    Ok(biprob(sys, init, schedule, f, f)?.re)
}

/// Conditional probability of `f_next` at `next` given the prefix record,
/// the ratio of joint to prefix probability (an n = 1 bi-probability in
/// disguise).
pub fn conditional(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    prefix: &MeasurementSchedule,
    f_prefix: &[f64],
    next: (f64, &Observable),
    f_next: f64,
) -> Result<f64> {
    let p_prefix = probability(sys, init, prefix, f_prefix)?;
    if p_prefix <= CONDITIONAL_FLOOR {
        return Err(Error::ZeroConditioningEvent {
            probability: p_prefix,
            floor: CONDITIONAL_FLOOR,
        });
    }
    let mut entries = prefix.entries().to_vec();
    entries.push((next.0, next.1.clone()));
    let extended = MeasurementSchedule::new(prefix.t0(), entries)?;
    let mut f = f_prefix.to_vec();
    f.push(f_next);
    let p_joint = probability(sys, init, &extended, &f)?;
    Ok(p_joint / p_prefix)
}

/// The non-normalized pseudo-metric
/// q̂(f⃗) = P̂(f_n)···P̂(f_1) ρ̂ P̂(f_1)···P̂(f_n); PSD with tr q̂ = P(f⃗).
pub fn pseudo_metric(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    f: &[f64],
) -> Result<CMatrix> {
    let indices = outcome_indices(schedule, f)?;
    let ctx = ScheduleContext::new(sys, schedule)?;
    let l = ctx.chain(&indices);
    Ok(&l * init.metric() * l.adjoint())
}

/// Ê(f⃗) = (∏P̂)†(∏P̂): the operator whose trace against ρ̂ gives P(f⃗).
/// For non-commuting sequences it is generally not a projector.
pub fn e_operator(
    sys: &QuantumSystem,
    schedule: &MeasurementSchedule,
    f: &[f64],
) -> Result<CMatrix> {
    let indices = outcome_indices(schedule, f)?;
    let ctx = ScheduleContext::new(sys, schedule)?;
    let l = ctx.chain(&indices);
    Ok(l.adjoint() * &l)
}

/// Sequence key in latest-first index order, as stored in tables.
pub type SeqKey = Vec<usize>;

/// A fully enumerated bi-probability table for one schedule. Keys are
/// (f⃗⁺, f⃗⁻) index tuples in latest-first order; causality-violating pairs
/// are structurally omitted.
#[derive(Debug, Clone)]
pub struct BiProbabilityTable {
    system: QuantumSystem,
    schedule: MeasurementSchedule,
    init: InitializationEvent,
    values: BTreeMap<(SeqKey, SeqKey), C64>,
}

/// Enumerate all index tuples (latest-first) for the schedule.
fn all_sequences(schedule: &MeasurementSchedule) -> Vec<SeqKey> {
    let sizes: Vec<usize> =
        schedule.entries().iter().rev().map(|(_, obs)| obs.len()).collect();
    let mut out = vec![Vec::new()];
    for s in sizes {
        let mut next = Vec::with_capacity(out.len() * s);
        for prefix in &out {
            for k in 0..s {
                let mut p = prefix.clone();
                p.push(k);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn stored_pair_count(schedule: &MeasurementSchedule) -> u128 {
    let n = schedule.len();
    if n == 0 {
        return 1;
    }
    let mut count: u128 = schedule.observable(n - 1).len() as u128;
    for j in 0..n - 1 {
        let s = schedule.observable(j).len() as u128;
        count = count.saturating_mul(s.saturating_mul(s));
    }
    count
}

/// Enumerate the full table. Fails with `EnumerationCapExceeded` when more
/// than `cap` pairs would be stored.
pub fn full_table_with_cap(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    cap: u128,
) -> Result<BiProbabilityTable> {
    let required = stored_pair_count(schedule);
    if required > cap {
        return Err(Error::EnumerationCapExceeded { required, cap });
    }
    let ctx = ScheduleContext::new(sys, schedule)?;
    let seqs = all_sequences(schedule);
    // Chain products L(f⃗) shared between the ± arguments; latest-first
    // keys map onto schedule-order index lists by reversal.
    let chains: Vec<CMatrix> = seqs
        .iter()
        .map(|key| {
            let fwd: Vec<usize> = key.iter().rev().copied().collect();
            ctx.chain(&fwd)
        })
        .collect();
    let sandwiched: Vec<CMatrix> = chains.iter().map(|l| l * init.metric()).collect();
    let mut values = BTreeMap::new();
    for (ip, plus) in seqs.iter().enumerate() {
        for (im, minus) in seqs.iter().enumerate() {
            if !plus.is_empty() && plus[0] != minus[0] {
                continue;
            }
            let q = trace_of_product_adjoint(&sandwiched[ip], &chains[im]);
            values.insert((plus.clone(), minus.clone()), q);
        }
    }
    Ok(BiProbabilityTable {
        system: sys.clone(),
        schedule: schedule.clone(),
        init: init.clone(),
        values,
    })
}

/// [`full_table_with_cap`] at the default cap.
pub fn full_table(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
) -> Result<BiProbabilityTable> {
    full_table_with_cap(sys, init, schedule, ENUMERATION_CAP)
}

impl BiProbabilityTable {
    pub fn schedule(&self) -> &MeasurementSchedule {
        &self.schedule
    }

    pub fn init(&self) -> &InitializationEvent {
        &self.init
    }

    pub fn system(&self) -> &QuantumSystem {
        &self.system
    }

    pub fn stored_len(&self) -> usize {
        self.values.len()
    }

    /// Stored (plus, minus, value) triples in deterministic key order.
    pub fn iter(&self) -> impl Iterator<Item = (&SeqKey, &SeqKey, C64)> {
        self.values.iter().map(|((p, m), v)| (p, m, *v))
    }

    /// Look up by outcome values in schedule order; causality-omitted pairs
    /// read as exact zeros.
    pub fn get(&self, f_plus: &[f64], f_minus: &[f64]) -> Result<C64> {
        let plus = outcome_indices(&self.schedule, f_plus)?;
        let minus = outcome_indices(&self.schedule, f_minus)?;
        let key = (
            plus.into_iter().rev().collect::<Vec<_>>(),
            minus.into_iter().rev().collect::<Vec<_>>(),
        );
        Ok(self.values.get(&key).copied().unwrap_or_default())
    }

    /// Outcome values (schedule order) for a stored key.
    fn key_values(&self, key: &SeqKey) -> Vec<f64> {
        key.iter()
            .rev()
            .enumerate()
            .map(|(j, &k)| self.schedule.observable(j).outcomes()[k])
            .collect()
    }

    /// Q1 deviation |Σ Q − 1|.
    pub fn q1_deviation(&self) -> f64 {
        let sum: C64 = self.values.values().sum();
        (sum - cr(1.0)).norm()
    }

    /// Q7 deviation: diagonal entries must be real, nonnegative (to
    /// −1e-12) and must reproduce the probability operation.
    pub fn q7_deviation(&self) -> Result<f64> {
        let mut dev: f64 = 0.0;
        for ((plus, minus), v) in &self.values {
            if plus != minus {
                continue;
            }
            dev = dev.max(v.im.abs());
            dev = dev.max((-v.re).max(0.0));
            let f = self.key_values(plus);
            let p = probability(&self.system, &self.init, &self.schedule, &f)?;
            dev = dev.max((v.re - p).abs());
        }
        Ok(dev)
    }

    /// Hermitian-pairing deviation max |Q(a,b) − Q(b,a)*|.
    pub fn hermitian_pairing_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for ((plus, minus), v) in &self.values {
            let mirrored = self
                .values
                .get(&(minus.clone(), plus.clone()))
                .copied()
                .unwrap_or_default();
            dev = dev.max((v - mirrored.conj()).norm());
        }
        dev
    }

    /// Q5 bi-consistency at interior position `j` (1-based, 1 = earliest):
    /// the double marginal Σ_{f_j±} Q must reproduce the table without the
    /// j-th measurement. Returns the max absolute deviation.
    pub fn check_bi_consistency(&self, j: usize) -> Result<f64> {
        let n = self.schedule.len();
        if j < 1 || j >= n {
            return Err(Error::PositionOutOfRange { position: j, min: 1, max: n.saturating_sub(1) });
        }
        let reduced_schedule = self.schedule.without_entry(j - 1);
        let reduced = full_table(&self.system, &self.init, &reduced_schedule)?;
        // latest-first position of schedule entry j
        let drop = n - j;
        let mut marginal: BTreeMap<(SeqKey, SeqKey), C64> = BTreeMap::new();
        for ((plus, minus), v) in &self.values {
            let mut p = plus.clone();
            let mut m = minus.clone();
            p.remove(drop);
            m.remove(drop);
            *marginal.entry((p, m)).or_default() += v;
        }
        let mut dev: f64 = 0.0;
        for ((plus, minus), v) in &reduced.values {
            let acc = marginal.remove(&(plus.clone(), minus.clone())).unwrap_or_default();
            dev = dev.max((acc - v).norm());
        }
        for (_, acc) in marginal {
            dev = dev.max(acc.norm());
        }
        Ok(dev)
    }

    /// Q4: assemble the Gudder metric over the sequence basis and verify
    /// positive semi-definiteness and unit trace.
    pub fn check_positivity(&self) -> Result<GudderMetric> {
        let basis = all_sequences(&self.schedule);
        let dim = basis.len();
        let mut gram = CMatrix::zeros(dim, dim);
        for (i, plus) in basis.iter().enumerate() {
            for (k, minus) in basis.iter().enumerate() {
                gram[(i, k)] = self
                    .values
                    .get(&(plus.clone(), minus.clone()))
                    .copied()
                    .unwrap_or_default();
            }
        }
        GudderMetric::new(basis, gram)
    }

    /// CSV export: header `f_plus_n..f_plus_1,f_minus_n..f_minus_1,re,im`,
    /// one row per stored pair, outcome values in latest-first order.
    pub fn to_csv(&self) -> String {
        let n = self.schedule.len();
        let mut out = String::new();
        for j in (1..=n).rev() {
            out.push_str(&format!("f_plus_{j},"));
        }
        for j in (1..=n).rev() {
            out.push_str(&format!("f_minus_{j},"));
        }
        out.push_str("re,im\n");
        for ((plus, minus), v) in &self.values {
            let mut fields: Vec<String> = Vec::with_capacity(2 * n + 2);
            for (pos, &k) in plus.iter().enumerate() {
                let j = n - 1 - pos; // schedule index
                fields.push(format!("{}", self.schedule.observable(j).outcomes()[k]));
            }
            for (pos, &k) in minus.iter().enumerate() {
                let j = n - 1 - pos;
                fields.push(format!("{}", self.schedule.observable(j).outcomes()[k]));
            }
            fields.push(format!("{}", v.re));
            fields.push(format!("{}", v.im));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// The Gudder metric of a bi-probability table: the Gram operator over the
/// sequence-indexed basis together with its rank and kernel (the quotient
/// construction data).
#[derive(Debug, Clone)]
pub struct GudderMetric {
    basis_index: Vec<SeqKey>,
    gram: CMatrix,
    eigenvalues: Vec<f64>,
    rank: usize,
    null_basis: CMatrix,
}

impl GudderMetric {
    fn new(basis_index: Vec<SeqKey>, gram: CMatrix) -> Result<Self> {
        let (eigenvalues, vectors) = numeric::eig_hermitian(&gram)?;
        let min = eigenvalues.first().copied().unwrap_or(0.0);
        if min < -PSD_TOL {
            return Err(Error::NotPsd { min_eigenvalue: min });
        }
        let tr = numeric::trace(&gram).re;
        if (tr - 1.0).abs() > 1e-10 {
            return Err(Error::TraceDeviation { trace: tr });
        }
        let rank = eigenvalues.iter().filter(|&&v| v > RANK_TOL).count();
        let nullity = eigenvalues.len() - rank;
        let mut null_basis = CMatrix::zeros(eigenvalues.len(), nullity);
        for k in 0..nullity {
            null_basis.set_column(k, &vectors.column(k));
        }
        Ok(Self { basis_index, gram, eigenvalues, rank, null_basis })
    }

    pub fn basis_index(&self) -> &[SeqKey] {
        &self.basis_index
    }

    pub fn gram(&self) -> &CMatrix {
        &self.gram
    }

    /// Ascending eigenvalues of the Gram operator.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Orthonormal columns spanning the kernel.
    pub fn null_basis(&self) -> &CMatrix {
        &self.null_basis
    }
}

/// Q8 additivity under coarse-graining: compare the coarse-device table
/// against cellwise sums of the fine table over both ± arguments. Positions
/// carry an optional resolution; `None` leaves the device fine.
pub fn check_additivity(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    resolutions: &[Option<Resolution>],
) -> Result<f64> {
    let n = schedule.len();
    if resolutions.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: resolutions.len() });
    }
    let mut coarse_entries = Vec::with_capacity(n);
    for (j, (t, obs)) in schedule.entries().iter().enumerate() {
        let entry = match &resolutions[j] {
            Some(res) => (*t, coarse_grain(obs, res)?),
            None => (*t, obs.clone()),
        };
        coarse_entries.push(entry);
    }
    let coarse_schedule = MeasurementSchedule::new(schedule.t0(), coarse_entries)?;
    let fine = full_table(sys, init, schedule)?;
    let coarse = full_table(sys, init, &coarse_schedule)?;
    // Map a fine latest-first key to its coarse counterpart.
    let to_coarse = |key: &SeqKey| -> SeqKey {
        key.iter()
            .enumerate()
            .map(|(pos, &k)| {
                let j = n - 1 - pos;
                match &resolutions[j] {
                    Some(res) => res.cell_of(k).0,
                    None => k,
                }
            })
            .collect()
    };
    let mut summed: BTreeMap<(SeqKey, SeqKey), C64> = BTreeMap::new();
    for (plus, minus, v) in fine.iter() {
        *summed.entry((to_coarse(plus), to_coarse(minus))).or_default() += v;
    }
    let mut dev: f64 = 0.0;
    for (plus, minus, v) in coarse.iter() {
        let acc = summed.remove(&(plus.clone(), minus.clone())).unwrap_or_default();
        dev = dev.max((acc - v).norm());
    }
    for (_, acc) in summed {
        dev = dev.max(acc.norm());
    }
    Ok(dev)
}
