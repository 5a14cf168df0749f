//! Composite systems with a single coupling term Ĥ_AB = Ĥ_A⊗1 + 1⊗Ĥ_B +
//! λ V̂_A⊗V̂_B, and everything that flows from it: the factorization rule
//! for independent systems, the moments identity, reduced bi-probabilities
//! as path sums over the B-side bi-trajectory (the surrogate field), and
//! the dynamical map Λ_t computed two ways with CPTP verification.
//!
//! Path sums discretize the time-ordered exponentials first order: the
//! B bi-trajectory lives on the uniform grid s_i = iΔ over [0, t], and the
//! A-side evolution is a product of per-step exponentials with the drive
//! value v_B(b_i) held constant over each step. Under the path cap the sum
//! is enumerated literally (lexicographic path order, compensated
//! accumulation); above it the identical sum is evaluated by per-step
//! distributivity, which reproduces the enumeration to roundoff.

use std::collections::HashMap;

use crate::biprob;
use crate::error::{Error, Result};
use crate::numeric::{
    self, cr, expm_hermitian_phase, kron, partial_trace_b, require_hermitian,
    trace_of_product_adjoint, CMatrix, C64,
};
use crate::system::{
    heisenberg_projector_by_index, observable_from_matrix, InitializationEvent,
    MeasurementSchedule, Observable, QuantumSystem,
};

/// Default cap on enumerated bi-trajectory path pairs.
pub const PATH_CAP: u128 = 10_000_000;

/// Compensated (Kahan) accumulator for complex sums.
#[derive(Debug, Clone, Copy, Default)]
struct KahanC64 {
    sum: C64,
    comp: C64,
}

impl KahanC64 {
    fn add(&mut self, value: C64) {
        let y = value - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }
}

#[derive(Debug, Clone)]
pub struct CompositeSystem {
    sys_a: QuantumSystem,
    sys_b: QuantumSystem,
    coupling: f64,
    v_a: CMatrix,
    v_b: CMatrix,
    total: QuantumSystem,
}

/// Assemble Ĥ_AB = Ĥ_A⊗1 + 1⊗Ĥ_B + λ V̂_A⊗V̂_B.
pub fn compose(
    sys_a: &QuantumSystem,
    sys_b: &QuantumSystem,
    coupling: f64,
    v_a: &CMatrix,
    v_b: &CMatrix,
) -> Result<CompositeSystem> {
    let v_a = require_hermitian(v_a)?;
    let v_b = require_hermitian(v_b)?;
    if v_a.nrows() != sys_a.dim() {
        return Err(Error::DimensionMismatch(format!(
            "V_A is {}x{}, system A dim {}",
            v_a.nrows(),
            v_a.ncols(),
            sys_a.dim()
        )));
    }
    if v_b.nrows() != sys_b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "V_B is {}x{}, system B dim {}",
            v_b.nrows(),
            v_b.ncols(),
            sys_b.dim()
        )));
    }
    let (da, db) = (sys_a.dim(), sys_b.dim());
    let h_total = kron(sys_a.hamiltonian(), &numeric::identity(db))
        + kron(&numeric::identity(da), sys_b.hamiltonian())
        + kron(&v_a, &v_b).scale(coupling);
    let total = QuantumSystem::new(h_total)?;
    Ok(CompositeSystem {
        sys_a: sys_a.clone(),
        sys_b: sys_b.clone(),
        coupling,
        v_a,
        v_b,
        total,
    })
}

impl CompositeSystem {
    pub fn sys_a(&self) -> &QuantumSystem {
        &self.sys_a
    }

    pub fn sys_b(&self) -> &QuantumSystem {
        &self.sys_b
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn v_a(&self) -> &CMatrix {
        &self.v_a
    }

    pub fn v_b(&self) -> &CMatrix {
        &self.v_b
    }

    pub fn total(&self) -> &QuantumSystem {
        &self.total
    }

    pub fn dim_a(&self) -> usize {
        self.sys_a.dim()
    }

    pub fn dim_b(&self) -> usize {
        self.sys_b.dim()
    }

    /// An A-only observable lifted to the composite space, P̂ ⊗ 1_B.
    pub fn lift_a(&self, obs: &Observable) -> Result<Observable> {
        if obs.dim() != self.dim_a() {
            return Err(Error::DimensionMismatch(format!(
                "observable `{}` has dim {}, A side has {}",
                obs.name(),
                obs.dim(),
                self.dim_a()
            )));
        }
        let eye_b = numeric::identity(self.dim_b());
        let projectors = obs.projectors().iter().map(|p| kron(p, &eye_b)).collect();
        Observable::new(format!("{}xI", obs.name()), obs.outcomes().to_vec(), projectors)
    }

    /// Product initialization ρ̂_A ⊗ ρ̂_B; the factor events must share t₀.
    pub fn product_init(
        &self,
        init_a: &InitializationEvent,
        init_b: &InitializationEvent,
    ) -> Result<InitializationEvent> {
        if init_a.time() != init_b.time() {
            return Err(Error::InvalidState(format!(
                "initialization times differ: {} vs {}",
                init_a.time(),
                init_b.time()
            )));
        }
        InitializationEvent::from_density_matrix(
            &self.total,
            init_a.time(),
            &kron(init_a.metric(), init_b.metric()),
        )
    }

    /// The spectral observable of V̂_B: the path alphabet of the B-side
    /// bi-trajectory, with distinct eigenvalues as outcomes.
    pub fn b_alphabet(&self) -> Result<Observable> {
        observable_from_matrix(&self.sys_b, "V_B", &self.v_b)
    }
}

/// A split assigns every time index to the forward block, the backward
/// block, or both (an index may drive both branches, as in tr[F̂ρ̂F̂]).
/// Within a block indices must be distinct.
fn validate_split(n: usize, i_plus: &[usize], i_minus: &[usize]) -> Result<()> {
    let mut covered = vec![false; n];
    for block in [i_plus, i_minus] {
        let mut seen = vec![false; n];
        for &i in block {
            if i < 1 || i > n || seen[i - 1] {
                return Err(Error::BadSplit { n });
            }
            seen[i - 1] = true;
            covered[i - 1] = true;
        }
    }
    if !covered.iter().all(|&s| s) {
        return Err(Error::BadSplit { n });
    }
    Ok(())
}

/// The moments identity: a time-ordered correlation of V̂_B equals the
/// eigenvalue-weighted sum of B bi-probabilities over all bi-trajectory
/// assignments at the same times. Exact at discrete times; returns
/// |LHS − RHS|. Positions in `i_plus`/`i_minus` are 1-based into `times`.
pub fn moments_identity_check(
    comp: &CompositeSystem,
    rho_b: &CMatrix,
    times: &[f64],
    i_plus: &[usize],
    i_minus: &[usize],
) -> Result<f64> {
    let n = times.len();
    validate_split(n, i_plus, i_minus)?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidState("times must be strictly increasing".into()));
    }
    let rho_b = require_hermitian(rho_b)?;
    let sys_b = comp.sys_b();
    // Heisenberg coupling operators V̂_B(s) = e^{iĤs} V̂_B e^{−iĤs}
    let v_at = |s: f64| -> CMatrix {
        let u = sys_b.evolution(s, 0.0);
        u.adjoint() * comp.v_b() * u
    };
    let mut plus_sorted = i_plus.to_vec();
    plus_sorted.sort_unstable_by(|a, b| b.cmp(a));
    let mut minus_sorted = i_minus.to_vec();
    minus_sorted.sort_unstable_by(|a, b| b.cmp(a));
    let t_plus = plus_sorted
        .iter()
        .fold(numeric::identity(comp.dim_b()), |acc, &i| acc * v_at(times[i - 1]));
    let t_minus = minus_sorted
        .iter()
        .fold(numeric::identity(comp.dim_b()), |acc, &i| acc * v_at(times[i - 1]));
    let lhs = trace_of_product_adjoint(&(t_plus * &rho_b), &t_minus);

    // RHS: enumerate both branches over the eigenvalue alphabet.
    let alphabet = comp.b_alphabet()?;
    let letters = alphabet.len();
    let projs: Vec<Vec<CMatrix>> = times
        .iter()
        .map(|&s| {
            (0..letters)
                .map(|b| heisenberg_projector_by_index(sys_b, &alphabet, b, s))
                .collect()
        })
        .collect();
    let mut chains: Vec<CMatrix> = vec![numeric::identity(comp.dim_b())];
    let mut assignments: Vec<Vec<usize>> = vec![vec![]];
    for j in 0..n {
        let mut next_chains = Vec::with_capacity(chains.len() * letters);
        let mut next_assign = Vec::with_capacity(chains.len() * letters);
        for (chain, assign) in chains.iter().zip(&assignments) {
            for b in 0..letters {
                next_chains.push(&projs[j][b] * chain);
                let mut a = assign.clone();
                a.push(b);
                next_assign.push(a);
            }
        }
        chains = next_chains;
        assignments = next_assign;
    }
    let sandwiched: Vec<CMatrix> = chains.iter().map(|c| c * &rho_b).collect();
    let mut rhs = KahanC64::default();
    for (ip, ap) in assignments.iter().enumerate() {
        for (im, am) in assignments.iter().enumerate() {
            let mut factor = 1.0;
            for &i in i_plus {
                factor *= alphabet.outcomes()[ap[i - 1]];
            }
            for &i in i_minus {
                factor *= alphabet.outcomes()[am[i - 1]];
            }
            let w = trace_of_product_adjoint(&sandwiched[ip], &chains[im]);
            rhs.add(w * cr(factor));
        }
    }
    Ok((lhs - rhs.sum).norm())
}

/// Q3 factorization for independent systems: with λ = 0 and a product
/// initialization, the joint table of paired (A, B) devices factorizes into
/// the product of the marginal tables. Returns the max deviation.
pub fn factorization_check(
    comp: &CompositeSystem,
    init_a: &InitializationEvent,
    init_b: &InitializationEvent,
    paired_entries: &[(f64, Observable, Observable)],
) -> Result<f64> {
    if comp.coupling() != 0.0 {
        return Err(Error::CouplingNonzero(comp.coupling()));
    }
    let mut a_entries = Vec::new();
    let mut b_entries = Vec::new();
    let mut joint_entries = Vec::new();
    for (t, obs_a, obs_b) in paired_entries {
        let mut outcomes = Vec::new();
        let mut projectors = Vec::new();
        for (ia, _) in obs_a.outcomes().iter().enumerate() {
            for (ib, _) in obs_b.outcomes().iter().enumerate() {
                outcomes.push((ia * obs_b.len() + ib) as f64);
                projectors.push(kron(obs_a.projector(ia), obs_b.projector(ib)));
            }
        }
        let joint =
            Observable::new(format!("{}&{}", obs_a.name(), obs_b.name()), outcomes, projectors)?;
        a_entries.push((*t, obs_a.clone()));
        b_entries.push((*t, obs_b.clone()));
        joint_entries.push((*t, joint));
    }
    let t0 = init_a.time();
    let schedule_a = MeasurementSchedule::new(t0, a_entries)?;
    let schedule_b = MeasurementSchedule::new(t0, b_entries)?;
    let schedule_ab = MeasurementSchedule::new(t0, joint_entries)?;
    let table_a = biprob::full_table(comp.sys_a(), init_a, &schedule_a)?;
    let table_b = biprob::full_table(comp.sys_b(), init_b, &schedule_b)?;
    let joint_init = comp.product_init(init_a, init_b)?;
    let table_ab = biprob::full_table(comp.total(), &joint_init, &schedule_ab)?;

    let widths: Vec<usize> =
        paired_entries.iter().rev().map(|(_, _, obs_b)| obs_b.len()).collect();
    let split = |key: &[usize]| -> (Vec<usize>, Vec<usize>) {
        key.iter()
            .zip(&widths)
            .map(|(&k, &w)| (k / w, k % w))
            .unzip()
    };
    let mut dev: f64 = 0.0;
    for (plus, minus, q_ab) in table_ab.iter() {
        let (ap, bp) = split(plus);
        let (am, bm) = split(minus);
        let q_a = lookup(&table_a, &ap, &am);
        let q_b = lookup(&table_b, &bp, &bm);
        dev = dev.max((q_ab - q_a * q_b).norm());
    }
    Ok(dev)
}

fn lookup(table: &biprob::BiProbabilityTable, plus: &[usize], minus: &[usize]) -> C64 {
    for (p, m, v) in table.iter() {
        if p == plus && m == minus {
            return v;
        }
    }
    C64::default()
}

/// Reduced bi-probability of A-only observables computed exactly on the
/// composite space: projectors are lifted as P̂ ⊗ 1_B and everything evolves
/// under the full coupled Hamiltonian.
pub fn reduced_biprob_exact(
    comp: &CompositeSystem,
    init_a: &InitializationEvent,
    init_b: &InitializationEvent,
    schedule: &MeasurementSchedule,
    f_plus: &[f64],
    f_minus: &[f64],
) -> Result<C64> {
    let entries = schedule
        .entries()
        .iter()
        .map(|(t, obs)| Ok((*t, comp.lift_a(obs)?)))
        .collect::<Result<Vec<_>>>()?;
    let lifted = MeasurementSchedule::new(schedule.t0(), entries)?;
    let joint_init = comp.product_init(init_a, init_b)?;
    biprob::biprob(comp.total(), &joint_init, &lifted, f_plus, f_minus)
}

/// One step of the discretized drive: evolution pieces and measurement
/// insertions inside the step's time window.
#[derive(Debug, Clone)]
enum StepPiece {
    Evolve { tau: f64 },
    Measure { j: usize },
}

/// Discretization of [0, t] into m uniform steps with B-grid points at the
/// right endpoint of each step and measurement times interleaved exactly.
struct PathGrid {
    m: usize,
    /// pieces of each step, in time order
    steps: Vec<Vec<StepPiece>>,
    /// B-grid times s_i = iΔ
    s_times: Vec<f64>,
}

impl PathGrid {
    fn new(t_total: f64, m: usize, measurement_times: &[f64]) -> Result<Self> {
        if m == 0 || t_total <= 0.0 {
            return Err(Error::BadDimension(format!(
                "grid needs m >= 1 and t > 0, got m={m}, t={t_total}"
            )));
        }
        let delta = t_total / m as f64;
        let snap = 1e-9 * delta;
        let mut steps = Vec::with_capacity(m);
        for i in 1..=m {
            let lo = (i - 1) as f64 * delta;
            let hi = if i == m { t_total } else { i as f64 * delta };
            let mut cursor = lo;
            let mut pieces = Vec::new();
            for (j, &tj) in measurement_times.iter().enumerate() {
                if tj - lo > snap && (hi - tj > snap || (tj - hi).abs() <= snap) {
                    let target = if (tj - hi).abs() <= snap { hi } else { tj };
                    if target - cursor > snap {
                        pieces.push(StepPiece::Evolve { tau: target - cursor });
                    }
                    cursor = target;
                    pieces.push(StepPiece::Measure { j });
                }
            }
            if hi - cursor > snap {
                pieces.push(StepPiece::Evolve { tau: hi - cursor });
            }
            steps.push(pieces);
        }
        let s_times = (1..=m).map(|i| i as f64 * delta).collect();
        Ok(Self { m, steps, s_times })
    }
}

/// Everything shared by the enumerated and factorized path-sum routes.
struct PathSumSetup {
    grid: PathGrid,
    alphabet: Observable,
    /// [letter][tau-index] keyed propagator cache exp(−iτ(Ĥ_A + λ v V̂_A))
    seg_props: HashMap<(usize, u64), CMatrix>,
    /// evolved B projectors at the grid times, [step][letter]
    b_projs: Vec<Vec<CMatrix>>,
}

impl PathSumSetup {
    fn new(comp: &CompositeSystem, t_total: f64, m: usize, times: &[f64]) -> Result<Self> {
        let grid = PathGrid::new(t_total, m, times)?;
        let alphabet = comp.b_alphabet()?;
        let mut seg_props = HashMap::new();
        for (b, &v) in alphabet.outcomes().iter().enumerate() {
            let gen = comp.sys_a().hamiltonian() + comp.v_a().scale(comp.coupling() * v);
            let mut taus: Vec<f64> = Vec::new();
            for step in &grid.steps {
                for piece in step {
                    if let StepPiece::Evolve { tau } = piece {
                        taus.push(*tau);
                    }
                }
            }
            for tau in taus {
                seg_props
                    .entry((b, tau.to_bits()))
                    .or_insert_with(|| expm_hermitian_phase(&gen, tau).expect("hermitian generator"));
            }
        }
        let b_projs = grid
            .s_times
            .iter()
            .map(|&s| {
                (0..alphabet.len())
                    .map(|b| heisenberg_projector_by_index(comp.sys_b(), &alphabet, b, s))
                    .collect()
            })
            .collect();
        Ok(Self { grid, alphabet, seg_props, b_projs })
    }

    /// A-side factor of one step for one letter: evolution pieces with the
    /// given measurement projectors interleaved, later pieces on the left.
    fn a_step_factor(&self, step: usize, letter: usize, measure: &[CMatrix]) -> CMatrix {
        let dim = measure.first().map(|p| p.nrows()).unwrap_or_else(|| {
            self.seg_props.values().next().map(|g| g.nrows()).unwrap_or(1)
        });
        let mut acc = numeric::identity(dim);
        for piece in &self.grid.steps[step] {
            let factor = match piece {
                StepPiece::Evolve { tau } => &self.seg_props[&(letter, tau.to_bits())],
                StepPiece::Measure { j } => &measure[*j],
            };
            acc = factor * acc;
        }
        acc
    }

    fn letters(&self) -> usize {
        self.alphabet.len()
    }
}

/// Reference-time A projectors for one branch's outcome assignment.
fn branch_projectors(schedule: &MeasurementSchedule, f: &[f64]) -> Result<Vec<CMatrix>> {
    if f.len() != schedule.len() {
        return Err(Error::LengthMismatch { expected: schedule.len(), got: f.len() });
    }
    schedule
        .entries()
        .iter()
        .zip(f)
        .map(|((_, obs), &v)| {
            let idx = obs.outcome_index(v)?;
            Ok(obs.projector(idx).clone())
        })
        .collect()
}

fn check_surrogate_preconditions(comp: &CompositeSystem, schedule: &MeasurementSchedule) -> Result<()> {
    if schedule.t0() != 0.0 {
        return Err(Error::InvalidState(
            "path sums take the initialization time as the origin; use t0 = 0".into(),
        ));
    }
    if schedule.is_empty() {
        return Err(Error::InvalidState("path sums need at least one measurement".into()));
    }
    for (_, obs) in schedule.entries() {
        if obs.dim() != comp.dim_a() {
            return Err(Error::DimensionMismatch(format!(
                "observable `{}` has dim {}, A side has {}",
                obs.name(),
                obs.dim(),
                comp.dim_a()
            )));
        }
    }
    Ok(())
}

/// Path-sum approximation of the reduced bi-probability: the B bi-trajectory
/// on an m-step grid drives the A evolution as a piecewise-constant
/// surrogate field. Converges to [`reduced_biprob_exact`] as O(1/m).
/// Enumerates paths under [`PATH_CAP`]; above it the identical sum is
/// evaluated by per-step distributivity.
pub fn surrogate_biprob(
    comp: &CompositeSystem,
    init_a: &InitializationEvent,
    init_b: &InitializationEvent,
    schedule: &MeasurementSchedule,
    f_plus: &[f64],
    f_minus: &[f64],
    grid_steps: usize,
) -> Result<C64> {
    surrogate_biprob_with_cap(comp, init_a, init_b, schedule, f_plus, f_minus, grid_steps, PATH_CAP)
}

pub fn surrogate_biprob_with_cap(
    comp: &CompositeSystem,
    init_a: &InitializationEvent,
    init_b: &InitializationEvent,
    schedule: &MeasurementSchedule,
    f_plus: &[f64],
    f_minus: &[f64],
    grid_steps: usize,
    cap: u128,
) -> Result<C64> {
    check_surrogate_preconditions(comp, schedule)?;
    if init_a.time() != 0.0 || init_b.time() != 0.0 {
        return Err(Error::InvalidState("path sums require initialization at t0 = 0".into()));
    }
    let times: Vec<f64> = schedule.entries().iter().map(|(t, _)| *t).collect();
    let t_total = *times.last().unwrap();
    let setup = PathSumSetup::new(comp, t_total, grid_steps, &times)?;
    let proj_plus = branch_projectors(schedule, f_plus)?;
    let proj_minus = branch_projectors(schedule, f_minus)?;
    let pair_count = path_pair_count(setup.letters(), grid_steps);
    if pair_count <= cap {
        surrogate_enumerated(comp, init_a, init_b, &setup, &proj_plus, &proj_minus)
    } else {
        surrogate_factorized(comp, init_a, init_b, &setup, &proj_plus, &proj_minus)
    }
}

fn path_pair_count(letters: usize, m: usize) -> u128 {
    let mut count: u128 = 1;
    for _ in 0..2 * m {
        count = count.saturating_mul(letters as u128);
    }
    count
}

/// All per-branch chain products over paths in lexicographic order
/// (b_1 is the most significant digit).
fn branch_chains(
    setup: &PathSumSetup,
    start: CMatrix,
    factor: impl Fn(usize, usize) -> CMatrix,
) -> Vec<CMatrix> {
    let letters = setup.letters();
    let mut chains = vec![start];
    for step in 0..setup.grid.m {
        let mut next = Vec::with_capacity(chains.len() * letters);
        for chain in &chains {
            for b in 0..letters {
                next.push(factor(step, b) * chain);
            }
        }
        chains = next;
    }
    // lexicographic order with b_1 most significant: the DFS above appends
    // the earliest step first, so reorder by digit reversal of the rank
    let m = setup.grid.m;
    let total = chains.len();
    let mut ordered = chains.clone();
    for (rank, chain) in chains.into_iter().enumerate() {
        let mut r = rank;
        let mut digits = vec![0usize; m];
        for d in (0..m).rev() {
            digits[d] = r % letters;
            r /= letters;
        }
        // digits[d] is the letter chosen at step d (earliest-first already)
        let mut lex = 0usize;
        for d in 0..m {
            lex = lex * letters + digits[d];
        }
        ordered[lex] = chain;
        let _ = total;
    }
    ordered
}

fn surrogate_enumerated(
    comp: &CompositeSystem,
    init_a: &InitializationEvent,
    init_b: &InitializationEvent,
    setup: &PathSumSetup,
    proj_plus: &[CMatrix],
    proj_minus: &[CMatrix],
) -> Result<C64> {
    let da = comp.dim_a();
    let db = comp.dim_b();
    let a_plus = branch_chains(setup, numeric::identity(da), |step, b| {
        setup.a_step_factor(step, b, proj_plus)
    });
    let a_minus = branch_chains(setup, numeric::identity(da), |step, b| {
        setup.a_step_factor(step, b, proj_minus)
    });
    let b_chains = branch_chains(setup, numeric::identity(db), |step, b| {
        setup.b_projs[step][b].clone()
    });
    let a_rho: Vec<CMatrix> = a_plus.iter().map(|l| l * init_a.metric()).collect();
    let b_rho: Vec<CMatrix> = b_chains.iter().map(|l| l * init_b.metric()).collect();
    let mut acc = KahanC64::default();
    for ip in 0..a_rho.len() {
        for im in 0..a_minus.len() {
            let a_factor = trace_of_product_adjoint(&a_rho[ip], &a_minus[im]);
            let weight = trace_of_product_adjoint(&b_rho[ip], &b_chains[im]);
            acc.add(a_factor * weight);
        }
    }
    Ok(acc.sum)
}

fn surrogate_factorized(
    comp: &CompositeSystem,
    init_a: &InitializationEvent,
    init_b: &InitializationEvent,
    setup: &PathSumSetup,
    proj_plus: &[CMatrix],
    proj_minus: &[CMatrix],
) -> Result<C64> {
    let chain = |projs: &[CMatrix]| -> CMatrix {
        let d = comp.dim_a() * comp.dim_b();
        let mut acc = numeric::identity(d);
        for step in 0..setup.grid.m {
            let mut joint = CMatrix::zeros(d, d);
            for b in 0..setup.letters() {
                joint += kron(&setup.a_step_factor(step, b, projs), &setup.b_projs[step][b]);
            }
            acc = joint * acc;
        }
        acc
    };
    let m_plus = chain(proj_plus);
    let m_minus = chain(proj_minus);
    let rho = kron(init_a.metric(), init_b.metric());
    Ok(trace_of_product_adjoint(&(m_plus * rho), &m_minus))
}

/// One enumerated B-side bi-trajectory on the discrete grid.
#[derive(Debug, Clone)]
pub struct BiTrajectoryGrid {
    /// grid times s_i = iΔ
    pub times: Vec<f64>,
    /// forward-branch letter indices into the V_B eigenvalue alphabet
    pub b_plus: Vec<usize>,
    /// backward-branch letter indices
    pub b_minus: Vec<usize>,
    /// the discrete B bi-probability of this path pair
    pub weight: C64,
    /// eigenvalue track v_B(b⁺(s))
    pub v_plus: Vec<f64>,
    /// eigenvalue track v_B(b⁻(s))
    pub v_minus: Vec<f64>,
}

/// Materialize every B bi-trajectory pair with its weight; the weights sum
/// to 1. Fails with `PathCapExceeded` beyond the cap.
pub fn enumerate_bi_trajectories(
    comp: &CompositeSystem,
    rho_b: &CMatrix,
    t_total: f64,
    m: usize,
    cap: u128,
) -> Result<Vec<BiTrajectoryGrid>> {
    let setup = PathSumSetup::new(comp, t_total, m, &[])?;
    let required = path_pair_count(setup.letters(), m);
    if required > cap {
        return Err(Error::PathCapExceeded { required, cap });
    }
    let rho_b = require_hermitian(rho_b)?;
    let db = comp.dim_b();
    let b_chains = branch_chains(&setup, numeric::identity(db), |step, b| {
        setup.b_projs[step][b].clone()
    });
    let b_rho: Vec<CMatrix> = b_chains.iter().map(|l| l * &rho_b).collect();
    let letters = setup.letters();
    let digits = |mut rank: usize| -> Vec<usize> {
        let mut d = vec![0usize; m];
        for k in (0..m).rev() {
            d[k] = rank % letters;
            rank /= letters;
        }
        d
    };
    let mut out = Vec::with_capacity(b_rho.len() * b_rho.len());
    for ip in 0..b_rho.len() {
        for im in 0..b_chains.len() {
            let weight = trace_of_product_adjoint(&b_rho[ip], &b_chains[im]);
            let b_plus = digits(ip);
            let b_minus = digits(im);
            let v_plus = b_plus.iter().map(|&b| setup.alphabet.outcomes()[b]).collect();
            let v_minus = b_minus.iter().map(|&b| setup.alphabet.outcomes()[b]).collect();
            out.push(BiTrajectoryGrid {
                times: setup.grid.s_times.clone(),
                b_plus,
                b_minus,
                weight,
                v_plus,
                v_minus,
            });
        }
    }
    Ok(out)
}

/// The exact dynamical map Λ_t ρ̂ = tr_B[e^{−itĤ} ρ̂⊗ρ̂_B e^{itĤ}] as a
/// d_A² × d_A² superoperator matrix over the standard operator basis
/// (row-major index pairs).
pub fn dynamical_map_exact(comp: &CompositeSystem, rho_b: &CMatrix, t: f64) -> Result<CMatrix> {
    let rho_b = validate_state(comp, rho_b)?;
    let da = comp.dim_a();
    let db = comp.dim_b();
    let u = comp.total().evolution(t, 0.0);
    let udag = u.adjoint();
    let mut superop = CMatrix::zeros(da * da, da * da);
    for i in 0..da {
        for j in 0..da {
            let mut e_ij = CMatrix::zeros(da, da);
            e_ij[(i, j)] = cr(1.0);
            let evolved = &u * kron(&e_ij, &rho_b) * &udag;
            let reduced = partial_trace_b(&evolved, da, db)?;
            for k in 0..da {
                for l in 0..da {
                    superop[(k * da + l, i * da + j)] = reduced[(k, l)];
                }
            }
        }
    }
    Ok(superop)
}

fn validate_state(comp: &CompositeSystem, rho_b: &CMatrix) -> Result<CMatrix> {
    let rho_b = require_hermitian(rho_b)
        .map_err(|e| Error::InvalidState(format!("environment state: {e}")))?;
    if rho_b.nrows() != comp.dim_b() {
        return Err(Error::InvalidState(format!(
            "environment state is {}x{}, B dim {}",
            rho_b.nrows(),
            rho_b.ncols(),
            comp.dim_b()
        )));
    }
    let (values, _) = numeric::eig_hermitian(&rho_b)?;
    if values.iter().any(|&v| v < -1e-10) {
        return Err(Error::InvalidState(format!(
            "environment state has negative eigenvalue {:.3e}",
            values[0]
        )));
    }
    let tr = numeric::trace(&rho_b).re;
    if (tr - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidState(format!("environment state trace {tr} is not 1")));
    }
    Ok(rho_b)
}

/// Path-sum approximation of the dynamical map: the bi-average of driven
/// A-side propagators over the discrete B bi-trajectory measure. Converges
/// to [`dynamical_map_exact`] with O(1/m). Enumerates under the cap, else
/// evaluates the identical sum factorized.
pub fn dynamical_map_path_sum(
    comp: &CompositeSystem,
    rho_b: &CMatrix,
    t: f64,
    m: usize,
) -> Result<CMatrix> {
    dynamical_map_path_sum_with_cap(comp, rho_b, t, m, PATH_CAP)
}

pub fn dynamical_map_path_sum_with_cap(
    comp: &CompositeSystem,
    rho_b: &CMatrix,
    t: f64,
    m: usize,
    cap: u128,
) -> Result<CMatrix> {
    let rho_b = validate_state(comp, rho_b)?;
    let setup = PathSumSetup::new(comp, t, m, &[])?;
    let da = comp.dim_a();
    let db = comp.dim_b();
    if path_pair_count(setup.letters(), m) <= cap {
        // enumerated: Λ = Σ w(b⁺,b⁻) U[b⁺] • U[b⁻]†, superoperator
        // kron(U⁺, conj(U⁻)) under the row-major pairing
        let a_chains = branch_chains(&setup, numeric::identity(da), |step, b| {
            setup.a_step_factor(step, b, &[])
        });
        let b_chains = branch_chains(&setup, numeric::identity(db), |step, b| {
            setup.b_projs[step][b].clone()
        });
        let b_rho: Vec<CMatrix> = b_chains.iter().map(|l| l * &rho_b).collect();
        let mut sum = CMatrix::zeros(da * da, da * da);
        let mut comp_mat = CMatrix::zeros(da * da, da * da);
        for ip in 0..a_chains.len() {
            for im in 0..a_chains.len() {
                let w = trace_of_product_adjoint(&b_rho[ip], &b_chains[im]);
                let term = kron(&a_chains[ip], &a_chains[im].map(|z| z.conj())).scale(1.0) * w;
                // compensated matrix accumulation
                let y = term - &comp_mat;
                let t_new = &sum + &y;
                comp_mat = (&t_new - &sum) - y;
                sum = t_new;
            }
        }
        Ok(sum)
    } else {
        let d = da * db;
        let mut chain = numeric::identity(d);
        for step in 0..setup.grid.m {
            let mut joint = CMatrix::zeros(d, d);
            for b in 0..setup.letters() {
                joint += kron(&setup.a_step_factor(step, b, &[]), &setup.b_projs[step][b]);
            }
            chain = joint * chain;
        }
        let chain_dag = chain.adjoint();
        let mut superop = CMatrix::zeros(da * da, da * da);
        for i in 0..da {
            for j in 0..da {
                let mut e_ij = CMatrix::zeros(da, da);
                e_ij[(i, j)] = cr(1.0);
                let evolved = &chain * kron(&e_ij, &rho_b) * &chain_dag;
                let reduced = partial_trace_b(&evolved, da, db)?;
                for k in 0..da {
                    for l in 0..da {
                        superop[(k * da + l, i * da + j)] = reduced[(k, l)];
                    }
                }
            }
        }
        Ok(superop)
    }
}

/// Assemble the Choi matrix Σ_{ij} E_ij ⊗ Λ(E_ij) of a superoperator and
/// return (min Choi eigenvalue, max trace-preservation deviation). The map
/// is CP iff the Choi matrix is PSD.
pub fn choi_cptp_check(superop: &CMatrix) -> Result<(f64, f64)> {
    let dim = superop.nrows();
    if superop.ncols() != dim {
        return Err(Error::BadDimension(format!(
            "superoperator must be square, got {}x{}",
            dim,
            superop.ncols()
        )));
    }
    let d = (dim as f64).sqrt().round() as usize;
    if d * d != dim {
        return Err(Error::BadDimension(format!(
            "superoperator dimension {dim} is not a perfect square"
        )));
    }
    let mut choi = CMatrix::zeros(dim, dim);
    let mut trace_dev: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let col = i * d + j;
            let mut tr = C64::default();
            for k in 0..d {
                for l in 0..d {
                    let entry = superop[(k * d + l, col)];
                    choi[(i * d + k, j * d + l)] = entry;
                    if k == l {
                        tr += entry;
                    }
                }
            }
            let expected = if i == j { 1.0 } else { 0.0 };
            trace_dev = trace_dev.max((tr - cr(expected)).norm());
        }
    }
    let (values, _) = numeric::eig_hermitian(&choi)?;
    Ok((values.first().copied().unwrap_or(0.0), trace_dev))
}

/// Apply a superoperator matrix to a density operator.
pub fn apply_superop(superop: &CMatrix, rho: &CMatrix) -> Result<CMatrix> {
    let d = rho.nrows();
    if superop.nrows() != d * d || rho.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "superoperator {}x{} vs state {}x{}",
            superop.nrows(),
            superop.ncols(),
            d,
            rho.ncols()
        )));
    }
    let mut out = CMatrix::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            let mut acc = C64::default();
            for i in 0..d {
                for j in 0..d {
                    acc += superop[(k * d + l, i * d + j)] * rho[(i, j)];
                }
            }
            out[(k, l)] = acc;
        }
    }
    Ok(out)
}

/// One row of a convergence report.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub m: usize,
    pub abs_error: f64,
    pub ratio_vs_previous: Option<f64>,
}

/// Path-sum map error against the exact map over a ladder of grids.
pub fn map_convergence(
    comp: &CompositeSystem,
    rho_b: &CMatrix,
    t: f64,
    ms: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    let exact = dynamical_map_exact(comp, rho_b, t)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(ms.len());
    for &m in ms {
        let approx = dynamical_map_path_sum(comp, rho_b, t, m)?;
        let err = numeric::max_norm(&(&approx - &exact));
        let ratio = rows.last().map(|prev: &ConvergenceRow| err / prev.abs_error);
        rows.push(ConvergenceRow { m, abs_error: err, ratio_vs_previous: ratio });
    }
    Ok(rows)
}

/// Surrogate bi-probability error against the exact reduced value over a
/// ladder of grids.
pub fn surrogate_convergence(
    comp: &CompositeSystem,
    init_a: &InitializationEvent,
    init_b: &InitializationEvent,
    schedule: &MeasurementSchedule,
    f_plus: &[f64],
    f_minus: &[f64],
    ms: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    let exact = reduced_biprob_exact(comp, init_a, init_b, schedule, f_plus, f_minus)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(ms.len());
    for &m in ms {
        let approx = surrogate_biprob(comp, init_a, init_b, schedule, f_plus, f_minus, m)?;
        let err = (approx - exact).norm();
        let ratio = rows.last().map(|prev: &ConvergenceRow| err / prev.abs_error);
        rows.push(ConvergenceRow { m, abs_error: err, ratio_vs_previous: ratio });
    }
    Ok(rows)
}

/// The shipped dephasing convergence witness: σ_z⊗σ_z coupling between a
/// tilted qubit and a tilted, mixed environment. Every commutator in sight
/// is nonzero, so the path sum converges at its generic first-order rate.
pub mod witness {
    use super::*;
    use crate::numeric::qubit;

    pub fn dephasing() -> (CompositeSystem, CMatrix) {
        let sys_a = QuantumSystem::new(
            qubit::sigma_x().scale(0.3) + qubit::sigma_z().scale(0.2),
        )
        .expect("valid system");
        let sys_b = QuantumSystem::new(
            qubit::sigma_x().scale(1.1) + qubit::sigma_z().scale(0.4),
        )
        .expect("valid system");
        let comp = compose(&sys_a, &sys_b, 0.8, &qubit::sigma_z(), &qubit::sigma_z())
            .expect("valid composite");
        let rho_b = qubit::ket0_proj().scale(0.8) + qubit::plus_proj().scale(0.2);
        (comp, rho_b)
    }
}

/// CSV export for convergence reports: `m,abs_error,ratio_vs_previous`.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("m,abs_error,ratio_vs_previous\n");
    for row in rows {
        let ratio = row
            .ratio_vs_previous
            .map(|r| format!("{r}"))
            .unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", row.m, row.abs_error, ratio));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{max_norm, qubit};
    use crate::system::standard::{free_qubit, qubit_x, qubit_z};
    use approx::assert_abs_diff_eq;

    fn dephasing_witness() -> CompositeSystem {
        witness::dephasing().0
    }

    #[test]
    fn compose_assembles_total_hamiltonian() {
        let sys_a = free_qubit();
        let sys_b = free_qubit();
        let comp = compose(&sys_a, &sys_b, 1.0, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        let expected = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            cr(1.0),
            cr(-1.0),
            cr(-1.0),
            cr(1.0),
        ]));
        assert!(max_norm(&(comp.total().hamiltonian() - expected)) <= 1e-14);
    }

    #[test]
    fn decoupled_spectra_are_sums() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        let mut herm = |d: usize| {
            let g = CMatrix::from_fn(d, d, |_, _| {
                numeric::c(
                    rng.sample(rand_distr::StandardNormal),
                    rng.sample(rand_distr::StandardNormal),
                )
            });
            (&g + g.adjoint()).scale(0.5)
        };
        let sys_a = QuantumSystem::new(herm(2)).unwrap();
        let sys_b = QuantumSystem::new(herm(3)).unwrap();
        let comp = compose(&sys_a, &sys_b, 0.0, &herm(2), &herm(3)).unwrap();
        let (ea, _) = numeric::eig_hermitian(sys_a.hamiltonian()).unwrap();
        let (eb, _) = numeric::eig_hermitian(sys_b.hamiltonian()).unwrap();
        let mut sums: Vec<f64> =
            ea.iter().flat_map(|a| eb.iter().map(move |b| a + b)).collect();
        sums.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (et, _) = numeric::eig_hermitian(comp.total().hamiltonian()).unwrap();
        for (a, b) in et.iter().zip(&sums) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn moments_identity_hand_cases() {
        // B qubit, V̂_B = σ_z, ρ_B = |+⟩⟨+|, Ĥ_B = 0
        let sys_a = free_qubit();
        let sys_b = free_qubit();
        let comp = compose(&sys_a, &sys_b, 1.0, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        let rho = qubit::plus_proj();
        // I⁺ = {1}, I⁻ = {}: tr(σ_z ρ) = 0
        let dev = moments_identity_check(&comp, &rho, &[0.7], &[1], &[]).unwrap();
        assert!(dev <= 1e-12, "dev {dev:e}");
        // I⁺ = {1}, I⁻ = {1}: tr(σ_z ρ σ_z) = 1
        let dev = moments_identity_check(&comp, &rho, &[0.7], &[1], &[1]).unwrap();
        assert!(dev <= 1e-12, "dev {dev:e}");
        // split validation
        assert!(matches!(
            moments_identity_check(&comp, &rho, &[0.7, 1.1], &[1], &[]),
            Err(Error::BadSplit { .. })
        ));
    }

    #[test]
    fn moments_identity_noncommuting_environment() {
        let comp = dephasing_witness();
        let rho = qubit::ket0_proj();
        let times = [0.4, 0.9, 1.3];
        // all 2^3 splits
        for mask in 0..8u32 {
            let mut i_plus = Vec::new();
            let mut i_minus = Vec::new();
            for pos in 1..=3usize {
                if mask & (1 << (pos - 1)) != 0 {
                    i_plus.push(pos);
                } else {
                    i_minus.push(pos);
                }
            }
            let dev = moments_identity_check(&comp, &rho, &times, &i_plus, &i_minus).unwrap();
            assert!(dev <= 1e-10, "split {mask:03b}: dev {dev:e}");
        }
    }

    #[test]
    fn factorization_for_independent_systems() {
        let sys_a = QuantumSystem::new(qubit::sigma_z().scale(0.6)).unwrap();
        let sys_b = QuantumSystem::new(qubit::sigma_x().scale(0.9)).unwrap();
        let comp = compose(&sys_a, &sys_b, 0.0, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        let init_a = InitializationEvent::pure(&sys_a, 0.0, &qubit_z(), 1.0).unwrap();
        let init_b = InitializationEvent::pure(&sys_b, 0.0, &qubit_x(), -1.0).unwrap();
        let pairs = vec![
            (0.5, qubit_x(), qubit_z()),
            (1.2, qubit_z(), qubit_x()),
        ];
        let dev = factorization_check(&comp, &init_a, &init_b, &pairs).unwrap();
        assert!(dev <= 1e-10, "dev {dev:e}");
        // nonzero coupling is rejected
        let coupled = compose(&sys_a, &sys_b, 0.3, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        assert!(matches!(
            factorization_check(&coupled, &init_a, &init_b, &pairs),
            Err(Error::CouplingNonzero(_))
        ));
    }

    #[test]
    fn entangled_initialization_breaks_factorization() {
        let sys_a = free_qubit();
        let sys_b = free_qubit();
        let comp = compose(&sys_a, &sys_b, 0.0, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        // Bell state |Φ⁺⟩⟨Φ⁺| on the composite space
        let mut bell = CMatrix::zeros(4, 4);
        for (i, j) in [(0usize, 0usize), (0, 3), (3, 0), (3, 3)] {
            bell[(i, j)] = cr(0.5);
        }
        let joint_init =
            InitializationEvent::from_density_matrix(comp.total(), 0.0, &bell).unwrap();
        // joint Z⊗Z readout vs the product of the maximally mixed marginals
        let mut outcomes = Vec::new();
        let mut projectors = Vec::new();
        let z = qubit_z();
        for ia in 0..2 {
            for ib in 0..2 {
                outcomes.push((ia * 2 + ib) as f64);
                projectors.push(kron(z.projector(ia), z.projector(ib)));
            }
        }
        let joint_obs = Observable::new("ZZ", outcomes, projectors).unwrap();
        let schedule = MeasurementSchedule::new(0.0, vec![(1.0, joint_obs)]).unwrap();
        let q_corr = biprob::probability(comp.total(), &joint_init, &schedule, &[0.0]).unwrap();
        // product of marginals predicts 1/4; the Bell state gives 1/2
        assert!((q_corr - 0.25).abs() > 0.2, "expected factorization breakdown");
    }

    #[test]
    fn reduced_biprob_decoupled_matches_a_only() {
        let sys_a = QuantumSystem::new(qubit::sigma_x().scale(0.7)).unwrap();
        let sys_b = QuantumSystem::new(qubit::sigma_z().scale(1.3)).unwrap();
        let comp = compose(&sys_a, &sys_b, 0.0, &qubit::sigma_z(), &qubit::sigma_x()).unwrap();
        let init_a = InitializationEvent::pure(&sys_a, 0.0, &qubit_z(), 1.0).unwrap();
        let init_b = InitializationEvent::pure(&sys_b, 0.0, &qubit_z(), -1.0).unwrap();
        let schedule =
            MeasurementSchedule::new(0.0, vec![(0.6, qubit_x()), (1.4, qubit_z())]).unwrap();
        for f in [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0]] {
            let reduced =
                reduced_biprob_exact(&comp, &init_a, &init_b, &schedule, &f, &f).unwrap();
            let direct = biprob::biprob(&sys_a, &init_a, &schedule, &f, &f).unwrap();
            assert!((reduced - direct).norm() <= 1e-12);
        }
    }

    #[test]
    fn dephasing_suppresses_coherence() {
        // λ σ_z⊗σ_z with free subsystems: X-statistics on A lose contrast
        let sys_a = free_qubit();
        let sys_b = free_qubit();
        let coupled = compose(&sys_a, &sys_b, 1.0, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        let decoupled = compose(&sys_a, &sys_b, 0.0, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        let init_a = InitializationEvent::pure(&sys_a, 0.0, &qubit_x(), 1.0).unwrap();
        let init_b = InitializationEvent::pure(&sys_b, 0.0, &qubit_x(), 1.0).unwrap();
        let schedule = MeasurementSchedule::new(0.0, vec![(0.7, qubit_x())]).unwrap();
        let p_coupled =
            reduced_biprob_exact(&coupled, &init_a, &init_b, &schedule, &[1.0], &[1.0]).unwrap();
        let p_free =
            reduced_biprob_exact(&decoupled, &init_a, &init_b, &schedule, &[1.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(p_free.re, 1.0, epsilon = 1e-12);
        assert!(p_coupled.re < 0.95, "expected dephasing, got {}", p_coupled.re);
        // diagonal entries still sum to 1
        let p_minus =
            reduced_biprob_exact(&coupled, &init_a, &init_b, &schedule, &[-1.0], &[-1.0]).unwrap();
        assert_abs_diff_eq!(p_coupled.re + p_minus.re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn surrogate_exact_when_decoupled() {
        let sys_a = QuantumSystem::new(qubit::sigma_x().scale(0.4)).unwrap();
        let sys_b = QuantumSystem::new(qubit::sigma_x().scale(1.1)).unwrap();
        let comp = compose(&sys_a, &sys_b, 0.0, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        let init_a = InitializationEvent::pure(&sys_a, 0.0, &qubit_z(), 1.0).unwrap();
        let init_b = InitializationEvent::pure(&sys_b, 0.0, &qubit_x(), 1.0).unwrap();
        let schedule = MeasurementSchedule::new(0.0, vec![(1.0, qubit_z())]).unwrap();
        let exact = reduced_biprob_exact(&comp, &init_a, &init_b, &schedule, &[1.0], &[1.0]).unwrap();
        for m in [1, 3] {
            let approx =
                surrogate_biprob(&comp, &init_a, &init_b, &schedule, &[1.0], &[1.0], m).unwrap();
            assert!((approx - exact).norm() <= 1e-12, "m={m}");
        }
    }

    #[test]
    fn surrogate_exact_for_commuting_drive() {
        // [Ĥ_A, V̂_A] = 0 and [Ĥ_B, V̂_B] = 0: no ordering error anywhere,
        // so the path sum is exact once measurements sit on step boundaries.
        let sys_a = QuantumSystem::new(qubit::sigma_z().scale(0.5)).unwrap();
        let sys_b = QuantumSystem::new(qubit::sigma_z().scale(0.9)).unwrap();
        let comp = compose(&sys_a, &sys_b, 0.8, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        let init_a = InitializationEvent::pure(&sys_a, 0.0, &qubit_x(), 1.0).unwrap();
        let init_b = InitializationEvent::pure(&sys_b, 0.0, &qubit_x(), 1.0).unwrap();
        let schedule =
            MeasurementSchedule::new(0.0, vec![(0.5, qubit_x()), (1.0, qubit_x())]).unwrap();
        for f in [[1.0, 1.0], [1.0, -1.0]] {
            let exact = reduced_biprob_exact(&comp, &init_a, &init_b, &schedule, &f, &f).unwrap();
            let approx = surrogate_biprob(&comp, &init_a, &init_b, &schedule, &f, &f, 2).unwrap();
            assert!(
                (approx - exact).norm() <= 1e-10,
                "f={f:?}: {} vs {}",
                approx,
                exact
            );
        }
    }

    #[test]
    fn surrogate_routes_agree() {
        let comp = dephasing_witness();
        let init_a =
            InitializationEvent::pure(comp.sys_a(), 0.0, &qubit_x(), 1.0).unwrap();
        let init_b =
            InitializationEvent::pure(comp.sys_b(), 0.0, &qubit_z(), 1.0).unwrap();
        let schedule =
            MeasurementSchedule::new(0.0, vec![(0.45, qubit_x()), (1.0, qubit_z())]).unwrap();
        let f = [1.0, -1.0];
        let g = [-1.0, -1.0];
        for m in [2, 3, 5] {
            let enumerated = surrogate_biprob_with_cap(
                &comp, &init_a, &init_b, &schedule, &f, &g, m, PATH_CAP,
            )
            .unwrap();
            let factorized =
                surrogate_biprob_with_cap(&comp, &init_a, &init_b, &schedule, &f, &g, m, 0)
                    .unwrap();
            assert!(
                (enumerated - factorized).norm() <= 1e-12,
                "m={m}: {enumerated} vs {factorized}"
            );
        }
    }

    #[test]
    fn surrogate_first_order_convergence() {
        let (comp, rho_b) = witness::dephasing();
        let init_a = InitializationEvent::pure(comp.sys_a(), 0.0, &qubit_x(), 1.0).unwrap();
        let init_b =
            InitializationEvent::from_density_matrix(comp.sys_b(), 0.0, &rho_b).unwrap();
        let schedule =
            MeasurementSchedule::new(0.0, vec![(0.5, qubit_x()), (1.0, qubit_z())]).unwrap();
        let rows = surrogate_convergence(
            &comp,
            &init_a,
            &init_b,
            &schedule,
            &[1.0, 1.0],
            &[-1.0, 1.0],
            &[8, 16],
        )
        .unwrap();
        assert!(rows[0].abs_error > 1e-8, "witness too weak: {:e}", rows[0].abs_error);
        let ratio = rows[1].ratio_vs_previous.unwrap();
        assert!((0.3..=0.7).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn classical_drive_special_case() {
        // [V̂_B, Ĥ_B] = 0 and ρ_B an eigenprojector of V̂_B: the B table is
        // supported on the single constant path, and the surrogate equals
        // the closed-A evolution with the matching deterministic drive.
        let sys_a = QuantumSystem::new(qubit::sigma_x().scale(0.6)).unwrap();
        let sys_b = QuantumSystem::new(qubit::sigma_z().scale(0.9)).unwrap();
        let lambda = 0.7;
        let comp = compose(&sys_a, &sys_b, lambda, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        let init_a = InitializationEvent::pure(&sys_a, 0.0, &qubit_z(), 1.0).unwrap();
        let init_b = InitializationEvent::pure(&sys_b, 0.0, &qubit_z(), 1.0).unwrap();
        let schedule = MeasurementSchedule::new(0.0, vec![(1.0, qubit_z())]).unwrap();
        // the surviving eigenvalue track is v_B = +1 (ρ_B = |0⟩⟨0|)
        let m = 4;
        let surrogate =
            surrogate_biprob(&comp, &init_a, &init_b, &schedule, &[1.0], &[1.0], m).unwrap();
        let driven = QuantumSystem::new(
            sys_a.hamiltonian() + qubit::sigma_z().scale(lambda),
        )
        .unwrap();
        let direct = biprob::probability(&driven, &init_a, &schedule, &[1.0]).unwrap();
        assert!((surrogate.re - direct).abs() <= 1e-10);
        // and the paths confirm it: all weight on the constant (+,+) pair
        let paths = enumerate_bi_trajectories(&comp, init_b.metric(), 1.0, 3, PATH_CAP).unwrap();
        let total: C64 = paths.iter().map(|p| p.weight).sum();
        assert!((total - cr(1.0)).norm() <= 1e-9);
        for p in &paths {
            let constant_plus = p.v_plus.iter().all(|&v| v == p.v_plus[0]);
            if p.weight.norm() > 1e-12 {
                assert!(constant_plus && p.v_plus == p.v_minus);
                assert_abs_diff_eq!(p.weight.re, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn bi_trajectory_weights_sum_to_one() {
        let comp = dephasing_witness();
        let rho_b = qubit::plus_proj();
        let paths = enumerate_bi_trajectories(&comp, &rho_b, 1.0, 3, PATH_CAP).unwrap();
        assert_eq!(paths.len(), 1 << 6);
        let total: C64 = paths.iter().map(|p| p.weight).sum();
        assert!((total - cr(1.0)).norm() <= 1e-9);
        assert!(matches!(
            enumerate_bi_trajectories(&comp, &rho_b, 1.0, 20, 1000),
            Err(Error::PathCapExceeded { .. })
        ));
    }

    #[test]
    fn exact_map_identity_and_unitary_limits() {
        let comp = dephasing_witness();
        let rho_b = qubit::plus_proj();
        // t = 0 is the identity superoperator
        let s0 = dynamical_map_exact(&comp, &rho_b, 0.0).unwrap();
        assert!(max_norm(&(&s0 - numeric::identity(4))) <= 1e-12);
        // λ = 0 is unitary conjugation by exp(−itĤ_A)
        let sys_a = QuantumSystem::new(qubit::sigma_x().scale(0.8)).unwrap();
        let free = compose(&sys_a, comp.sys_b(), 0.0, &qubit::sigma_z(), &qubit::sigma_z())
            .unwrap();
        let s = dynamical_map_exact(&free, &rho_b, 1.3).unwrap();
        let u = sys_a.evolution(1.3, 0.0);
        let rho = qubit::ket0_proj();
        let via_map = apply_superop(&s, &rho).unwrap();
        let direct = &u * &rho * u.adjoint();
        assert!(max_norm(&(via_map - direct)) <= 1e-12);
    }

    #[test]
    fn exact_map_is_cptp() {
        let comp = dephasing_witness();
        let rho_b = qubit::plus_proj();
        let s = dynamical_map_exact(&comp, &rho_b, 1.0).unwrap();
        let (min_eig, trace_dev) = choi_cptp_check(&s).unwrap();
        assert!(min_eig >= -1e-10, "min Choi eigenvalue {min_eig:e}");
        assert!(trace_dev <= 1e-12, "trace deviation {trace_dev:e}");
    }

    #[test]
    fn choi_reference_points() {
        // identity channel: Choi eigenvalues {d, 0, ...}
        let (min_eig, trace_dev) = choi_cptp_check(&numeric::identity(4)).unwrap();
        assert!(min_eig.abs() <= 1e-12);
        assert!(trace_dev <= 1e-12);
        // transpose map: the textbook non-CP witness, min eigenvalue −1
        let mut transpose = CMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                transpose[(j * 2 + i, i * 2 + j)] = cr(1.0);
            }
        }
        let (min_eig, trace_dev) = choi_cptp_check(&transpose).unwrap();
        assert!(min_eig <= -0.5, "transpose map min eigenvalue {min_eig}");
        assert!(trace_dev <= 1e-12);
        // unitary channel: Choi rank 1
        let u = expm_hermitian_phase(&qubit::sigma_x(), 0.9).unwrap();
        let superop = kron(&u, &u.map(|z| z.conj()));
        let (min_eig, _) = choi_cptp_check(&superop).unwrap();
        assert!(min_eig.abs() <= 1e-10);
        assert!(matches!(choi_cptp_check(&numeric::identity(3)), Err(Error::BadDimension(_))));
    }

    #[test]
    fn map_routes_agree_and_converge() {
        let (comp, rho_b) = witness::dephasing();
        for m in [2, 4] {
            let enumerated = dynamical_map_path_sum_with_cap(&comp, &rho_b, 1.0, m, PATH_CAP).unwrap();
            let factorized = dynamical_map_path_sum_with_cap(&comp, &rho_b, 1.0, m, 0).unwrap();
            assert!(max_norm(&(&enumerated - &factorized)) <= 1e-12, "m={m}");
        }
        let rows = map_convergence(&comp, &rho_b, 1.0, &[8, 16]).unwrap();
        assert!(rows[0].abs_error > 1e-8);
        let ratio = rows[1].ratio_vs_previous.unwrap();
        assert!((0.3..=0.7).contains(&ratio), "ratio {ratio}");
        // λ = 0: exact at any m
        let sys_a = QuantumSystem::new(qubit::sigma_x().scale(0.8)).unwrap();
        let free =
            compose(&sys_a, comp.sys_b(), 0.0, &qubit::sigma_z(), &qubit::sigma_z()).unwrap();
        let exact = dynamical_map_exact(&free, &rho_b, 1.0).unwrap();
        let approx = dynamical_map_path_sum(&free, &rho_b, 1.0, 1).unwrap();
        assert!(max_norm(&(&approx - &exact)) <= 1e-12);
    }
}
