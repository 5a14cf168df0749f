//! The master-object layer: space-time coordinates for observables.
//!
//! A reference basis {|η⟩} plus the generalized Gell-Mann generators T⃗̂
//! turn any observable into a point φ⃗ on the group manifold: the frame
//! unitary e^{iT⃗̂·φ⃗} maps reference vectors onto the observable's
//! eigenvectors. Combined with time evolution this labels projectors with
//! coordinates τ = (t, φ⃗),
//!
//!   P̂_τ(η) = e^{iĤt} e^{iT⃗̂·φ⃗} |η⟩⟨η| e^{−iT⃗̂·φ⃗} e^{−iĤt},
//!
//! and the system bi-probabilities over those coordinates generate every
//! observable-associated bi-probability as a convex combination, as well as
//! the multi-time correlations of the standard formalism.

use crate::biprob;
use crate::error::{Error, Result};
use crate::numeric::{
    self, cr, eig_hermitian, expm_hermitian_phase, require_hermitian, CMatrix, C64,
};
use crate::system::{
    InitializationEvent, MeasurementSchedule, Observable, QuantumSystem,
};

/// d² − 1 Hermitian traceless generators with tr(T̂_ℓ T̂_m) = 2δ_{ℓm};
/// the generalized Gell-Mann family, which specializes to the Pauli
/// matrices at d = 2.
#[derive(Debug, Clone)]
pub struct GeneratorBasis {
    dim: usize,
    generators: Vec<CMatrix>,
}

pub fn generator_basis(dim: usize) -> Result<GeneratorBasis> {
    if dim < 2 {
        return Err(Error::BadDimension(format!("generator basis needs d >= 2, got {dim}")));
    }
    let mut generators = Vec::with_capacity(dim * dim - 1);
    for j in 0..dim {
        for k in (j + 1)..dim {
            let mut sym = CMatrix::zeros(dim, dim);
            sym[(j, k)] = cr(1.0);
            sym[(k, j)] = cr(1.0);
            generators.push(sym);
        }
    }
    for j in 0..dim {
        for k in (j + 1)..dim {
            let mut asym = CMatrix::zeros(dim, dim);
            asym[(j, k)] = numeric::c(0.0, -1.0);
            asym[(k, j)] = numeric::c(0.0, 1.0);
            generators.push(asym);
        }
    }
    for l in 1..dim {
        let norm = (2.0 / (l as f64 * (l + 1) as f64)).sqrt();
        let mut diag = CMatrix::zeros(dim, dim);
        for j in 0..l {
            diag[(j, j)] = cr(norm);
        }
        diag[(l, l)] = cr(-(l as f64) * norm);
        generators.push(diag);
    }
    Ok(GeneratorBasis { dim, generators })
}

impl GeneratorBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn generator(&self, l: usize) -> &CMatrix {
        &self.generators[l]
    }

    pub fn generators(&self) -> &[CMatrix] {
        &self.generators
    }
}

/// Frame unitary e^{i T⃗̂·φ⃗}.
pub fn coords_to_unitary(basis: &GeneratorBasis, phi: &[f64]) -> Result<CMatrix> {
    if phi.len() != basis.len() {
        return Err(Error::LengthMismatch { expected: basis.len(), got: phi.len() });
    }
    let mut gen = CMatrix::zeros(basis.dim(), basis.dim());
    for (g, &p) in basis.generators().iter().zip(phi) {
        gen += g.scale(p);
    }
    expm_hermitian_phase(&gen, -1.0)
}

/// A point of the coordinate manifold: time plus frame angles.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeCoordinate {
    pub t: f64,
    pub phi: Vec<f64>,
}

impl SpaceTimeCoordinate {
    pub fn new(t: f64, phi: Vec<f64>) -> Self {
        Self { t, phi }
    }
}

/// An observable in coordinate form: frame angles and the map from
/// reference-basis index η (zero-based) to the outcome value f(η).
#[derive(Debug, Clone)]
pub struct CoordinateObservable {
    pub coord: SpaceTimeCoordinate,
    pub index_map: Vec<f64>,
    /// true when an outcome has multiplicity > 1, in which case φ⃗ is one
    /// of infinitely many valid gauges (any in-cell rotation works)
    pub degenerate: bool,
}

/// Principal Hermitian logarithm of a (numerically) unitary matrix:
/// A with exp(iA) = u up to a global phase. Uses only Hermitian
/// eigendecompositions via the commuting pair C = (u+u†)/2, S = (u−u†)/2i.
fn unitary_log(u: &CMatrix) -> Result<CMatrix> {
    let dim = u.nrows();
    let c_part = (u + u.adjoint()).scale(0.5);
    let s_part = (u - u.adjoint()).map(|z| z / numeric::c(0.0, 2.0));
    let (c_values, c_vectors) = eig_hermitian(&c_part)?;
    let mut log = CMatrix::zeros(dim, dim);
    let tol = 1e-8 * (1.0 + c_values.iter().fold(0.0f64, |a, &b| a.max(b.abs())));
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && c_values[end] - c_values[end - 1] <= tol {
            end += 1;
        }
        let width = end - start;
        let block = c_vectors.columns(start, width).into_owned();
        let s_block = block.adjoint() * &s_part * &block;
        let (s_values, s_vectors) = eig_hermitian(&s_block)?;
        let combined = &block * &s_vectors;
        for (k, &s_val) in s_values.iter().enumerate() {
            let v = combined.column(k);
            let c_val = (v.adjoint() * &c_part * &v)[(0, 0)].re;
            let theta = s_val.atan2(c_val);
            log += (&v * v.adjoint()).scale(theta);
        }
        start = end;
    }
    Ok(log)
}

/// Solve the eigenproblem of Σ f·P̂(f) for the frame angles and the index
/// map. Degenerate outcomes admit any in-cell rotation; the contract is the
/// round-trip property (see [`roundtrip_residual`]), not uniqueness of φ⃗.
pub fn observable_to_coords(
    basis: &GeneratorBasis,
    obs: &Observable,
) -> Result<CoordinateObservable> {
    if obs.dim() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observable `{}` has dim {}, basis has {}",
            obs.name(),
            obs.dim(),
            basis.dim()
        )));
    }
    let dim = obs.dim();
    let f_hat = obs.hermitian_form();
    let (_, vectors) = eig_hermitian(&f_hat)?;
    // index map: each eigenvector belongs to the outcome whose projector
    // leaves it invariant
    let mut index_map = Vec::with_capacity(dim);
    for eta in 0..dim {
        let v = vectors.column(eta);
        let mut best = 0;
        let mut best_overlap = -1.0;
        for (i, p) in obs.projectors().iter().enumerate() {
            let overlap = (v.adjoint() * p * &v)[(0, 0)].re;
            if overlap > best_overlap {
                best_overlap = overlap;
                best = i;
            }
        }
        index_map.push(obs.outcomes()[best]);
    }
    // strip the determinant phase, then take the principal log
    let det = vectors.determinant();
    let phase = det / cr(det.norm());
    let stripped = vectors.map(|z| z * phase.conj().powf(1.0 / dim as f64));
    let log = unitary_log(&stripped)?;
    let phi = basis
        .generators()
        .iter()
        .map(|t| (numeric::trace(&(t * &log)).re) / 2.0)
        .collect();
    let degenerate = (0..obs.len()).any(|i| {
        (numeric::trace(obs.projector(i)).re - 1.0).abs() > 0.5
    });
    Ok(CoordinateObservable {
        coord: SpaceTimeCoordinate::new(0.0, phi),
        index_map,
        degenerate,
    })
}

/// Max residual ‖(Σ f P̂(f) − f(η))·e^{iT⃗̂·φ⃗}|η⟩‖ over η: how well the
/// coordinate form reproduces the observable's eigenproblem.
pub fn roundtrip_residual(
    basis: &GeneratorBasis,
    obs: &Observable,
    co: &CoordinateObservable,
) -> Result<f64> {
    let u = coords_to_unitary(basis, &co.coord.phi)?;
    let f_hat = obs.hermitian_form();
    let mut worst: f64 = 0.0;
    for eta in 0..obs.dim() {
        let v = u.column(eta).into_owned();
        let resid = &f_hat * &v - &v * cr(co.index_map[eta]);
        worst = worst.max(resid.norm());
    }
    Ok(worst)
}

/// Frame matrices W_j = e^{iĤt_j} e^{iT⃗̂·φ⃗_j}; column η of W_j is the
/// vector behind P̂_{τ_j}(η).
fn frames(
    sys: &QuantumSystem,
    basis: &GeneratorBasis,
    coords: &[SpaceTimeCoordinate],
) -> Result<Vec<CMatrix>> {
    coords
        .iter()
        .map(|tau| {
            let u_frame = coords_to_unitary(basis, &tau.phi)?;
            Ok(sys.evolution(tau.t, 0.0).adjoint() * u_frame)
        })
        .collect()
}

fn check_eta(dim: usize, etas: &[usize]) -> Result<()> {
    for &eta in etas {
        if eta >= dim {
            return Err(Error::IndexOutOfRange { index: eta, dim });
        }
    }
    Ok(())
}

/// The system bi-probability over space-time coordinates,
///
///   Q_{τ⃗|τ₀}(η⃗⁺, η⃗⁻ | η₀⁺, η₀⁻)
///     = tr[(∏_{j=n}^{0} P̂_{τ_j}(η_j⁺)) (∏_{j=0}^{n} P̂_{τ_j}(η_j⁻))].
///
/// `coords[0]` is τ₀; `eta_plus`/`eta_minus` hold η_1..η_n (zero-based
/// reference indices).
pub fn system_biprob(
    sys: &QuantumSystem,
    basis: &GeneratorBasis,
    coords: &[SpaceTimeCoordinate],
    eta_plus: &[usize],
    eta_minus: &[usize],
    eta0_plus: usize,
    eta0_minus: usize,
) -> Result<C64> {
    if coords.is_empty() {
        return Err(Error::LengthMismatch { expected: 1, got: 0 });
    }
    let n = coords.len() - 1;
    if eta_plus.len() != n || eta_minus.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: eta_plus.len().max(eta_minus.len()) });
    }
    let d = sys.dim();
    check_eta(d, eta_plus)?;
    check_eta(d, eta_minus)?;
    check_eta(d, &[eta0_plus, eta0_minus])?;
    let ws = frames(sys, basis, coords)?;
    let projector = |j: usize, eta: usize| -> CMatrix {
        let v = ws[j].column(eta);
        &v * v.adjoint()
    };
    let mut chain_plus = projector(0, eta0_plus);
    for j in 1..=n {
        chain_plus = projector(j, eta_plus[j - 1]) * chain_plus;
    }
    let mut chain_minus = projector(0, eta0_minus);
    for j in 1..=n {
        chain_minus = chain_minus * projector(j, eta_minus[j - 1]);
    }
    Ok(numeric::trace(&(chain_plus * chain_minus)))
}

/// Scalar-overlap evaluation of the same quantity for enumeration-heavy
/// sums: with rank-1 projectors the trace collapses to a product of frame
/// overlaps and two boundary deltas.
struct OverlapChain {
    /// O_j = W_j† W_{j−1}
    overlaps: Vec<CMatrix>,
}

impl OverlapChain {
    fn new(ws: &[CMatrix]) -> Self {
        let overlaps = ws.windows(2).map(|w| w[1].adjoint() * &w[0]).collect();
        Self { overlaps }
    }

    fn eval(
        &self,
        eta_plus: &[usize],
        eta_minus: &[usize],
        eta0_plus: usize,
        eta0_minus: usize,
    ) -> C64 {
        let n = eta_plus.len();
        if eta0_plus != eta0_minus {
            return C64::default();
        }
        if n > 0 && eta_plus[n - 1] != eta_minus[n - 1] {
            return C64::default();
        }
        let mut value = cr(1.0);
        let mut prev_plus = eta0_plus;
        let mut prev_minus = eta0_minus;
        for j in 0..n {
            let o = &self.overlaps[j];
            value *= o[(eta_plus[j], prev_plus)] * o[(eta_minus[j], prev_minus)].conj();
            prev_plus = eta_plus[j];
            prev_minus = eta_minus[j];
        }
        value
    }
}

/// Coordinate data of an initialization event: the frame φ⃗₀ at t₀ and the
/// weight distribution ρ(η) over reference indices.
fn init_coordinates(
    sys: &QuantumSystem,
    basis: &GeneratorBasis,
    init: &InitializationEvent,
) -> Result<(SpaceTimeCoordinate, Vec<f64>)> {
    let u0 = sys.evolution(init.time(), 0.0);
    let rho_ref = &u0 * init.metric() * u0.adjoint();
    let rho_obs = spectral_frame(basis, &rho_ref)?;
    Ok((
        SpaceTimeCoordinate::new(init.time(), rho_obs.0),
        rho_obs.1,
    ))
}

/// Spectral frame of a Hermitian matrix: angles φ⃗ whose unitary columns are
/// its eigenvectors, plus the eigenvalue of each column.
fn spectral_frame(basis: &GeneratorBasis, m: &CMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = require_hermitian(m)?;
    let (values, vectors) = eig_hermitian(&m)?;
    let dim = m.nrows();
    let det = vectors.determinant();
    let phase = det / cr(det.norm());
    let stripped = vectors.map(|z| z * phase.conj().powf(1.0 / dim as f64));
    let log = unitary_log(&stripped)?;
    let phi = basis
        .generators()
        .iter()
        .map(|t| (numeric::trace(&(t * &log)).re) / 2.0)
        .collect();
    Ok((phi, values))
}

/// Every index assignment of length `n` over `d` letters.
fn assignments(d: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * d);
        for a in &out {
            for k in 0..d {
                let mut b = a.clone();
                b.push(k);
                next.push(b);
            }
        }
        out = next;
    }
    out
}

/// The decomposition identity: an observable-associated bi-probability is
/// the index-map-filtered convex combination of system bi-probabilities.
/// Returns |LHS − RHS|.
pub fn decomposition_check(
    sys: &QuantumSystem,
    basis: &GeneratorBasis,
    init: &InitializationEvent,
    schedule: &MeasurementSchedule,
    f_plus: &[f64],
    f_minus: &[f64],
) -> Result<f64> {
    let lhs = biprob::biprob(sys, init, schedule, f_plus, f_minus)?;
    let (tau0, rho_weights) = init_coordinates(sys, basis, init)?;
    let mut coords = vec![tau0];
    let mut index_maps = Vec::new();
    for (t, obs) in schedule.entries() {
        let co = observable_to_coords(basis, obs)?;
        coords.push(SpaceTimeCoordinate::new(*t, co.coord.phi.clone()));
        index_maps.push(co.index_map);
    }
    let ws = frames(sys, basis, &coords)?;
    let chain = OverlapChain::new(&ws);
    let d = sys.dim();
    let n = schedule.len();
    let mut rhs = C64::default();
    let all = assignments(d, n);
    for eta_plus in &all {
        if !matches_values(&index_maps, eta_plus, f_plus) {
            continue;
        }
        for eta_minus in &all {
            if !matches_values(&index_maps, eta_minus, f_minus) {
                continue;
            }
            for eta0 in 0..d {
                if rho_weights[eta0] == 0.0 {
                    continue;
                }
                rhs += chain.eval(eta_plus, eta_minus, eta0, eta0) * cr(rho_weights[eta0]);
            }
        }
    }
    Ok((lhs - rhs).norm())
}

fn matches_values(index_maps: &[Vec<f64>], etas: &[usize], values: &[f64]) -> bool {
    etas.iter()
        .zip(values)
        .enumerate()
        .all(|(j, (&eta, &v))| index_maps[j][eta] == v)
}

/// The multi-time correlation
/// tr[𝒯{∏_{I⁺} F̂_j(t_j)} ρ̂ (𝒯{∏_{I⁻} F̂_k(t_k)})†] with Heisenberg-picture
/// observables F̂(t) = e^{iĤt} F̂ e^{−iĤt}. Split positions are 1-based into
/// `times`; an index may appear on both branches.
pub fn multitime_correlation(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    times: &[f64],
    observables: &[CMatrix],
    i_plus: &[usize],
    i_minus: &[usize],
) -> Result<C64> {
    let n = times.len();
    if observables.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: observables.len() });
    }
    validate_split(n, i_plus, i_minus)?;
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidState("times must be strictly increasing".into()));
    }
    let heisenberg: Vec<CMatrix> = times
        .iter()
        .zip(observables)
        .map(|(&t, f)| {
            let f = require_hermitian(f)?;
            let u = sys.evolution(t, 0.0);
            Ok(u.adjoint() * f * u)
        })
        .collect::<Result<Vec<_>>>()?;
    let ordered = |block: &[usize]| -> CMatrix {
        let mut sorted = block.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let mut acc = numeric::identity(sys.dim());
        for &i in &sorted {
            acc = acc * &heisenberg[i - 1];
        }
        acc
    };
    let t_plus = ordered(i_plus);
    let t_minus = ordered(i_minus);
    Ok(numeric::trace(&(t_plus * init.metric() * t_minus.adjoint())))
}

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
    if !covered.iter().all(|&c| c) {
        return Err(Error::BadSplit { n });
    }
    Ok(())
}

/// The same correlation evaluated in moments form: eigenvalue-weighted
/// sums of system bi-probabilities over the coordinate frames of the
/// observables. Agrees with [`multitime_correlation`] identically.
pub fn multitime_correlation_moments(
    sys: &QuantumSystem,
    basis: &GeneratorBasis,
    init: &InitializationEvent,
    times: &[f64],
    observables: &[CMatrix],
    i_plus: &[usize],
    i_minus: &[usize],
) -> Result<C64> {
    let n = times.len();
    if observables.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: observables.len() });
    }
    validate_split(n, i_plus, i_minus)?;
    let (tau0, rho_weights) = init_coordinates(sys, basis, init)?;
    let mut coords = vec![tau0];
    let mut value_maps: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (&t, f) in times.iter().zip(observables) {
        let (phi, values) = spectral_frame(basis, f)?;
        coords.push(SpaceTimeCoordinate::new(t, phi));
        value_maps.push(values);
    }
    let ws = frames(sys, basis, &coords)?;
    let chain = OverlapChain::new(&ws);
    let d = sys.dim();
    let all = assignments(d, n);
    let mut acc = C64::default();
    for eta_plus in &all {
        for eta_minus in &all {
            let mut factor = 1.0;
            for &i in i_plus {
                factor *= value_maps[i - 1][eta_plus[i - 1]];
            }
            for &i in i_minus {
                factor *= value_maps[i - 1][eta_minus[i - 1]];
            }
            if factor == 0.0 {
                continue;
            }
            let mut weighted = C64::default();
            for eta0 in 0..d {
                if rho_weights[eta0] == 0.0 {
                    continue;
                }
                weighted += chain.eval(eta_plus, eta_minus, eta0, eta0) * cr(rho_weights[eta0]);
            }
            acc += weighted * cr(factor);
        }
    }
    Ok(acc)
}

/// Classical-limit witness of repeated measurements of one observable:
/// total off-diagonal bi-probability mass and the worst interior
/// marginalization deviation. Both vanish for commuting instances.
pub fn classical_limit_witness(
    sys: &QuantumSystem,
    init: &InitializationEvent,
    obs: &Observable,
    times: &[f64],
) -> Result<(f64, f64)> {
    use std::collections::BTreeMap;
    let entries: Vec<_> = times.iter().map(|&t| (t, obs.clone())).collect();
    let schedule = MeasurementSchedule::new(init.time(), entries)?;
    let table = biprob::full_table(sys, init, &schedule)?;
    let mut offdiag_mass = 0.0;
    for (plus, minus, v) in table.iter() {
        if plus != minus {
            offdiag_mass += v.norm();
        }
    }
    let n = schedule.len();
    let mut consistency_dev: f64 = 0.0;
    for j in 1..n {
        let drop = n - j;
        let reduced_schedule = schedule.without_entry(j - 1);
        let reduced = biprob::full_table(sys, init, &reduced_schedule)?;
        let mut marginal: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (plus, minus, v) in table.iter() {
            if plus != minus {
                continue;
            }
            let mut key = plus.clone();
            key.remove(drop);
            *marginal.entry(key).or_default() += v.re;
        }
        for (plus, minus, v) in reduced.iter() {
            if plus != minus {
                continue;
            }
            let acc = marginal.get(plus).copied().unwrap_or_default();
            consistency_dev = consistency_dev.max((acc - v.re).abs());
        }
    }
    Ok((offdiag_mass, consistency_dev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{max_norm, qubit};
    use crate::system::observable_from_matrix;
    use crate::system::standard::{free_qubit, qubit_x, qubit_z, rabi_qubit};
    use approx::assert_abs_diff_eq;

    #[test]
    fn gell_mann_specializes_to_pauli() {
        let basis = generator_basis(2).unwrap();
        assert_eq!(basis.len(), 3);
        assert!(max_norm(&(basis.generator(0) - qubit::sigma_x())) == 0.0);
        assert!(max_norm(&(basis.generator(1) - qubit::sigma_y())) == 0.0);
        assert!(max_norm(&(basis.generator(2) - qubit::sigma_z())) == 0.0);
    }

    #[test]
    fn generator_basis_orthogonality() {
        for d in 2..=5 {
            let basis = generator_basis(d).unwrap();
            assert_eq!(basis.len(), d * d - 1);
            for (i, a) in basis.generators().iter().enumerate() {
                assert!(numeric::trace(a).norm() <= 1e-12, "d={d}: generator {i} not traceless");
                assert!(numeric::max_asymmetry(a) <= 1e-14);
                for (j, b) in basis.generators().iter().enumerate() {
                    let g = numeric::trace(&(a * b)).re;
                    let expected = if i == j { 2.0 } else { 0.0 };
                    assert_abs_diff_eq!(g, expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn coords_to_unitary_reference_points() {
        let basis = generator_basis(2).unwrap();
        let eye = coords_to_unitary(&basis, &[0.0, 0.0, 0.0]).unwrap();
        assert!(max_norm(&(eye - numeric::identity(2))) <= 1e-14);
        let u = coords_to_unitary(&basis, &[std::f64::consts::FRAC_PI_2, 0.0, 0.0]).unwrap();
        let expected = qubit::sigma_x() * numeric::c(0.0, 1.0);
        assert!(max_norm(&(u - expected)) <= 1e-12);
        assert!(matches!(
            coords_to_unitary(&basis, &[0.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn roundtrip_diagonal_and_x() {
        let basis = generator_basis(2).unwrap();
        let z = qubit_z();
        let co = observable_to_coords(&basis, &z).unwrap();
        assert!(roundtrip_residual(&basis, &z, &co).unwrap() <= 1e-12);
        // ascending eigenvalues: η = 0 carries outcome −1, η = 1 carries +1
        assert_eq!(co.index_map, vec![-1.0, 1.0]);
        let x = qubit_x();
        let co = observable_to_coords(&basis, &x).unwrap();
        assert!(roundtrip_residual(&basis, &x, &co).unwrap() <= 1e-12);
        assert!(!co.degenerate);
    }

    #[test]
    fn roundtrip_random_and_degenerate() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(23);
        let basis = generator_basis(3).unwrap();
        let sys = QuantumSystem::new(CMatrix::zeros(3, 3)).unwrap();
        for _ in 0..5 {
            let g = CMatrix::from_fn(3, 3, |_, _| {
                numeric::c(
                    rng.sample(rand_distr::StandardNormal),
                    rng.sample(rand_distr::StandardNormal),
                )
            });
            let m = (&g + g.adjoint()).scale(0.5);
            let obs = observable_from_matrix(&sys, "F", &m).unwrap();
            let co = observable_to_coords(&basis, &obs).unwrap();
            let resid = roundtrip_residual(&basis, &obs, &co).unwrap();
            assert!(resid <= 1e-9, "residual {resid:e}");
        }
        // degenerate spectrum: diag(1, 1, 3)
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            cr(1.0),
            cr(1.0),
            cr(3.0),
        ]));
        let obs = observable_from_matrix(&sys, "D", &m).unwrap();
        let co = observable_to_coords(&basis, &obs).unwrap();
        assert!(co.degenerate);
        assert!(roundtrip_residual(&basis, &obs, &co).unwrap() <= 1e-9);
        assert_eq!(co.index_map, vec![1.0, 1.0, 3.0]);
    }

    #[test]
    fn system_biprob_projector_idempotence() {
        let sys = free_qubit();
        let basis = generator_basis(2).unwrap();
        let tau = SpaceTimeCoordinate::new(0.0, vec![0.4, -0.3, 0.9]);
        let coords = vec![tau.clone(), tau.clone(), tau.clone()];
        // all coordinates equal, constant matching indices: 1 on the
        // initial index, 0 otherwise
        for eta0 in 0..2 {
            for eta in 0..2 {
                let q = system_biprob(&sys, &basis, &coords, &[eta, eta], &[eta, eta], eta0, eta0)
                    .unwrap();
                let expected = if eta == eta0 { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(q.re, expected, epsilon = 1e-12);
                assert_abs_diff_eq!(q.im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn system_biprob_normalization_and_causality() {
        let sys = rabi_qubit();
        let basis = generator_basis(2).unwrap();
        let coords = vec![
            SpaceTimeCoordinate::new(0.0, vec![0.1, 0.2, -0.4]),
            SpaceTimeCoordinate::new(0.7, vec![1.0, -0.2, 0.3]),
            SpaceTimeCoordinate::new(1.3, vec![-0.6, 0.5, 0.0]),
        ];
        let mut total = C64::default();
        for ep in assignments(2, 2) {
            for em in assignments(2, 2) {
                let q = system_biprob(&sys, &basis, &coords, &ep, &em, 0, 0).unwrap();
                // final-index delta via cyclicity
                if ep[1] != em[1] {
                    assert!(q.norm() <= 1e-14);
                }
                total += q;
            }
        }
        assert_abs_diff_eq!(total.re, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(total.im, 0.0, epsilon = 1e-12);
        // mismatched initial indices vanish by adjacency
        let q = system_biprob(&sys, &basis, &coords, &[0, 1], &[0, 1], 0, 1).unwrap();
        assert!(q.norm() <= 1e-14);
    }

    #[test]
    fn overlap_chain_matches_matrix_route() {
        let sys = rabi_qubit();
        let basis = generator_basis(2).unwrap();
        let coords = vec![
            SpaceTimeCoordinate::new(0.0, vec![0.3, -0.1, 0.2]),
            SpaceTimeCoordinate::new(0.5, vec![0.9, 0.4, -0.7]),
            SpaceTimeCoordinate::new(1.1, vec![-0.2, 0.8, 0.1]),
        ];
        let ws = frames(&sys, &basis, &coords).unwrap();
        let chain = OverlapChain::new(&ws);
        for ep in assignments(2, 2) {
            for em in assignments(2, 2) {
                for e0p in 0..2 {
                    for e0m in 0..2 {
                        let direct =
                            system_biprob(&sys, &basis, &coords, &ep, &em, e0p, e0m).unwrap();
                        let fast = chain.eval(&ep, &em, e0p, e0m);
                        assert!((direct - fast).norm() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn decomposition_reproduces_worked_table() {
        let sys = free_qubit();
        let basis = generator_basis(2).unwrap();
        let z = qubit_z();
        let init = InitializationEvent::pure(&sys, 0.0, &z, 1.0).unwrap();
        let schedule =
            MeasurementSchedule::new(0.0, vec![(1.0, qubit_x()), (2.0, qubit_z())]).unwrap();
        for f_plus in [[1.0, -1.0], [-1.0, -1.0]] {
            for f_minus in [[1.0, -1.0], [-1.0, -1.0]] {
                let dev =
                    decomposition_check(&sys, &basis, &init, &schedule, &f_plus, &f_minus)
                        .unwrap();
                assert!(dev <= 1e-12, "dev {dev:e}");
            }
        }
    }

    #[test]
    fn decomposition_single_time_diagonal() {
        let sys = rabi_qubit();
        let basis = generator_basis(2).unwrap();
        let z = qubit_z();
        let init = InitializationEvent::pure(&sys, 0.0, &z, 1.0).unwrap();
        let schedule = MeasurementSchedule::new(0.0, vec![(0.5, z.clone())]).unwrap();
        let dev = decomposition_check(&sys, &basis, &init, &schedule, &[1.0], &[1.0]).unwrap();
        assert!(dev <= 1e-12);
    }

    #[test]
    fn multitime_correlation_hand_values() {
        let sys = free_qubit();
        let z = qubit_z();
        let init = InitializationEvent::pure(&sys, 0.0, &z, 1.0).unwrap();
        // single time, I⁺ = {1}: expectation value tr(σ_x ρ) = 0
        let c = multitime_correlation(&sys, &init, &[1.0], &[qubit::sigma_x()], &[1], &[])
            .unwrap();
        assert!(c.norm() <= 1e-14);
        // I⁺ = I⁻ = {1}: tr(σ_x ρ σ_x) = 1
        let c = multitime_correlation(&sys, &init, &[1.0], &[qubit::sigma_x()], &[1], &[1])
            .unwrap();
        assert_abs_diff_eq!(c.re, 1.0, epsilon = 1e-14);
        assert!(matches!(
            multitime_correlation(&sys, &init, &[1.0, 2.0], &[qubit::sigma_x()], &[1], &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn moments_form_matches_direct() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(31);
        let basis = generator_basis(2).unwrap();
        let sys = rabi_qubit();
        let z = qubit_z();
        let init =
            InitializationEvent::from_weights(&sys, 0.0, &[(&z, 1.0, 0.6), (&z, -1.0, 0.4)])
                .unwrap();
        let times = [0.4, 0.9];
        let mut herm = || {
            let g = CMatrix::from_fn(2, 2, |_, _| {
                numeric::c(
                    rng.sample(rand_distr::StandardNormal),
                    rng.sample(rand_distr::StandardNormal),
                )
            });
            (&g + g.adjoint()).scale(0.5)
        };
        let observables = [herm(), herm()];
        for (i_plus, i_minus) in [
            (vec![1, 2], vec![]),
            (vec![2], vec![1]),
            (vec![1], vec![2]),
            (vec![1, 2], vec![1, 2]),
        ] {
            let direct =
                multitime_correlation(&sys, &init, &times, &observables, &i_plus, &i_minus)
                    .unwrap();
            let moments = multitime_correlation_moments(
                &sys,
                &basis,
                &init,
                &times,
                &observables,
                &i_plus,
                &i_minus,
            )
            .unwrap();
            assert!(
                (direct - moments).norm() <= 1e-10,
                "split {i_plus:?}/{i_minus:?}: {direct} vs {moments}"
            );
        }
    }

    #[test]
    fn projector_observables_reproduce_biprob_diagonal() {
        // with I⁻ = ∅ and projector observables the correlation is the
        // probability of the outcome sequence
        let sys = free_qubit();
        let z = qubit_z();
        let x = qubit_x();
        let init = InitializationEvent::pure(&sys, 0.0, &z, 1.0).unwrap();
        let schedule =
            MeasurementSchedule::new(0.0, vec![(1.0, x.clone()), (2.0, z.clone())]).unwrap();
        let f = [1.0, 1.0];
        let p = biprob::probability(&sys, &init, &schedule, &f).unwrap();
        // Ê-style split: both projector chains on both branches
        let observables = [x.projector(0).clone(), z.projector(0).clone()];
        let c = multitime_correlation(
            &sys,
            &init,
            &[1.0, 2.0],
            &observables,
            &[1, 2],
            &[1, 2],
        )
        .unwrap();
        assert_abs_diff_eq!(c.re, p, epsilon = 1e-12);
        assert_abs_diff_eq!(c.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn classical_limit_commuting_and_witness() {
        // commuting: Ĥ = σ_z, Z observable, diagonal ρ̂
        let sys = QuantumSystem::new(qubit::sigma_z()).unwrap();
        let z = qubit_z();
        let init =
            InitializationEvent::from_weights(&sys, 0.0, &[(&z, 1.0, 0.3), (&z, -1.0, 0.7)])
                .unwrap();
        let (offdiag, inconsistency) =
            classical_limit_witness(&sys, &init, &z, &[0.5, 1.1, 1.8]).unwrap();
        assert!(offdiag <= 1e-12, "offdiag {offdiag:e}");
        assert!(inconsistency <= 1e-12, "inconsistency {inconsistency:e}");
        // the X-then-Z witness: off-diagonal mass 1, inconsistency 1/2
        let free = free_qubit();
        let init0 = InitializationEvent::pure(&free, 0.0, &z, 1.0).unwrap();
        let x = qubit_x();
        let schedule =
            MeasurementSchedule::new(0.0, vec![(1.0, x.clone()), (2.0, z.clone())]).unwrap();
        let table = biprob::full_table(&free, &init0, &schedule).unwrap();
        let mut offdiag = 0.0;
        for (p, m, v) in table.iter() {
            if p != m {
                offdiag += v.norm();
            }
        }
        assert_abs_diff_eq!(offdiag, 1.0, epsilon = 1e-12);
    }
}
