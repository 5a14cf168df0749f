//! Seeded random instance generation for the check suites.
//!
//! Hermitian draws are (G + G†)/2 with i.i.d. standard-normal entries from
//! a 64-bit-seeded ChaCha12 stream; observables come from eigenbases of
//! random Hermitians. Same seed, same platform: same instances.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::numeric::{c, eig_hermitian, CMatrix};
use crate::system::{
    InitializationEvent, MeasurementSchedule, Observable, QuantumSystem, Resolution,
};

/// Identifier of the generator algorithm, recorded in suite reports.
pub const RNG_ALGORITHM: &str = "chacha12";

pub type SeededRng = ChaCha12Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn random_hermitian(rng: &mut SeededRng, dim: usize) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    (&g + g.adjoint()).scale(0.5)
}

pub fn random_system(rng: &mut SeededRng, dim: usize) -> QuantumSystem {
    QuantumSystem::new(random_hermitian(rng, dim)).expect("random Hermitian is a Hamiltonian")
}

/// A perfectly fine-grained observable drawn from the eigenbasis of a
/// random Hermitian; outcome values are 0, 1, …, d−1.
pub fn random_fine_observable(rng: &mut SeededRng, dim: usize, name: &str) -> Observable {
    let (_, vectors) = eig_hermitian(&random_hermitian(rng, dim)).expect("hermitian");
    let projectors = (0..dim)
        .map(|k| {
            let v = vectors.column(k);
            &v * v.adjoint()
        })
        .collect();
    let outcomes = (0..dim).map(|k| k as f64).collect();
    Observable::new(name, outcomes, projectors).expect("projector family from a unitary basis")
}

/// A random partition of the outcome set into 2..=len cells (or one cell
/// when the observable is binary), labeled 0, 1, ….
pub fn random_resolution(rng: &mut SeededRng, obs: &Observable) -> Resolution {
    let len = obs.len();
    let cell_count = if len <= 2 { 1.max(len - 1) } else { rng.gen_range(2..len) };
    loop {
        let mut cells: Vec<Vec<f64>> = vec![Vec::new(); cell_count];
        for (i, &f) in obs.outcomes().iter().enumerate() {
            let cell = if i < cell_count { i } else { rng.gen_range(0..cell_count) };
            cells[cell].push(f);
        }
        if cells.iter().all(|m| !m.is_empty()) {
            let labeled = cells
                .into_iter()
                .enumerate()
                .map(|(i, members)| (i as f64, members))
                .collect();
            return Resolution::new(obs, labeled).expect("cells partition the outcome set");
        }
    }
}

/// A random mixture over one fine-grained observable at time `t0`.
pub fn random_init(rng: &mut SeededRng, sys: &QuantumSystem, t0: f64) -> InitializationEvent {
    let obs = random_fine_observable(rng, sys.dim(), "K0");
    let raw: Vec<f64> = (0..sys.dim()).map(|_| -f64::ln(rng.gen_range(1e-6..1.0))).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<(&Observable, f64, f64)> = obs
        .outcomes()
        .iter()
        .enumerate()
        .map(|(k, &f)| (&obs, f, raw[k] / total))
        .collect();
    InitializationEvent::from_weights(sys, t0, &weights).expect("normalized mixture")
}

/// Strictly increasing times t0 < t_1 < … < t_n with O(1) spacing.
pub fn random_times(rng: &mut SeededRng, t0: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| t0 + 0.2 + 0.4 * j as f64 + rng.gen_range(0.0..0.3))
        .collect()
}

/// A schedule of `n` random fine-grained devices at random times.
pub fn random_schedule(
    rng: &mut SeededRng,
    sys: &QuantumSystem,
    t0: f64,
    n: usize,
) -> Result<MeasurementSchedule> {
    let times = random_times(rng, t0, n);
    let entries = times
        .into_iter()
        .enumerate()
        .map(|(j, t)| (t, random_fine_observable(rng, sys.dim(), &format!("F{}", j + 1))))
        .collect();
    MeasurementSchedule::new(t0, entries)
}

/// A random density matrix: normalized exponential weights over a random
/// eigenbasis.
pub fn random_density(rng: &mut SeededRng, dim: usize) -> CMatrix {
    let (_, vectors) = eig_hermitian(&random_hermitian(rng, dim)).expect("hermitian");
    let raw: Vec<f64> = (0..dim).map(|_| -f64::ln(rng.gen_range(1e-6..1.0))).collect();
    let total: f64 = raw.iter().sum();
    let mut rho = CMatrix::zeros(dim, dim);
    for k in 0..dim {
        let v = vectors.column(k);
        rho += (&v * v.adjoint()).scale(raw[k] / total);
    }
    rho
}

/// A random Hermitian observable matrix with a possibly degenerate
/// spectrum: eigenvalues drawn from a small integer set.
pub fn random_degenerate_hermitian(rng: &mut SeededRng, dim: usize) -> CMatrix {
    let (_, vectors) = eig_hermitian(&random_hermitian(rng, dim)).expect("hermitian");
    let mut m = CMatrix::zeros(dim, dim);
    for k in 0..dim {
        let v = vectors.column(k);
        let value = rng.gen_range(0..2.max(dim - 1)) as f64;
        m += (&v * v.adjoint()).scale(value);
    }
    (&m + m.adjoint()).scale(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_streams() {
        let mut a = rng_from_seed(9);
        let mut b = rng_from_seed(9);
        let ma = random_hermitian(&mut a, 3);
        let mb = random_hermitian(&mut b, 3);
        assert_eq!(ma, mb);
    }

    #[test]
    fn generated_objects_satisfy_invariants() {
        let mut rng = rng_from_seed(123);
        for d in 2..=4 {
            let sys = random_system(&mut rng, d);
            let obs = random_fine_observable(&mut rng, d, "K");
            assert!(obs.is_fine_grained());
            let init = random_init(&mut rng, &sys, 0.0);
            let tr = crate::numeric::trace(init.metric()).re;
            assert!((tr - 1.0).abs() <= 1e-10);
            let schedule = random_schedule(&mut rng, &sys, 0.0, 3).unwrap();
            assert_eq!(schedule.len(), 3);
            let res = random_resolution(&mut rng, &obs);
            let total: usize = res.cells().iter().map(|(_, m)| m.len()).sum();
            assert_eq!(total, d);
        }
    }
}
