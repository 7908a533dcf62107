//! Independent checks of stabilization certificates.
//!
//! Nothing here calls the conic solver. The LMI is rebuilt from the
//! certificate's numbers and checked by a dense eigenvalue computation, and
//! the quantifier over the consistency set is probed by sampling matrices
//! on its boundary and inside it.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coneprog::eq8_matrix;
use crate::datamodel::ConsistencySet;
use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::synth::StabCertificate;

/// Residual floor for a passing certificate.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Bisection stops when the bracket on `τ` is this narrow.
pub const BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub residual_min_eig: f64,
    /// `ρ(A_true + B K)` when the true system was supplied.
    pub true_system_spectral_radius: Option<f64>,
    pub n_samples: usize,
    pub samples_failed: usize,
    /// Samples with a positive Lyapunov margin but `ρ(A + BK) ≥ 1`; any is a
    /// bug in the margin computation.
    pub schur_violations: usize,
    /// Sample directions along which the set is unbounded or flat.
    pub skipped_directions: usize,
    pub worst_margin: f64,
    /// Lyapunov margin of every sampled system, center first.
    pub margins: Vec<f64>,
    pub pass: bool,
}

/// Sampled boundary points of the consistency set.
#[derive(Debug, Clone)]
pub struct BoundarySamples {
    pub boundary: Vec<DMatrix<f64>>,
    pub skipped: usize,
}

/// Minimum eigenvalue of the stabilization LMI rebuilt from `cert`.
pub fn check_certificate(cert: &StabCertificate, cset: &ConsistencySet, b: &DMatrix<f64>) -> Result<f64> {
    let n = cset.n();
    if b.nrows() != n {
        return dim_err(format!("B must have {n} rows"));
    }
    let m = b.ncols();
    if cert.p.shape() != (n, n) || cert.l.shape() != (m, n) || cert.k.shape() != (m, n) {
        return dim_err("certificate dimensions do not match the data");
    }
    let mat = eq8_matrix(cset.matrix(), b, &cert.p, &cert.l, cert.alpha, cert.beta);
    Ok(linalg::min_eig_sym(&mat))
}

/// `λ_min(P − (A+BK) P (A+BK)ᵀ)`.
pub fn lyapunov_margin(a: &DMatrix<f64>, b: &DMatrix<f64>, k: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || k.shape() != (b.ncols(), n) || p.shape() != (n, n) {
        return dim_err("lyapunov_margin: dimension mismatch");
    }
    if nalgebra::Cholesky::new(linalg::symmetrize(p)).is_none() {
        return Err(Error::NotPositiveDefinite("P".into()));
    }
    let cl = a + b * k;
    Ok(linalg::min_eig_sym(&linalg::symmetrize(
        &(p - &cl * p * cl.transpose()),
    )))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return dim_err("spectral radius needs a square matrix");
    }
    Ok(linalg::spectral_radius(a))
}

/// Draws `count` random directions `Δ` and returns `Â + τ*Δ`, where `τ*` is
/// the largest step keeping the membership residual nonnegative.
pub fn sample_sigma_boundary(cset: &ConsistencySet, count: usize, seed: u64) -> Result<BoundarySamples> {
    let center = cset.center()?;
    let n = cset.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<DMatrix<f64>> = (0..count)
        .map(|_| DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    boundary_along(cset, &center, &directions)
}

fn boundary_along(
    cset: &ConsistencySet,
    center: &DMatrix<f64>,
    directions: &[DMatrix<f64>],
) -> Result<BoundarySamples> {
    let radius = linalg::symmetrize(&cset.radius()?);
    let n22 = cset.n22();
    let scale = linalg::sym_norm(cset.matrix()).max(1.0);
    let r_min = linalg::min_eig_sym(&radius);
    if r_min < -1e-10 * scale {
        return Err(Error::DegenerateSet(format!(
            "consistency set is empty (radius min eigenvalue {r_min:.3e})"
        )));
    }
    let found: Vec<Option<DMatrix<f64>>> = directions
        .par_iter()
        .map(|d| {
            let norm = d.norm();
            if norm == 0.0 {
                return None;
            }
            let d = d / norm;
            // Along Â + τΔ the residual is R + τ² Δ N22 Δᵀ, concave in τ².
            let curv = linalg::symmetrize(&(&d * &n22 * d.transpose()));
            if linalg::min_eig_sym(&curv) > -1e-14 * scale {
                return None;
            }
            let residual = |tau: f64| linalg::min_eig_sym(&(&radius + &curv * (tau * tau)));
            if r_min <= 0.0 {
                return Some(center.clone());
            }
            let mut hi = 1.0;
            while residual(hi) >= 0.0 {
                hi *= 2.0;
                if hi > 1e12 {
                    return None;
                }
            }
            let mut lo = 0.0;
            while hi - lo > BISECTION_TOL * hi.max(1.0) {
                let mid = 0.5 * (lo + hi);
                if residual(mid) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(center + &d * lo)
        })
        .collect();
    let skipped = found.iter().filter(|s| s.is_none()).count();
    Ok(BoundarySamples {
        boundary: found.into_iter().flatten().collect(),
        skipped,
    })
}

/// Re-checks the LMI and probes the Lyapunov inequality on the center, on
/// `n_samples` boundary points and on one interior point per boundary point.
pub fn verify_gain(
    cert: &StabCertificate,
    cset: &ConsistencySet,
    b: &DMatrix<f64>,
    a_true: Option<&DMatrix<f64>>,
    n_samples: usize,
    seed: u64,
) -> VerificationReport {
    let residual_min_eig = check_certificate(cert, cset, b).unwrap_or(f64::NEG_INFINITY);
    let true_rho = a_true.map(|a| {
        if a.shape() == cert.p.shape() && b.nrows() == a.nrows() {
            linalg::spectral_radius(&(a + b * &cert.k))
        } else {
            f64::INFINITY
        }
    });

    let mut systems = Vec::new();
    let mut skipped = 0;
    let mut sampling_failed = false;
    match cset.center() {
        Ok(center) => {
            systems.push(center.clone());
            match sample_sigma_boundary(cset, n_samples, seed) {
                Ok(s) => {
                    skipped = s.skipped;
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                    let unit = Uniform::new(0.0, 1.0).expect("valid range");
                    for a in s.boundary {
                        let lam: f64 = unit.sample(&mut rng);
                        let interior = &center * lam + &a * (1.0 - lam);
                        systems.push(a);
                        systems.push(interior);
                    }
                }
                Err(_) => sampling_failed = true,
            }
        }
        Err(_) => sampling_failed = true,
    }

    let results: Vec<(f64, bool)> = systems
        .par_iter()
        .map(|a| {
            let margin = lyapunov_margin(a, b, &cert.k, &cert.p).unwrap_or(f64::NEG_INFINITY);
            let schur_ok = margin <= 0.0 || linalg::spectral_radius(&(a + b * &cert.k)) < 1.0;
            (margin, schur_ok)
        })
        .collect();
    let margins: Vec<f64> = results.iter().map(|r| r.0).collect();
    let samples_failed = margins.iter().filter(|&&m| !(m > 0.0)).count();
    let schur_violations = results.iter().filter(|r| !r.1).count();
    let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = residual_min_eig >= -RESIDUAL_TOL
        && !sampling_failed
        && samples_failed == 0
        && schur_violations == 0
        && true_rho.is_none_or(|r| r < 1.0);
    VerificationReport {
        residual_min_eig,
        true_system_spectral_radius: true_rho,
        n_samples: margins.len(),
        samples_failed,
        schur_violations,
        skipped_directions: skipped,
        worst_margin,
        margins,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coneprog::SolveStatus;
    use crate::datamodel::{build_n, NoiseModel};
    use crate::simulate::three_agent_fixture;
    use crate::synth::{synthesize_centralized, SynthSettings};
    use nalgebra::DVector;

    fn fixture_cset() -> (ConsistencySet, DMatrix<f64>, DMatrix<f64>) {
        let fx = three_agent_fixture();
        let model = NoiseModel::from_energy_bound(&fx.q, fx.data.t()).unwrap();
        let cs = build_n(&fx.data, fx.system.b(), &model).unwrap();
        (cs, fx.system.b().clone(), fx.system.a_s().clone())
    }

    #[test]
    fn margin_of_zero_closed_loop_is_min_eig_of_p() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let b = DMatrix::identity(2, 2);
        let k = -&a;
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = lyapunov_margin(&a, &b, &k, &p).unwrap();
        assert!((m - linalg::min_eig_sym(&p)).abs() < 1e-12);
    }

    #[test]
    fn margin_of_identity_closed_loop_is_zero() {
        let id = DMatrix::<f64>::identity(3, 3);
        let m = lyapunov_margin(&id, &id, &DMatrix::zeros(3, 3), &id).unwrap();
        assert!(m.abs() < 1e-14);
    }

    #[test]
    fn margin_rejects_indefinite_p() {
        let id = DMatrix::<f64>::identity(2, 2);
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(lyapunov_margin(&id, &id, &id, &p).is_err());
    }

    #[test]
    fn spectral_radius_examples() {
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
        assert!((spectral_radius(&DMatrix::identity(2, 2)).unwrap() - 1.0).abs() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.25]));
        assert!((spectral_radius(&d).unwrap() - 0.5).abs() < 1e-14);
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn scalar_certificate_by_hand() {
        // N = diag(q, 0) for a scalar system with no data: N22 = 0.
        // a = 0.5, b = 1, K = 0, P = 1, α = 0, β = 0.5:
        // [[P−β, 0, 0], [0, 0, P], [0, P, P]] has a 2×2 block [[0,1],[1,1]] ⇒ λ_min < 0
        let cs = ConsistencySet::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.0]))).unwrap();
        let b = DMatrix::from_element(1, 1, 1.0);
        let cert = StabCertificate::from_parts(
            &cs,
            &b,
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            0.0,
            0.5,
            SolveStatus::Optimal,
        )
        .unwrap();
        let r = check_certificate(&cert, &cs, &b).unwrap();
        let expect = (1.0 - 5f64.sqrt()) / 2.0;
        assert!((r - expect).abs() < 1e-12, "{r}");
    }

    #[test]
    fn certificate_dimensions_checked() {
        let (cs, b, _) = fixture_cset();
        let cert = synthesize_centralized(&cs, &b, &SynthSettings::default())
            .unwrap()
            .certificate()
            .unwrap()
            .clone();
        assert!(check_certificate(&cert, &cs, &DMatrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn flipping_alpha_breaks_the_certificate() {
        let (cs, b, _) = fixture_cset();
        let mut cert = synthesize_centralized(&cs, &b, &SynthSettings::default())
            .unwrap()
            .certificate()
            .unwrap()
            .clone();
        assert!(check_certificate(&cert, &cs, &b).unwrap() >= -RESIDUAL_TOL);
        cert.alpha = -cert.alpha;
        assert!(check_certificate(&cert, &cs, &b).unwrap() < 0.0);
    }

    #[test]
    fn zero_direction_is_skipped() {
        let (cs, _, _) = fixture_cset();
        let center = cs.center().unwrap();
        let s = boundary_along(&cs, &center, &[DMatrix::zeros(6, 6)]).unwrap();
        assert_eq!(s.skipped, 1);
        assert!(s.boundary.is_empty());
    }

    #[test]
    fn noiseless_set_is_a_point() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let u = DMatrix::from_row_slice(1, 4, &[0.3, -0.8, 0.5, 0.1]);
        let mut x = DMatrix::zeros(2, 5);
        x.set_column(0, &x0);
        for t in 0..4 {
            let next = &a * x.column(t) + &b * u.column(t);
            x.set_column(t + 1, &next);
        }
        let data = crate::datamodel::TrajectoryData::new(x, u).unwrap();
        let cs = build_n(
            &data,
            &b,
            &NoiseModel::from_energy_bound(&DMatrix::zeros(2, 2), 4).unwrap(),
        )
        .unwrap();
        let s = sample_sigma_boundary(&cs, 5, 3).unwrap();
        assert_eq!(s.boundary.len(), 5);
        for m in &s.boundary {
            assert!((m - &a).amax() < 1e-9, "{m}");
        }
    }

    #[test]
    fn fixture_boundary_samples_are_members() {
        let (cs, _, _) = fixture_cset();
        let s = sample_sigma_boundary(&cs, 100, 7).unwrap();
        assert_eq!(s.boundary.len() + s.skipped, 100);
        assert_eq!(s.skipped, 0);
        let scale = linalg::sym_norm(cs.matrix());
        for a in &s.boundary {
            let r = linalg::min_eig_sym(&cs.quadratic_form(a).unwrap());
            assert!(r >= -1e-8 && r <= 1e-6 * scale, "{r}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (cs, _, _) = fixture_cset();
        let a = sample_sigma_boundary(&cs, 10, 11).unwrap();
        let b = sample_sigma_boundary(&cs, 10, 11).unwrap();
        assert_eq!(a.boundary, b.boundary);
    }

    #[test]
    fn fixture_pipeline_passes() {
        let (cs, b, a_s) = fixture_cset();
        let cert = synthesize_centralized(&cs, &b, &SynthSettings::default())
            .unwrap()
            .certificate()
            .unwrap()
            .clone();
        let rep = verify_gain(&cert, &cs, &b, Some(&a_s), 100, 1);
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.n_samples, 201);
        assert!(rep.true_system_spectral_radius.unwrap() < 1.0);
    }

    #[test]
    fn certificate_against_other_data_fails() {
        let (cs, b, _) = fixture_cset();
        let cert = synthesize_centralized(&cs, &b, &SynthSettings::default())
            .unwrap()
            .certificate()
            .unwrap()
            .clone();
        // A set centered on a strongly unstable system
        let a_bad = DMatrix::<f64>::identity(6, 6) * 3.0;
        // N22 = −I, N12 = Â, N11 = R − Â Âᵀ with R = 1e-4 I
        let mut n_mat = DMatrix::zeros(12, 12);
        n_mat
            .view_mut((0, 0), (6, 6))
            .copy_from(&(DMatrix::<f64>::identity(6, 6) * 1e-4 - &a_bad * a_bad.transpose()));
        n_mat
            .view_mut((6, 6), (6, 6))
            .copy_from(&-DMatrix::<f64>::identity(6, 6));
        n_mat.view_mut((0, 6), (6, 6)).copy_from(&a_bad);
        n_mat.view_mut((6, 0), (6, 6)).copy_from(&a_bad.transpose());
        let other = ConsistencySet::from_matrix(n_mat).unwrap();
        assert!((other.center().unwrap() - &a_bad).amax() < 1e-12);
        let rep = verify_gain(&cert, &other, &b, None, 20, 2);
        assert!(!rep.pass);
    }

    #[test]
    fn open_loop_stable_singleton_with_zero_gain() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let mut xs = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let u = DMatrix::from_row_slice(1, 3, &[0.4, -0.2, 0.7]);
        for t in 0..3 {
            let next = &a * xs.column(t) + &b * u.column(t);
            xs.set_column(t + 1, &next);
        }
        let data = crate::datamodel::TrajectoryData::new(xs, u).unwrap();
        let cs = build_n(
            &data,
            &b,
            &NoiseModel::from_energy_bound(&DMatrix::zeros(2, 2), 3).unwrap(),
        )
        .unwrap();
        let p = DMatrix::<f64>::identity(2, 2);
        let k = DMatrix::zeros(1, 2);
        // best multiplier on a grid; the set is a point, so some α works
        let cert = (0..200)
            .map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / 199.0))
            .map(|alpha| {
                StabCertificate::from_gain(&cs, &b, p.clone(), k.clone(), alpha, 0.0, SolveStatus::Optimal).unwrap()
            })
            .max_by(|x, y| x.residual_min_eig.total_cmp(&y.residual_min_eig))
            .unwrap();
        let rep = verify_gain(&cert, &cs, &b, Some(&a), 10, 4);
        let own = lyapunov_margin(&a, &b, &k, &p).unwrap();
        assert!(own > 0.0);
        for m in &rep.margins {
            assert!((m - own).abs() < 1e-8);
        }
        assert_eq!(rep.samples_failed, 0);
        assert!(rep.pass, "{rep:?}");
    }
}
