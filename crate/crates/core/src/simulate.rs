//! Ground-truth networked systems, noise sampling and trajectory rollouts.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::blockmat::Partition;
use crate::datamodel::TrajectoryData;
use crate::error::{dim_err, Error, Result};
use crate::linalg;

/// `x(t+1) = A_s x(t) + B u(t) + w(t)` for `r` agents with state sizes
/// `n_i` and input sizes `m_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    a_s: DMatrix<f64>,
    b: DMatrix<f64>,
    n_dims: Vec<usize>,
    m_dims: Vec<usize>,
}

impl SystemModel {
    /// Validates dimensions and that `B` is block-diagonal along `(n_i, m_i)`.
    pub fn new(a_s: DMatrix<f64>, b: DMatrix<f64>, n_dims: Vec<usize>, m_dims: Vec<usize>) -> Result<Self> {
        if n_dims.is_empty() || n_dims.len() != m_dims.len() {
            return dim_err("need one state and one input size per agent");
        }
        if n_dims.contains(&0) || m_dims.contains(&0) {
            return dim_err("agent dimensions must be positive");
        }
        let n: usize = n_dims.iter().sum();
        let m: usize = m_dims.iter().sum();
        if a_s.shape() != (n, n) {
            return dim_err(format!("A_s must be {n}x{n}"));
        }
        if b.shape() != (n, m) {
            return dim_err(format!("B must be {n}x{m}"));
        }
        let mut r0 = 0;
        for (i, &ni) in n_dims.iter().enumerate() {
            let mut c0 = 0;
            for (j, &mj) in m_dims.iter().enumerate() {
                if i != j && b.view((r0, c0), (ni, mj)).iter().any(|v| *v != 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "B has a nonzero off-diagonal block ({i},{j})"
                    )));
                }
                c0 += mj;
            }
            r0 += ni;
        }
        Ok(Self { a_s, b, n_dims, m_dims })
    }

    pub fn a_s(&self) -> &DMatrix<f64> {
        &self.a_s
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n_dims(&self) -> &[usize] {
        &self.n_dims
    }

    pub fn m_dims(&self) -> &[usize] {
        &self.m_dims
    }

    pub fn agents(&self) -> usize {
        self.n_dims.len()
    }

    pub fn n(&self) -> usize {
        self.a_s.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

/// Noise samples `w(0), …, w(T−1)` as the columns of `W_−`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub w: DMatrix<f64>,
}

/// Simulates `T = U.ncols()` steps from `x0`.
pub fn rollout(sys: &SystemModel, x0: &[f64], u: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<TrajectoryData> {
    let n = sys.n();
    if x0.len() != n {
        return dim_err(format!("x0 must have length {n}"));
    }
    if u.nrows() != sys.m() {
        return dim_err(format!("U must have {} rows", sys.m()));
    }
    let t = u.ncols();
    if w.shape() != (n, t) {
        return dim_err(format!("W must be {n}x{t}"));
    }
    let mut x = DMatrix::zeros(n, t + 1);
    x.set_column(0, &nalgebra::DVector::from_column_slice(x0));
    for k in 0..t {
        let next = &sys.a_s * x.column(k) + &sys.b * u.column(k) + w.column(k);
        x.set_column(k + 1, &next);
    }
    TrajectoryData::new(x, u.clone())
}

/// Default slack: samples satisfy `W Wᵀ ⪯ 0.99·Q`.
pub const DEFAULT_NOISE_SLACK: f64 = 0.99;

/// Draws `W = s·Q^{1/2} Z` with `Z` i.i.d. standard normal and `s` chosen so
/// that `W Wᵀ ⪯ slack·Q`.
pub fn sample_noise_within(q: &DMatrix<f64>, t: usize, seed: u64) -> Result<NoiseRealization> {
    sample_noise_within_slack(q, t, seed, DEFAULT_NOISE_SLACK)
}

pub fn sample_noise_within_slack(q: &DMatrix<f64>, t: usize, seed: u64, slack: f64) -> Result<NoiseRealization> {
    let n = q.nrows();
    if q.ncols() != n {
        return dim_err("Q must be square");
    }
    if !linalg::is_symmetric(q, 1e-12) {
        return Err(Error::NoiseModel("Q must be symmetric".into()));
    }
    if !(0.0..=1.0).contains(&slack) {
        return Err(Error::InvalidArgument("slack must lie in [0, 1]".into()));
    }
    let eig = linalg::symmetrize(q).symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(Error::NoiseModel("Q must be positive semidefinite".into()));
    }
    let sqrt_l = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q_half = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_l) * eig.eigenvectors.transpose();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng));
    let zz_max = linalg::max_eig_sym(&(&z * z.transpose()));
    let s = if zz_max > 0.0 { (slack / zz_max).sqrt() } else { 0.0 };
    Ok(NoiseRealization { w: q_half * z * s })
}

/// Random block-structured test system.
///
/// Diagonal agent blocks of `A_s` are always populated; each off-diagonal
/// block is kept with probability `coupling_density`. Entries are normal
/// with variance `1/n`, which places the open-loop spectral radius near one.
/// `B_i` are Gaussian and redrawn until they have full column rank.
pub fn random_network_system(
    n_dims: &[usize],
    m_dims: &[usize],
    coupling_density: f64,
    seed: u64,
) -> Result<SystemModel> {
    if n_dims.is_empty() || n_dims.len() != m_dims.len() {
        return dim_err("need one state and one input size per agent");
    }
    if n_dims.contains(&0) || m_dims.contains(&0) {
        return dim_err("agent dimensions must be positive");
    }
    if n_dims.iter().zip(m_dims).any(|(n, m)| m > n) {
        return Err(Error::InvalidArgument(
            "full column rank B_i requires m_i <= n_i".into(),
        ));
    }
    if !(0.0..=1.0).contains(&coupling_density) {
        return Err(Error::InvalidArgument("coupling density must lie in [0, 1]".into()));
    }
    let n: usize = n_dims.iter().sum();
    let m: usize = m_dims.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = 1.0 / (n as f64).sqrt();

    let offsets = |dims: &[usize]| -> Vec<usize> {
        dims.iter()
            .scan(0, |acc, d| {
                let o = *acc;
                *acc += d;
                Some(o)
            })
            .collect()
    };
    let n_off = offsets(n_dims);
    let m_off = offsets(m_dims);

    let mut a = DMatrix::zeros(n, n);
    for (i, &ni) in n_dims.iter().enumerate() {
        for (j, &nj) in n_dims.iter().enumerate() {
            if i != j && !rng.random_bool(coupling_density) {
                continue;
            }
            for r in 0..ni {
                for c in 0..nj {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    a[(n_off[i] + r, n_off[j] + c)] = v * sd;
                }
            }
        }
    }

    let mut b = DMatrix::zeros(n, m);
    for (i, (&ni, &mi)) in n_dims.iter().zip(m_dims).enumerate() {
        let bi = loop {
            let cand: DMatrix<f64> = DMatrix::from_fn(ni, mi, |_, _| StandardNormal.sample(&mut rng));
            let sv = cand.clone().singular_values();
            let smax: f64 = sv.max();
            if sv.min() > 1e-3 * smax.max(1.0) {
                break cand;
            }
        };
        b.view_mut((n_off[i], m_off[i]), (ni, mi)).copy_from(&bi);
    }
    SystemModel::new(a, b, n_dims.to_vec(), m_dims.to_vec())
}

/// The three-agent benchmark dataset.
#[derive(Debug, Clone)]
pub struct ThreeAgentFixture {
    pub system: SystemModel,
    pub data: TrajectoryData,
    pub noise: NoiseRealization,
    pub q: DMatrix<f64>,
}

#[rustfmt::skip]
const FIXTURE_A_PATTERN: [f64; 36] = [
    1.0, 0.0, 1.0, 0.0, 0.0, 0.0,
    1.0, 1.0, 1.0, 1.0, 0.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 1.0, 0.0,
    0.0, 0.0, 0.0, 0.0, 1.0, 1.0,
    1.0, 0.0, 0.0, 0.0, 1.0, 0.0,
    1.0, 1.0, 0.0, 0.0, 1.0, 1.0,
];

#[rustfmt::skip]
const FIXTURE_B: [f64; 18] = [
    1.0, 0.0, 0.0,
    0.0, 0.0, 0.0,
    0.0, 1.0, 0.0,
    0.0, 0.0, 0.0,
    0.0, 0.0, 1.0,
    0.0, 0.0, 0.0,
];

#[rustfmt::skip]
const FIXTURE_X: [f64; 66] = [
    0.75274, 1.2276, 1.5028, 1.4546, 2.2505, 3.2402, 4.0554, 4.8123, 5.0687, 5.8844, 7.3989,
    0.48475, 1.6001, 2.0504, 3.067, 5.4602, 8.2031, 11.736, 16.6432, 22.2254, 28.3431, 36.5077,
    0.62701, 0.28679, 0.56613, 1.9483, 1.9467, 2.3218, 3.3144, 3.4338, 3.7058, 5.0454, 5.0957,
    0.80199, 0.30132, 0.99168, 2.6294, 4.0138, 5.7936, 8.6326, 12.1519, 16.2375, 21.5731, 27.317,
    0.11059, 0.60892, 1.6934, 1.9273, 2.9284, 3.9676, 4.7534, 5.4348, 6.8431, 7.5784, 8.6763,
    0.39059, 1.0436, 2.6886, 4.7617, 6.7268, 10.4199, 15.4993, 21.6268, 29.1105, 37.9496, 47.8538,
];

#[rustfmt::skip]
const FIXTURE_U: [f64; 30] = [
    0.39914, 0.59328, 0.21324, 0.20845, 0.72101, 0.71757, 0.39015, 0.12077, 0.61899, 0.8402,
    0.22042, 0.20061, 0.93207, 0.79012, 0.56395, 0.93289, 0.58158, 0.4449, 0.9393, 0.54806,
    0.090819, 0.59133, 0.0087293, 0.89861, 0.85981, 0.42837, 0.14863, 0.69451, 0.43057, 0.59851,
];

/// Printed values; the matrix is scaled by `1e-4`.
#[rustfmt::skip]
const FIXTURE_W: [f64; 60] = [
    0.56402, 0.85894, 0.078075, 0.30536, 0.81527, 0.68118, 0.19788, 0.30939, 0.66536, 0.8844,
    0.21199, 0.93952, 0.38109, 0.63732, 0.34066, 0.82892, 0.067992, 0.74664, 0.63701, 0.16617,
    0.020618, 0.17608, 0.26612, 0.25169, 0.81665, 0.99683, 0.21282, 0.0048493, 0.20266, 0.57528,
    0.61413, 0.1923, 0.19338, 0.42205, 0.42013, 0.11501, 0.24711, 0.46404, 0.91496, 0.25192,
    0.10097, 0.13537, 0.88955, 0.63512, 0.39169, 0.35093, 0.91207, 0.34179, 0.69204, 0.14824,
    0.35514, 0.51728, 0.61431, 0.50191, 0.33043, 0.84755, 0.31911, 0.24342, 0.93888, 0.53028,
];

pub const FIXTURE_W_SCALE: f64 = 1e-4;

/// Published sparse gain for the fixture: 4 nonzero blocks under
/// `p = (1,1,1)`, `q = (2,2,2)`.
#[rustfmt::skip]
pub const FIXTURE_SPARSE_GAIN: [f64; 18] = [
    0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    0.0, 0.0, -0.19134, -0.048629, 0.0, 0.0,
    -0.94584, -0.052014, -0.11946, 0.073348, -0.98268, -0.14899,
];

/// Three agents with `n_i = 2`, `m_i = 1`, a 10-step measurement window and
/// the bound `W_− W_−ᵀ ⪯ I/20`.
pub fn three_agent_fixture() -> ThreeAgentFixture {
    let a_s = DMatrix::from_row_slice(6, 6, &FIXTURE_A_PATTERN) * 0.6;
    let b = DMatrix::from_row_slice(6, 3, &FIXTURE_B);
    let system = SystemModel::new(a_s, b, vec![2; 3], vec![1; 3]).expect("fixture system is valid");
    let x = DMatrix::from_row_slice(6, 11, &FIXTURE_X);
    let u = DMatrix::from_row_slice(3, 10, &FIXTURE_U);
    let w = DMatrix::from_row_slice(6, 10, &FIXTURE_W) * FIXTURE_W_SCALE;
    let data = TrajectoryData::new(x, u).expect("fixture data is valid");
    ThreeAgentFixture {
        system,
        data,
        noise: NoiseRealization { w },
        q: DMatrix::identity(6, 6) / 20.0,
    }
}

impl ThreeAgentFixture {
    /// `p = (1,1,1)`, `q = (2,2,2)`.
    pub fn partition(&self) -> Partition {
        Partition::uniform(3, 3, 1, 2).expect("fixture partition is valid")
    }

    pub fn sparse_gain(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 6, &FIXTURE_SPARSE_GAIN)
    }
}

/// `X_+ − A_s X_− − B U_− − W_−`.
pub fn fixture_discrepancy(fx: &ThreeAgentFixture) -> DMatrix<f64> {
    fx.data
        .residual(fx.system.a_s(), fx.system.b())
        .expect("fixture dimensions agree")
        - &fx.noise.w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{noise_satisfies, NoiseModel};
    use proptest::prelude::*;
    use rand::Rng;

    fn small_sys(a: DMatrix<f64>, b: DMatrix<f64>) -> SystemModel {
        let n = a.nrows();
        let m = b.ncols();
        SystemModel::new(a, b, vec![n], vec![m]).unwrap()
    }

    #[test]
    fn zero_system_decays_immediately() {
        let sys = small_sys(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1));
        let d = rollout(
            &sys,
            &[1.5, -2.0],
            &DMatrix::from_element(1, 3, 7.0),
            &DMatrix::zeros(2, 3),
        )
        .unwrap();
        assert_eq!(d.x().column(0).as_slice(), &[1.5, -2.0]);
        for k in 1..4 {
            assert!(d.x().column(k).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn identity_system_holds_state() {
        let sys = small_sys(DMatrix::identity(2, 2), DMatrix::zeros(2, 1));
        let d = rollout(&sys, &[0.3, 0.4], &DMatrix::zeros(1, 4), &DMatrix::zeros(2, 4)).unwrap();
        for k in 0..5 {
            assert_eq!(d.x().column(k).as_slice(), &[0.3, 0.4]);
        }
    }

    #[test]
    fn rollout_checks_dimensions() {
        let sys = small_sys(DMatrix::identity(2, 2), DMatrix::zeros(2, 1));
        assert!(rollout(&sys, &[0.0], &DMatrix::zeros(1, 4), &DMatrix::zeros(2, 4)).is_err());
        assert!(rollout(&sys, &[0.0, 0.0], &DMatrix::zeros(2, 4), &DMatrix::zeros(2, 4)).is_err());
        assert!(rollout(&sys, &[0.0, 0.0], &DMatrix::zeros(1, 4), &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn system_rejects_coupled_inputs() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(SystemModel::new(DMatrix::zeros(2, 2), b, vec![1, 1], vec![1, 1]).is_err());
    }

    #[test]
    fn fixture_transcription() {
        let fx = three_agent_fixture();
        assert_eq!(fx.data.x()[(0, 0)], 0.75274);
        assert_eq!(fx.system.a_s()[(0, 0)], 0.6);
        assert!(fx.noise.w.iter().all(|v| v.abs() < 1e-4 && *v > 0.0));
        assert_eq!(fx.data.t(), 10);
        assert_eq!(fx.q[(5, 5)], 0.05);
        assert_eq!(fx.system.agents(), 3);
    }

    #[test]
    fn zero_bound_gives_zero_noise() {
        let w = sample_noise_within(&DMatrix::zeros(3, 3), 5, 1).unwrap().w;
        assert!(w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_sampling_is_deterministic() {
        let q = DMatrix::identity(4, 4) / 20.0;
        assert_eq!(
            sample_noise_within(&q, 8, 99).unwrap(),
            sample_noise_within(&q, 8, 99).unwrap()
        );
        assert_ne!(
            sample_noise_within(&q, 8, 99).unwrap(),
            sample_noise_within(&q, 8, 100).unwrap()
        );
    }

    #[test]
    fn noise_rejects_indefinite_bound() {
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(sample_noise_within(&q, 3, 0), Err(Error::NoiseModel(_))));
    }

    #[test]
    fn density_extremes() {
        let sys = random_network_system(&[2, 2, 2], &[1, 1, 1], 0.0, 5).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let blk = sys.a_s().view((2 * i, 2 * j), (2, 2));
                assert_eq!(i == j, blk.iter().any(|v| *v != 0.0));
            }
        }
        let sys = random_network_system(&[2, 2, 2], &[1, 1, 1], 1.0, 5).unwrap();
        assert!(sys.a_s().iter().all(|v| *v != 0.0));
    }

    #[test]
    fn network_generation_is_deterministic() {
        assert_eq!(
            random_network_system(&[2, 2, 2], &[1, 1, 1], 0.5, 11).unwrap(),
            random_network_system(&[2, 2, 2], &[1, 1, 1], 0.5, 11).unwrap()
        );
        assert!(random_network_system(&[1], &[2], 0.5, 0).is_err());
        assert!(random_network_system(&[2], &[1], 1.5, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sampled_noise_meets_bound(seed in any::<u64>(), n in 1usize..5, t in 1usize..12, scale in 1e-4f64..10.0) {
            let q = DMatrix::identity(n, n) * scale;
            let w = sample_noise_within(&q, t, seed).unwrap().w;
            let model = NoiseModel::from_energy_bound(&q, t).unwrap();
            prop_assert!(noise_satisfies(&w, &model).unwrap().holds);
        }

        #[test]
        fn rollout_residual_is_the_noise(seed in any::<u64>(), t in 1usize..10) {
            let sys = random_network_system(&[2, 1], &[1, 1], 0.7, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let u = DMatrix::from_fn(2, t, |_, _| rng.random_range(-1.0..1.0));
            let w = DMatrix::from_fn(3, t, |_, _| rng.random_range(-0.1..0.1));
            let x0: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = rollout(&sys, &x0, &u, &w).unwrap();
            let r = d.residual(sys.a_s(), sys.b()).unwrap();
            prop_assert!((r - w).amax() <= 1e-12);
        }
    }
}
