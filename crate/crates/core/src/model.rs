//! Scenario data types, random instance generation, channel-error draws, and
//! exact per-realization SINR and MSE.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid geometry: nonpositive distance between transmitter {tx} and receiver {rx}")]
    InvalidGeometry { tx: usize, rx: usize },
    #[error("degenerate channel: zero estimate vector for link {0}")]
    DegenerateChannel(usize),
    #[error("invalid power: q[{0}] must be strictly positive")]
    InvalidPower(usize),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// A named random substream. Solver runs and validation runs key their draws
/// by `(seed, purpose)` so they never share a stream.
pub fn substream(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(purpose.as_bytes()))
}

/// One draw of a circularly symmetric complex Gaussian with total variance
/// `var` (real and imaginary parts each carry `var / 2`).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Amplitude path-loss factor at distance `d` meters (reference 200 m,
/// exponent 3.5).
pub fn path_loss(d: f64) -> f64 {
    (200.0 / d).powf(3.5)
}

/// One draw of the log-normal shadowing factor `l` with
/// `10 log10(l) ~ Normal(0, 8^2)` (8 dB standard deviation).
pub fn draw_shadowing<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let db: f64 = rng.sample::<f64, _>(StandardNormal) * 8.0;
    10f64.powf(db / 10.0)
}

/// Transmitter/receiver placement for interference-scenario generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    /// Named layout. `"paper"` places the K transmitters on a line with
    /// 400 m spacing and each receiver 200 m across from its transmitter.
    #[serde(rename = "layout")]
    Layout(String),
    #[serde(rename = "coordinates")]
    Coordinates {
        tx: Vec<[f64; 2]>,
        rx: Vec<[f64; 2]>,
    },
}

impl Geometry {
    pub fn paper() -> Self {
        Geometry::Layout("paper".to_string())
    }

    fn positions(&self, k: usize) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>), ModelError> {
        match self {
            Geometry::Layout(name) if name == "paper" => {
                let tx: Vec<[f64; 2]> = (0..k).map(|i| [400.0 * i as f64, 0.0]).collect();
                let rx: Vec<[f64; 2]> = (0..k).map(|i| [400.0 * i as f64, 200.0]).collect();
                Ok((tx, rx))
            }
            Geometry::Layout(name) => Err(ModelError::Invalid(format!(
                "unknown geometry layout `{name}`"
            ))),
            Geometry::Coordinates { tx, rx } => {
                if tx.len() != k || rx.len() != k {
                    return Err(ModelError::Invalid(format!(
                        "geometry lists {} transmitters / {} receivers for K = {k}",
                        tx.len(),
                        rx.len()
                    )));
                }
                Ok((tx.clone(), rx.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Caps {
    /// Uniform per-link power cap.
    #[serde(default)]
    pub individual: Option<f64>,
    /// Total power cap.
    #[serde(default)]
    pub total: Option<f64>,
}

fn default_noise() -> f64 {
    1.0
}

/// Generation parameters for an interference scenario. Serializes to a
/// structured text document that round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub kappa: f64,
    pub eps: f64,
    pub alpha: f64,
    pub seed: u64,
    pub geometry: Geometry,
    #[serde(default)]
    pub caps: Caps,
    /// Receiver noise variance, uniform across links.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

impl ScenarioSpec {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Stable content hash, used as a scenario identifier in result files.
    pub fn content_hash(&self) -> u64 {
        fnv1a(serde_json::to_string(self).expect("serialize").as_bytes())
    }
}

/// A K-transmitter / K-receiver MISO interference instance.
///
/// Immutable after construction; safe to share read-only across tasks.
#[derive(Debug, Clone)]
pub struct InterferenceScenario {
    pub k_links: usize,
    pub antennas: usize,
    /// `h_hat[k][j]`: channel estimate from transmitter j to receiver k.
    pub h_hat: Vec<Vec<DVector<C64>>>,
    /// `sigma2[k][j]`: per-component error variance on link (k, j).
    pub sigma2: Vec<Vec<f64>>,
    /// Realized large-scale amplitude (path loss times shadowing) per link,
    /// recorded so the kappa mapping is auditable.
    pub scale: Vec<Vec<f64>>,
    pub eta2: Vec<f64>,
    /// Unit-norm beam directions, one per transmitter.
    pub beamformers: Vec<DVector<C64>>,
    pub alpha: Vec<f64>,
    pub eps: Vec<f64>,
    pub p_cap: Option<Vec<f64>>,
    pub p_cap_total: Option<f64>,
}

impl InterferenceScenario {
    pub fn validate(&self) -> Result<(), ModelError> {
        let k = self.k_links;
        if k == 0 || self.antennas == 0 {
            return Err(ModelError::Invalid("K and M must be at least 1".into()));
        }
        for (j, g) in self.beamformers.iter().enumerate() {
            if (g.norm() - 1.0).abs() > 1e-12 {
                return Err(ModelError::Invalid(format!(
                    "beamformer {j} is not unit norm"
                )));
            }
        }
        for row in &self.sigma2 {
            if row.iter().any(|&s| s < 0.0) {
                return Err(ModelError::Invalid("sigma2 must be nonnegative".into()));
            }
        }
        if self.eta2.iter().any(|&e| e <= 0.0) {
            return Err(ModelError::Invalid("eta2 must be strictly positive".into()));
        }
        if self.eps.iter().any(|&e| e <= 0.0 || e >= 1.0) {
            return Err(ModelError::Invalid(
                "eps must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Downlink MISO broadcast instance with per-entry channel-error variances.
#[derive(Debug, Clone)]
pub struct BroadcastScenario {
    pub m: usize,
    pub k: usize,
    pub h_hat: DMatrix<C64>,
    /// `lambda[k]`: diagonal of the error covariance for user k's row.
    pub lambda: Vec<DVector<f64>>,
    pub eta2: Vec<f64>,
    pub mu: Vec<f64>,
    pub phi: Vec<f64>,
    /// Moore-Penrose pseudoinverse of `h_hat` (M x K).
    pub g_mat: DMatrix<C64>,
}

impl BroadcastScenario {
    /// Builds a scenario from its parts, checking the right-inverse property
    /// `H_hat * G = I` to 1e-9.
    pub fn new(
        h_hat: DMatrix<C64>,
        lambda: Vec<DVector<f64>>,
        eta2: Vec<f64>,
        mu: Vec<f64>,
        phi: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let k = h_hat.nrows();
        let m = h_hat.ncols();
        let svd = h_hat.clone().svd(true, true);
        let g_mat = svd
            .pseudo_inverse(1e-12)
            .map_err(|e| ModelError::Invalid(format!("pseudoinverse failed: {e}")))?;
        let prod = &h_hat * &g_mat;
        let ident = DMatrix::<C64>::identity(k, k);
        if (&prod - &ident).norm() > 1e-9 {
            return Err(ModelError::Invalid(
                "H_hat is not full row rank: H_hat * pinv(H_hat) != I".into(),
            ));
        }
        let sc = BroadcastScenario {
            m,
            k,
            h_hat,
            lambda,
            eta2,
            mu,
            phi,
            g_mat,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k == 0 || self.m == 0 {
            return Err(ModelError::Invalid("K and M must be at least 1".into()));
        }
        if self.eta2.iter().any(|&e| e <= 0.0) {
            return Err(ModelError::Invalid("eta2 must be strictly positive".into()));
        }
        if self.mu.iter().any(|&m| m <= 0.0) {
            return Err(ModelError::Invalid("mu must be strictly positive".into()));
        }
        if self.phi.iter().any(|&p| p <= 0.0 || p >= 1.0) {
            return Err(ModelError::Invalid(
                "phi must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Random instance with unit-variance Gaussian channel entries and a
    /// uniform per-entry error variance `sigma2`.
    pub fn generate(
        k: usize,
        m: usize,
        sigma2: f64,
        mu: f64,
        phi: f64,
        eta2: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut rng = substream(seed, "broadcast-scenario");
        let h_hat = DMatrix::from_fn(k, m, |_, _| complex_gaussian(&mut rng, 1.0));
        let lambda = (0..k).map(|_| DVector::from_element(m, sigma2)).collect();
        BroadcastScenario::new(h_hat, lambda, vec![eta2; k], vec![mu; k], vec![phi; k])
    }
}

/// A single draw of the interference-channel errors.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub h: Vec<Vec<DVector<C64>>>,
    pub seed: u64,
}

/// A single draw of the broadcast-channel error matrix.
#[derive(Debug, Clone)]
pub struct BroadcastRealization {
    pub delta: DMatrix<C64>,
    pub seed: u64,
}

/// Generates a random interference scenario following the reference channel
/// model: amplitude `(200/d)^3.5 * l * h_bar` with 8 dB log-normal shadowing
/// and standard complex Gaussian fast fading. The per-component error
/// standard deviation is `kappa` times the per-component estimate standard
/// deviation, conditioned on the realized large-scale factors.
///
/// Beamformers are set channel-matched: `g_k = h_hat_kk / ||h_hat_kk||`.
pub fn generate_interference_scenario(
    spec: &ScenarioSpec,
) -> Result<InterferenceScenario, ModelError> {
    if spec.k == 0 || spec.m == 0 {
        return Err(ModelError::Invalid("K and M must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&spec.kappa) {
        return Err(ModelError::Invalid("kappa must lie in (0, 1)".into()));
    }
    let (tx, rx) = spec.geometry.positions(spec.k)?;
    let mut rng = substream(spec.seed, "interference-scenario");
    let mut h_hat = Vec::with_capacity(spec.k);
    let mut sigma2 = Vec::with_capacity(spec.k);
    let mut scale = Vec::with_capacity(spec.k);
    for k in 0..spec.k {
        let mut row_h = Vec::with_capacity(spec.k);
        let mut row_s = Vec::with_capacity(spec.k);
        let mut row_c = Vec::with_capacity(spec.k);
        for j in 0..spec.k {
            let dx = rx[k][0] - tx[j][0];
            let dy = rx[k][1] - tx[j][1];
            let d = (dx * dx + dy * dy).sqrt();
            if d <= 0.0 {
                return Err(ModelError::InvalidGeometry { tx: j, rx: k });
            }
            let c = path_loss(d) * draw_shadowing(&mut rng);
            let h = DVector::from_fn(spec.m, |_, _| complex_gaussian(&mut rng, 1.0) * c);
            // Per-component estimate variance conditioned on (d, l) is c^2,
            // so error std = kappa * c.
            row_s.push((spec.kappa * c).powi(2));
            row_c.push(c);
            row_h.push(h);
        }
        h_hat.push(row_h);
        sigma2.push(row_s);
        scale.push(row_c);
    }
    let scenario = InterferenceScenario {
        k_links: spec.k,
        antennas: spec.m,
        h_hat,
        sigma2,
        scale,
        eta2: vec![spec.noise; spec.k],
        beamformers: Vec::new(),
        alpha: vec![spec.alpha; spec.k],
        eps: vec![spec.eps; spec.k],
        p_cap: spec.caps.individual.map(|c| vec![c; spec.k]),
        p_cap_total: spec.caps.total,
    };
    let scenario = make_channel_matched_beamformers(scenario)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Sets every beam direction to the normalized direct-link estimate.
pub fn make_channel_matched_beamformers(
    mut scenario: InterferenceScenario,
) -> Result<InterferenceScenario, ModelError> {
    let mut beams = Vec::with_capacity(scenario.k_links);
    for k in 0..scenario.k_links {
        let h = &scenario.h_hat[k][k];
        let n = h.norm();
        if n == 0.0 {
            return Err(ModelError::DegenerateChannel(k));
        }
        beams.push(h.map(|z| z / C64::new(n, 0.0)));
    }
    scenario.beamformers = beams;
    Ok(scenario)
}

pub(crate) fn realize_channels_with_rng<R: Rng + ?Sized>(
    scenario: &InterferenceScenario,
    rng: &mut R,
) -> Vec<Vec<DVector<C64>>> {
    scenario
        .h_hat
        .iter()
        .zip(&scenario.sigma2)
        .map(|(row_h, row_s)| {
            row_h
                .iter()
                .zip(row_s)
                .map(|(h, &s2)| {
                    DVector::from_iterator(h.len(), h.iter().map(|z| z + complex_gaussian(rng, s2)))
                })
                .collect()
        })
        .collect()
}

/// Draws one channel realization `h = h_hat + delta` with per-component
/// circularly symmetric errors. Same seed, same realization, bit-exactly.
pub fn realize_channels(scenario: &InterferenceScenario, seed: u64) -> ChannelRealization {
    let mut rng = substream(seed, "interference-realization");
    ChannelRealization {
        h: realize_channels_with_rng(scenario, &mut rng),
        seed,
    }
}

pub(crate) fn realize_broadcast_with_rng<R: Rng + ?Sized>(
    scenario: &BroadcastScenario,
    rng: &mut R,
) -> DMatrix<C64> {
    DMatrix::from_fn(scenario.k, scenario.m, |k, j| {
        complex_gaussian(rng, scenario.lambda[k][j])
    })
}

/// Draws one broadcast error matrix. Same seed, same realization.
pub fn realize_broadcast(scenario: &BroadcastScenario, seed: u64) -> BroadcastRealization {
    let mut rng = substream(seed, "broadcast-realization");
    BroadcastRealization {
        delta: realize_broadcast_with_rng(scenario, &mut rng),
        seed,
    }
}

/// Exact per-realization SINR:
/// `p_k |h_kk^H g_k|^2 / (eta_k^2 + sum_{j != k} p_j |h_kj^H g_j|^2)`.
pub fn compute_sinr(
    realization: &[Vec<DVector<C64>>],
    scenario: &InterferenceScenario,
    p: &[f64],
) -> Vec<f64> {
    let k_links = scenario.k_links;
    (0..k_links)
        .map(|k| {
            let gains: Vec<f64> = (0..k_links)
                .map(|j| {
                    realization[k][j]
                        .dotc(&scenario.beamformers[j])
                        .norm_sqr()
                })
                .collect();
            let signal = p[k] * gains[k];
            let interference: f64 = (0..k_links)
                .filter(|&j| j != k)
                .map(|j| p[j] * gains[j])
                .sum();
            signal / (scenario.eta2[k] + interference)
        })
        .collect()
}

/// Exact per-realization MSE:
/// `q_k^{-1} Delta[k,:] G Q G^H Delta[k,:]^H + q_k^{-1} eta_k^2`.
pub fn compute_mse(
    delta: &DMatrix<C64>,
    scenario: &BroadcastScenario,
    q: &[f64],
) -> Result<Vec<f64>, ModelError> {
    for (k, &qk) in q.iter().enumerate() {
        if qk <= 0.0 {
            return Err(ModelError::InvalidPower(k));
        }
    }
    let g = &scenario.g_mat;
    let mut out = Vec::with_capacity(scenario.k);
    for k in 0..scenario.k {
        let row = delta.row(k);
        // Delta[k,:] G has length K; the quadratic form is sum_j q_j |(Delta[k,:] G)_j|^2.
        let dg = row * g;
        let quad: f64 = (0..scenario.k).map(|j| q[j] * dg[j].norm_sqr()).sum();
        out.push((quad + scenario.eta2[k]) / q[k]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_spec(k: usize, m: usize, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            k,
            m,
            kappa: 0.1,
            eps: 0.05,
            alpha: 1.0,
            seed,
            geometry: Geometry::paper(),
            caps: Caps::default(),
            noise: 1.0,
        }
    }

    #[test]
    fn path_loss_identity_at_reference_distance() {
        assert_eq!(path_loss(200.0), 1.0);
    }

    #[test]
    fn shadowing_std_is_eight_db() {
        let mut rng = substream(42, "shadowing-moment-check");
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let db = 10.0 * draw_shadowing(&mut rng).log10();
            sum += db;
            sumsq += db * db;
        }
        let mean = sum / n as f64;
        let std = (sumsq / n as f64 - mean * mean).sqrt();
        assert!((std - 8.0).abs() < 0.05, "shadowing std {std}");
    }

    #[test]
    fn kappa_maps_to_squared_variance_ratio() {
        let sc = generate_interference_scenario(&unit_spec(3, 3, 7)).unwrap();
        for k in 0..3 {
            for j in 0..3 {
                let est_var = sc.scale[k][j].powi(2);
                let ratio = sc.sigma2[k][j] / est_var;
                assert!((ratio - 0.01).abs() < 1e-12, "ratio {ratio}");
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_interference_scenario(&unit_spec(2, 3, 5)).unwrap();
        let b = generate_interference_scenario(&unit_spec(2, 3, 5)).unwrap();
        assert_eq!(a.h_hat[1][0], b.h_hat[1][0]);
        assert_eq!(a.sigma2, b.sigma2);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut spec = unit_spec(2, 2, 1);
        spec.geometry = Geometry::Coordinates {
            tx: vec![[0.0, 0.0], [400.0, 0.0]],
            rx: vec![[0.0, 0.0], [400.0, 200.0]],
        };
        assert!(matches!(
            generate_interference_scenario(&spec),
            Err(ModelError::InvalidGeometry { .. })
        ));
    }

    #[test]
    fn channel_matched_beamformer_examples() {
        let mut sc = generate_interference_scenario(&unit_spec(1, 3, 3)).unwrap();
        sc.h_hat[0][0] = DVector::from_vec(vec![
            C64::new(2.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ]);
        let sc = make_channel_matched_beamformers(sc).unwrap();
        assert_relative_eq!(sc.beamformers[0][0].re, 1.0, epsilon = 1e-15);
        assert_eq!(sc.beamformers[0][1], C64::new(0.0, 0.0));
        assert!((sc.beamformers[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_matched_inner_product_is_real_positive() {
        let sc = generate_interference_scenario(&unit_spec(2, 4, 11)).unwrap();
        for k in 0..2 {
            let ip = sc.h_hat[k][k].dotc(&sc.beamformers[k]);
            assert!(ip.im.abs() < 1e-12);
            assert_relative_eq!(ip.re, sc.h_hat[k][k].norm(), epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_estimate_vector_is_degenerate() {
        let mut sc = generate_interference_scenario(&unit_spec(1, 2, 9)).unwrap();
        sc.h_hat[0][0] = DVector::zeros(2);
        assert!(matches!(
            make_channel_matched_beamformers(sc),
            Err(ModelError::DegenerateChannel(0))
        ));
    }

    #[test]
    fn zero_error_realization_equals_estimate() {
        let mut sc = generate_interference_scenario(&unit_spec(2, 2, 13)).unwrap();
        for row in sc.sigma2.iter_mut() {
            for s in row.iter_mut() {
                *s = 0.0;
            }
        }
        let r = realize_channels(&sc, 77);
        assert_eq!(r.h[0][1], sc.h_hat[0][1]);
    }

    #[test]
    fn realization_component_variance_matches_sigma2() {
        let mut sc = generate_interference_scenario(&unit_spec(1, 1, 17)).unwrap();
        sc.sigma2[0][0] = 0.37;
        let mut rng = substream(5, "variance-moment-check");
        let n = 1_000_000;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let h = realize_channels_with_rng(&sc, &mut rng);
            let d = h[0][0][0] - sc.h_hat[0][0][0];
            sumsq += d.norm_sqr();
        }
        let var = sumsq / n as f64;
        assert!((var / 0.37 - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn realization_is_seed_deterministic() {
        let sc = generate_interference_scenario(&unit_spec(2, 3, 19)).unwrap();
        let a = realize_channels(&sc, 123);
        let b = realize_channels(&sc, 123);
        assert_eq!(a.h, b.h);
    }

    #[test]
    fn sinr_zero_power_gives_zero() {
        let sc = generate_interference_scenario(&unit_spec(3, 2, 23)).unwrap();
        let r = realize_channels(&sc, 1);
        let g = compute_sinr(&r.h, &sc, &[0.0, 0.0, 0.0]);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sinr_single_link_direct_formula() {
        let mut sc = generate_interference_scenario(&unit_spec(1, 1, 29)).unwrap();
        sc.eta2[0] = 0.5;
        sc.h_hat[0][0] = DVector::from_vec(vec![C64::new(1.0, 0.0)]);
        sc.sigma2[0][0] = 0.0;
        let sc = make_channel_matched_beamformers(sc).unwrap();
        let r = realize_channels(&sc, 0);
        let g = compute_sinr(&r.h, &sc, &[2.0]);
        assert_relative_eq!(g[0], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn sinr_matches_scalar_reimplementation() {
        let sc = generate_interference_scenario(&unit_spec(2, 3, 31)).unwrap();
        let r = realize_channels(&sc, 2);
        let p = [1.3, 0.4];
        let got = compute_sinr(&r.h, &sc, &p);
        // Scalar-by-scalar independent evaluation.
        for k in 0..2 {
            let dot = |k: usize, j: usize| -> C64 {
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..3 {
                    acc += r.h[k][j][m].conj() * sc.beamformers[j][m];
                }
                acc
            };
            let num = p[k] * dot(k, k).norm_sqr();
            let mut den = sc.eta2[k];
            for j in 0..2 {
                if j != k {
                    den += p[j] * dot(k, j).norm_sqr();
                }
            }
            assert_relative_eq!(got[k], num / den, epsilon = 1e-12);
        }
    }

    #[test]
    fn sinr_is_scale_consistent() {
        let mut sc = generate_interference_scenario(&unit_spec(3, 3, 37)).unwrap();
        let r = realize_channels(&sc, 3);
        let p = [0.7, 1.1, 0.2];
        let base = compute_sinr(&r.h, &sc, &p);
        let c = 3.7;
        for e in sc.eta2.iter_mut() {
            *e *= c;
        }
        let scaled_p: Vec<f64> = p.iter().map(|x| x * c).collect();
        let scaled = compute_sinr(&r.h, &sc, &scaled_p);
        for (a, b) in base.iter().zip(&scaled) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn broadcast_pseudoinverse_right_identity() {
        let sc = BroadcastScenario::generate(3, 3, 1.5e-3, 0.1, 0.99, 0.1, 41).unwrap();
        let prod = &sc.h_hat * &sc.g_mat;
        let ident = DMatrix::<C64>::identity(3, 3);
        assert!((&prod - &ident).norm() < 1e-9);
    }

    #[test]
    fn mse_zero_error_is_noise_over_power() {
        let sc = BroadcastScenario::generate(3, 4, 0.0, 0.1, 0.9, 0.2, 43).unwrap();
        let delta = DMatrix::<C64>::zeros(3, 4);
        let q = [2.0, 1.0, 0.5];
        let mse = compute_mse(&delta, &sc, &q).unwrap();
        for (k, &qk) in q.iter().enumerate() {
            assert_relative_eq!(mse[k], sc.eta2[k] / qk, epsilon = 1e-14);
        }
        // Doubling all q halves every MSE when Delta = 0.
        let q2: Vec<f64> = q.iter().map(|x| 2.0 * x).collect();
        let mse2 = compute_mse(&delta, &sc, &q2).unwrap();
        for k in 0..3 {
            assert_relative_eq!(mse2[k], mse[k] / 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn mse_scalar_hand_expansion() {
        // K = M = 1: MSE = (|delta|^2 g^2 q + eta^2) / q with real g.
        let h_hat = DMatrix::from_element(1, 1, C64::new(2.0, 0.0));
        let sc = BroadcastScenario::new(
            h_hat,
            vec![DVector::from_element(1, 0.01)],
            vec![0.3],
            vec![0.5],
            vec![0.9],
        )
        .unwrap();
        let g = sc.g_mat[(0, 0)].re; // 0.5
        let delta = DMatrix::from_element(1, 1, C64::new(0.2, -0.1));
        let q = [1.7];
        let mse = compute_mse(&delta, &sc, &q).unwrap();
        let d2 = 0.2f64.powi(2) + 0.1f64.powi(2);
        assert_relative_eq!(mse[0], (d2 * g * g * q[0] + 0.3) / q[0], epsilon = 1e-12);
    }

    #[test]
    fn mse_nonpositive_power_is_rejected() {
        let sc = BroadcastScenario::generate(2, 2, 1e-3, 0.1, 0.9, 0.1, 47).unwrap();
        let delta = DMatrix::<C64>::zeros(2, 2);
        assert!(matches!(
            compute_mse(&delta, &sc, &[1.0, 0.0]),
            Err(ModelError::InvalidPower(1))
        ));
    }

    proptest! {
        #[test]
        fn scenario_spec_roundtrips_bit_exactly(
            k in 1usize..5,
            m in 1usize..5,
            kappa in 0.001f64..0.5,
            eps in 0.001f64..0.999,
            alpha in 0.01f64..10.0,
            seed in any::<u64>(),
            cap in proptest::option::of(0.1f64..100.0),
        ) {
            let spec = ScenarioSpec {
                k, m, kappa, eps, alpha, seed,
                geometry: Geometry::paper(),
                caps: Caps { individual: cap, total: None },
                noise: 1.0,
            };
            let text = spec.to_json();
            let back = ScenarioSpec::from_json(&text).unwrap();
            prop_assert_eq!(spec, back);
        }
    }
}
