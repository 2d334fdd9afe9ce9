//! Ensemble estimate of the onlineness ratio `w(s, a) = d_on(s, a) / d_off(s, a)`.
//!
//! Each member is trained on the Jensen-Shannon variational bound
//!
//! ```text
//! L(psi) = E_on[f'(w)] - E_off[f*(f'(w))]
//! f(y)   = y log(2y / (y + 1)) + log(2 / (y + 1))
//! ```
//!
//! with `f'(y) = log(2y / (y + 1))` and `f*(f'(w)) = log((1 + w) / 2)`. The
//! bound is maximized at `w = dP/dQ`; we minimize its negation.

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envdata::Transition;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, DenseNet, GradBuffer, Head, Matrix, NetShape};
use crate::replay::{state_action_matrix, CandidatePool};
use crate::scalar::Scalar;

/// The JS generator `f(y)`.
pub fn f_js(y: f64) -> f64 {
    y * (2.0 * y / (y + 1.0)).ln() + (2.0 / (y + 1.0)).ln()
}

/// `f'(y) = log(2y / (y + 1))`, always below `log 2`.
pub fn f_prime(y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::invalid(format!("f' needs y > 0, got {y}")));
    }
    Ok((2.0 * y / (y + 1.0)).ln())
}

/// Convex conjugate of `f` evaluated at `f'(w)`: `log((1 + w) / 2)`.
pub fn f_conj_of_fprime(w: f64) -> Result<f64> {
    if !(w > 0.0) {
        return Err(Error::invalid(format!("f*(f'(w)) needs w > 0, got {w}")));
    }
    Ok(((1.0 + w) / 2.0).ln())
}

/// How member disagreement is turned into an uncertainty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spread {
    /// Divide by the member count.
    #[default]
    Population,
    /// Divide by the member count minus one.
    Sample,
}

pub(crate) fn mean_std(values: &[f64], spread: Spread) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let denom = match spread {
        Spread::Population => n,
        Spread::Sample => (n - 1.0).max(1.0),
    };
    (mean, (ss / denom).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub members: usize,
    pub hidden: usize,
    pub layer_norm: bool,
    pub lr: f64,
    /// LCB multiplier on the member spread.
    pub c_w: f64,
    /// Floor on the LCB so offline priorities stay positive.
    pub eps_w: f64,
    pub spread: Spread,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: 256,
            layer_norm: false,
            lr: 3e-4,
            c_w: 1.0,
            eps_w: 1e-6,
            spread: Spread::Population,
        }
    }
}

/// Member mean, spread and floored lower confidence bound of the ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioEstimate {
    pub mean: f64,
    pub uncertainty: f64,
    pub lcb: f64,
}

impl RatioEstimate {
    pub fn from_members(values: &[f64], c_w: f64, eps_w: f64, spread: Spread) -> Self {
        let (mean, uncertainty) = mean_std(values, spread);
        Self {
            mean,
            uncertainty,
            lcb: (mean - c_w * uncertainty).max(eps_w),
        }
    }
}

/// Negated JS bound and its gradient with respect to the member's outputs.
///
/// Returns `(loss, d loss / d w_on, d loss / d w_off)`.
fn loss_and_output_grads<T: Scalar>(w_on: &[T], w_off: &[T]) -> (f64, Vec<T>, Vec<T>) {
    let (n_on, n_off) = (w_on.len() as f64, w_off.len() as f64);
    let mut loss = 0.0;
    let g_on = w_on
        .iter()
        .map(|&w| {
            let w = w.as_f64();
            loss -= (2.0 * w / (w + 1.0)).ln() / n_on;
            T::of(-1.0 / (w * (1.0 + w)) / n_on)
        })
        .collect();
    let g_off = w_off
        .iter()
        .map(|&w| {
            let w = w.as_f64();
            loss += ((1.0 + w) / 2.0).ln() / n_off;
            T::of(1.0 / (1.0 + w) / n_off)
        })
        .collect();
    (loss, g_on, g_off)
}

fn check_batches<T: Scalar>(net: &DenseNet<T>, on: &Matrix<T>, off: &Matrix<T>) -> Result<()> {
    if on.rows() == 0 || off.rows() == 0 {
        return Err(Error::invalid("density loss needs nonempty online and offline batches"));
    }
    if net.output_dim() != 1 {
        return Err(Error::invalid("a density member has exactly one output"));
    }
    Ok(())
}

/// Negated variational bound of one member on `(P = on, Q = off)` batches.
pub fn dr_loss<T: Scalar>(member: &DenseNet<T>, on: &Matrix<T>, off: &Matrix<T>) -> Result<f64> {
    check_batches(member, on, off)?;
    let w_on = member.forward_batch(on)?;
    let w_off = member.forward_batch(off)?;
    let (loss, _, _) = loss_and_output_grads(w_on.as_slice(), w_off.as_slice());
    if !loss.is_finite() {
        return Err(Error::non_finite("density loss"));
    }
    Ok(loss)
}

/// [`dr_loss`] together with its parameter gradient.
pub fn dr_loss_grad<T: Scalar>(
    member: &DenseNet<T>,
    on: &Matrix<T>,
    off: &Matrix<T>,
) -> Result<(f64, GradBuffer<T>)> {
    check_batches(member, on, off)?;
    let (w_on, tape_on) = member.forward_tape(on)?;
    let (w_off, tape_off) = member.forward_tape(off)?;
    let (loss, g_on, g_off) = loss_and_output_grads(w_on.as_slice(), w_off.as_slice());
    if !loss.is_finite() {
        return Err(Error::non_finite("density loss"));
    }
    let mut grads = member.zero_grads();
    member.backward(&tape_on, &Matrix::from_vec(on.rows(), 1, g_on)?, Some(&mut grads))?;
    member.backward(&tape_off, &Matrix::from_vec(off.rows(), 1, g_off)?, Some(&mut grads))?;
    Ok((loss, grads))
}

/// `N_e` independently seeded ratio networks with their optimizers.
#[derive(Clone, Debug)]
pub struct DensityEnsemble<T> {
    members: Vec<DenseNet<T>>,
    optimizers: Vec<AdamState<T>>,
    streams: Vec<ChaCha8Rng>,
    config: DensityConfig,
}

impl<T: Scalar> DensityEnsemble<T> {
    /// Member `i` is initialized and later subsampled from stream `i` of `seed`.
    pub fn new(input_dim: usize, config: DensityConfig, seed: u64) -> Result<Self> {
        if config.members < 2 {
            return Err(Error::invalid("a density ensemble needs at least two members"));
        }
        let shape = NetShape::mlp(input_dim, config.hidden, 1, config.layer_norm, Head::Softplus);
        let mut members = Vec::with_capacity(config.members);
        let mut optimizers = Vec::with_capacity(config.members);
        let mut streams = Vec::with_capacity(config.members);
        for i in 0..config.members {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let net = DenseNet::init(shape.clone(), &mut rng)?;
            optimizers.push(AdamState::new(net.num_params(), AdamConfig::with_lr(config.lr)));
            members.push(net);
            streams.push(rng);
        }
        Ok(Self {
            members,
            optimizers,
            streams,
            config,
        })
    }

    pub fn config(&self) -> &DensityConfig {
        &self.config
    }

    pub fn members(&self) -> &[DenseNet<T>] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [DenseNet<T>] {
        &mut self.members
    }

    /// One Adam step per member on a random half of each source in the pool.
    ///
    /// Returns the mean member loss, or `None` when the pool lacks one of the
    /// two sources and the update is skipped.
    pub fn update(&mut self, pool: &CandidatePool) -> Result<Option<f64>> {
        let (on, off) = pool.split_by_source();
        if on.is_empty() || off.is_empty() {
            warn!(
                "density update skipped: pool has {} online and {} offline rows",
                on.len(),
                off.len()
            );
            return Ok(None);
        }
        let mut total = 0.0;
        for k in 0..self.members.len() {
            let rng = &mut self.streams[k];
            let pick = |rows: &[&Transition], rng: &mut ChaCha8Rng| -> Vec<Transition> {
                let half = (rows.len() / 2).max(1);
                sample(rng, rows.len(), half)
                    .into_iter()
                    .map(|i| rows[i].clone())
                    .collect()
            };
            let on_rows = pick(&on, rng);
            let off_rows = pick(&off, rng);
            let on_x = state_action_matrix::<T>(on_rows.iter())?;
            let off_x = state_action_matrix::<T>(off_rows.iter())?;
            let (loss, grads) = dr_loss_grad(&self.members[k], &on_x, &off_x)?;
            self.optimizers[k].step(self.members[k].params_mut(), grads.as_slice())?;
            total += loss;
        }
        Ok(Some(total / self.members.len() as f64))
    }

    /// Per-member ratios for each row of `x`, member-major.
    pub fn member_outputs(&self, x: &Matrix<T>) -> Result<Vec<Vec<f64>>> {
        self.members
            .iter()
            .map(|m| Ok(m.forward_batch(x)?.as_slice().iter().map(|v| v.as_f64()).collect()))
            .collect()
    }

    pub fn predict_lcb_batch(&self, x: &Matrix<T>) -> Result<Vec<RatioEstimate>> {
        let outs = self.member_outputs(x)?;
        let c = &self.config;
        (0..x.rows())
            .map(|r| {
                let vals: Vec<f64> = outs.iter().map(|m| m[r]).collect();
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::non_finite(format!("density ratio of row {r}")));
                }
                Ok(RatioEstimate::from_members(&vals, c.c_w, c.eps_w, c.spread))
            })
            .collect()
    }

    pub fn predict_lcb(&self, s: &[T], a: &[T]) -> Result<RatioEstimate> {
        let x: Vec<T> = s.iter().chain(a).copied().collect();
        Ok(self.predict_lcb_batch(&Matrix::row_vector(&x))?[0])
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::envdata::Source;
    use crate::testutil::{central_diff, max_rel_err, rng};

    #[test]
    fn f_prime_values() {
        assert_eq!(f_prime(1.0).unwrap(), 0.0);
        assert!((f_prime(1e6).unwrap() - 2f64.ln()).abs() < 2e-6);
        let h = 1e-5;
        let fd = (f_js(2.0 + h) - f_js(2.0 - h)) / (2.0 * h);
        assert!((fd - f_prime(2.0).unwrap()).abs() < 1e-6);
        for y in [1e-6, 0.3, 5.0, 1e9] {
            assert!(f_prime(y).unwrap() < 2f64.ln());
        }
        assert!(f_prime(0.0).is_err());
        assert!(f_prime(-1.0).is_err());
    }

    /// `sup_y [y t - f(y)]` over a fine log-spaced grid.
    fn brute_force_conjugate(t: f64) -> f64 {
        (0..200_000)
            .map(|k| 10f64.powf(-6.0 + 12.0 * k as f64 / 200_000.0))
            .map(|y| y * t - f_js(y))
            .fold(f64::MIN, f64::max)
    }

    #[test]
    fn conjugate_simplification() {
        assert_eq!(f_conj_of_fprime(1.0).unwrap(), 0.0);
        for w in [0.5, 1.0, 3.0] {
            let closed = f_conj_of_fprime(w).unwrap();
            let brute = brute_force_conjugate(f_prime(w).unwrap());
            assert!((closed - brute).abs() < 1e-4, "w={w}: {closed} vs {brute}");
        }
        let grid: Vec<f64> = (1..400).map(|k| k as f64 * 0.05).collect();
        for pair in grid.windows(2) {
            assert!(f_conj_of_fprime(pair[1]).unwrap() > f_conj_of_fprime(pair[0]).unwrap());
        }
        assert!(f_conj_of_fprime(0.0).is_err());
    }

    fn row_matrix(xs: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap()
    }

    /// A 1-input member whose output is `softplus(c) + 1e-6` regardless of input.
    fn constant_member(c: f64) -> DenseNet<f64> {
        let shape = NetShape {
            widths: vec![1, 1],
            layer_norm: false,
            head: Head::Softplus,
        };
        DenseNet::from_params(shape, vec![0.0, c]).unwrap()
    }

    #[test]
    fn unit_ratio_has_zero_loss() {
        // softplus(c) + 1e-6 = 1
        let c = ((1.0f64 - 1e-6).exp() - 1.0).ln();
        let m = constant_member(c);
        let loss = dr_loss(&m, &row_matrix(&[0.1, 2.0]), &row_matrix(&[-3.0])).unwrap();
        assert!(loss.abs() < 1e-12, "{loss}");
    }

    #[test]
    fn identical_batches_give_nonpositive_bound() {
        let mut r = rng(3);
        for seed in 0..20 {
            let m = DenseNet::<f64>::init(
                NetShape::mlp(1, 8, 1, false, Head::Softplus),
                &mut rng(seed),
            )
            .unwrap();
            let xs: Vec<f64> = (0..32).map(|_| r.random_range(-2.0..2.0)).collect();
            let loss = dr_loss(&m, &row_matrix(&xs), &row_matrix(&xs)).unwrap();
            assert!(-loss <= 1e-12, "bound {}", -loss);
        }
    }

    #[test]
    fn loss_is_bounded_below() {
        // The bound's supremum is 2 log 2 (disjoint supports).
        let hi = constant_member(40.0);
        let lo = constant_member(-40.0);
        let x = row_matrix(&[0.0]);
        for m in [&hi, &lo] {
            let loss = dr_loss(m, &x, &x).unwrap();
            assert!(loss >= -2.0 * 2f64.ln() - 1e-6);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = constant_member(0.0);
        let empty = Matrix::<f64>::zeros(0, 1);
        assert!(dr_loss(&m, &empty, &row_matrix(&[1.0])).is_err());
        assert!(dr_loss(&m, &row_matrix(&[1.0]), &empty).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // widths 3 -> 3 -> 1 without LN: 12 + 4 = 16 parameters
        let shape = NetShape {
            widths: vec![3, 3, 1],
            layer_norm: false,
            head: Head::Softplus,
        };
        for seed in 0..5 {
            let mut r = rng(100 + seed);
            let net = DenseNet::<f64>::init(shape.clone(), &mut r).unwrap();
            assert_eq!(net.num_params(), 16);
            let on = Matrix::from_vec(4, 3, (0..12).map(|_| r.random_range(-1.0..1.0)).collect())
                .unwrap();
            let off = Matrix::from_vec(3, 3, (0..9).map(|_| r.random_range(-1.0..1.0)).collect())
                .unwrap();
            let (_, g) = dr_loss_grad(&net, &on, &off).unwrap();
            let numeric = central_diff(net.params(), 1e-5, |p| {
                let n = DenseNet::from_params(shape.clone(), p.to_vec()).unwrap();
                dr_loss(&n, &on, &off).unwrap()
            });
            let err = max_rel_err(g.as_slice(), &numeric, 1e-6);
            assert!(err < 1e-3, "seed {seed}: {err}");
        }
    }

    #[test]
    fn lcb_aggregation() {
        let e = RatioEstimate::from_members(&[2.0, 2.0, 2.0], 1.0, 1e-6, Spread::Population);
        assert_eq!((e.uncertainty, e.lcb), (0.0, e.mean));
        let e = RatioEstimate::from_members(&[1.0, 3.0], 1.0, 1e-6, Spread::Population);
        assert_eq!((e.mean, e.uncertainty, e.lcb), (2.0, 1.0, 1.0));
        let e = RatioEstimate::from_members(&[0.1, 0.1, 0.1], 5.0, 1e-6, Spread::Population);
        assert!((e.lcb - 0.1).abs() < 1e-15);
        let e = RatioEstimate::from_members(&[1.0, 5.0], 2.0, 1e-6, Spread::Population);
        assert_eq!(e.lcb, 1e-6);
    }

    fn gaussian_pool(n: usize, seed: u64) -> CandidatePool {
        let mut r = rng(seed);
        let on = Normal::new(1.0, 1.0).unwrap();
        let off = Normal::new(-1.0, 1.0).unwrap();
        let mut rows = Vec::new();
        for i in 0..n {
            let (x, src) = if i % 2 == 0 {
                (on.sample(&mut r), Source::Online)
            } else {
                (off.sample(&mut r), Source::Offline)
            };
            rows.push(Transition::new(vec![x as f32], vec![], 0.0, vec![0.0], false, src));
        }
        CandidatePool::from_rows(rows)
    }

    fn small_config() -> DensityConfig {
        DensityConfig {
            members: 3,
            hidden: 32,
            lr: 3e-3,
            ..DensityConfig::default()
        }
    }

    #[test]
    fn update_is_deterministic_and_members_differ() {
        let pool = gaussian_pool(64, 1);
        let mut a = DensityEnsemble::<f32>::new(1, small_config(), 5).unwrap();
        let mut b = DensityEnsemble::<f32>::new(1, small_config(), 5).unwrap();
        for _ in 0..10 {
            a.update(&pool).unwrap().unwrap();
            b.update(&pool).unwrap().unwrap();
        }
        assert_eq!(a.members(), b.members());
        let est = a.predict_lcb(&[0.3], &[]).unwrap();
        assert!(est.uncertainty > 0.0);
        assert!(est.lcb <= est.mean);
    }

    #[test]
    fn single_source_pool_skips_update() {
        let rows = vec![Transition::new(vec![0.0], vec![], 0.0, vec![0.0], false, Source::Online)];
        let pool = CandidatePool::from_rows(rows);
        let mut ens = DensityEnsemble::<f32>::new(1, small_config(), 0).unwrap();
        let before = ens.members().to_vec();
        assert_eq!(ens.update(&pool).unwrap(), None);
        assert_eq!(ens.members(), &before[..]);
    }

    #[test]
    fn training_orders_online_above_offline() {
        let mut ens = DensityEnsemble::<f32>::new(1, small_config(), 11).unwrap();
        for step in 0..2000 {
            ens.update(&gaussian_pool(128, 1000 + step)).unwrap();
        }
        let held = gaussian_pool(400, 999_999);
        let (on, off) = held.split_by_source();
        let mean_w = |rows: &[&Transition]| {
            let x = state_action_matrix::<f32>(rows.iter().copied()).unwrap();
            let est = ens.predict_lcb_batch(&x).unwrap();
            est.iter().map(|e| e.mean).sum::<f64>() / est.len() as f64
        };
        assert!(mean_w(&on) > mean_w(&off));
    }

    #[test]
    fn too_few_members_rejected() {
        let cfg = DensityConfig {
            members: 1,
            ..small_config()
        };
        assert!(DensityEnsemble::<f32>::new(1, cfg, 0).is_err());
    }
}
