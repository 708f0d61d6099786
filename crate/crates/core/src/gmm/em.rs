use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GmmModel;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::math::log_sum_exp;

/// Absolute lower bound on any component variance.
pub const MIN_VARIANCE: f64 = 1e-10;

// Responsibility mass below which a component counts as empty.
const EMPTY_MASS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub num_components: usize,
    pub max_iters: usize,
    /// Stop once `(ll_new - ll_old) / |ll_old|` falls below this.
    pub rel_tol: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor: f64,
    pub seed: u64,
    pub num_restarts: usize,
}

impl EmConfig {
    pub fn speaker_default() -> Self {
        Self {
            num_components: 32,
            max_iters: 100,
            rel_tol: 1e-6,
            variance_floor: 1e-4,
            seed: 0,
            num_restarts: 1,
        }
    }

    pub fn test_default() -> Self {
        Self {
            num_components: 8,
            ..Self::speaker_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_components == 0 {
            return Err(Error::InvalidConfig("num_components must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if !(self.variance_floor.is_finite() && self.variance_floor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "variance_floor must be positive, got {}",
                self.variance_floor
            )));
        }
        if self.num_restarts == 0 {
            return Err(Error::InvalidConfig("num_restarts must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for EmConfig {
    fn default() -> Self {
        Self::speaker_default()
    }
}

/// Log-likelihood history of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    /// Total data log-likelihood: entry 0 is the initialisation, entry `t`
    /// follows the `t`-th M-step.
    pub log_likelihoods: Vec<f64>,
    /// `reseeded[t - 1]` is set when the `t`-th M-step re-seeded an empty
    /// component, which may lower the likelihood.
    pub reseeded: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    pub log_likelihood: f64,
    pub best_restart: usize,
    pub traces: Vec<EmTrace>,
    /// All frames were identical and a single component was fitted instead.
    pub degenerate: bool,
}

/// Fits a diagonal GMM by EM, keeping the best of `num_restarts` runs.
pub fn em_fit(features: &FeatureMatrix, config: &EmConfig) -> Result<GmmModel> {
    em_fit_detailed(features, config).map(|fit| fit.model)
}

pub fn em_fit_detailed(features: &FeatureMatrix, config: &EmConfig) -> Result<EmFit> {
    config.validate()?;
    let n = features.num_frames();
    if n < config.num_components {
        return Err(Error::TooFewFrames {
            needed: config.num_components,
            got: n,
        });
    }

    let global_var = features.row_variances();
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (v * config.variance_floor).max(MIN_VARIANCE))
        .collect();
    let problem = Problem {
        data: features,
        floor: &floor,
        global_var: &global_var,
    };

    let first = features.frame(0);
    if config.num_components > 1 && features.frames().all(|x| x == first) {
        log::warn!(
            "all {n} frames are identical; fitting one component instead of {}",
            config.num_components
        );
        let model = problem.single_component();
        let ll = problem.total_log_likelihood(&model);
        return Ok(EmFit {
            model,
            log_likelihood: ll,
            best_restart: 0,
            traces: vec![EmTrace {
                log_likelihoods: vec![ll],
                reseeded: Vec::new(),
            }],
            degenerate: true,
        });
    }

    let mut best: Option<(GmmModel, f64, usize)> = None;
    let mut traces = Vec::with_capacity(config.num_restarts);
    for restart in 0..config.num_restarts {
        let seed = config
            .seed
            .wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, ll, trace) = problem.run(config, &mut rng);
        traces.push(trace);
        if best.as_ref().is_none_or(|(_, best_ll, _)| ll > *best_ll) {
            best = Some((model, ll, restart));
        }
    }
    let (model, log_likelihood, best_restart) = best.expect("at least one restart");
    if !log_likelihood.is_finite() {
        return Err(Error::Numeric("EM produced a non-finite log-likelihood".into()));
    }
    Ok(EmFit {
        model,
        log_likelihood,
        best_restart,
        traces,
        degenerate: false,
    })
}

struct Problem<'a> {
    data: &'a FeatureMatrix,
    floor: &'a [f64],
    global_var: &'a [f64],
}

struct EStep {
    log_likelihood: f64,
    // frame-major n × k
    resp: Vec<f64>,
    frame_ll: Vec<f64>,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn floored_global(&self) -> Vec<f64> {
        self.global_var
            .iter()
            .zip(self.floor)
            .map(|(v, f)| v.max(*f))
            .collect()
    }

    fn single_component(&self) -> GmmModel {
        GmmModel::from_parts_unchecked(
            vec![1.0],
            vec![self.data.row_means()],
            vec![self.floored_global()],
        )
    }

    fn run(&self, config: &EmConfig, rng: &mut ChaCha8Rng) -> (GmmModel, f64, EmTrace) {
        let mut model = self.initialise(config.num_components, rng);
        let mut e = self.e_step(&model);
        let mut trace = EmTrace {
            log_likelihoods: vec![e.log_likelihood],
            reseeded: Vec::new(),
        };
        for _ in 0..config.max_iters {
            let (next, reseeded) = self.m_step(&e);
            let next_e = self.e_step(&next);
            let prev = e.log_likelihood;
            let gain = (next_e.log_likelihood - prev) / prev.abs().max(f64::MIN_POSITIVE);
            trace.log_likelihoods.push(next_e.log_likelihood);
            trace.reseeded.push(reseeded);
            model = next;
            e = next_e;
            if !reseeded && gain < config.rel_tol {
                break;
            }
        }
        (model, e.log_likelihood, trace)
    }

    /// k-means++ seeding followed by one hard-assignment M-step.
    fn initialise(&self, k: usize, rng: &mut ChaCha8Rng) -> GmmModel {
        let n = self.data.num_frames();
        let mut centers: Vec<usize> = Vec::with_capacity(k);
        centers.push(rng.random_range(0..n));
        let mut dist2: Vec<f64> = self
            .data
            .frames()
            .map(|x| sq_dist(x, self.data.frame(centers[0])))
            .collect();
        while centers.len() < k {
            let total: f64 = dist2.iter().sum();
            let next = if total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = n - 1;
                for (i, d) in dist2.iter().enumerate() {
                    acc += d;
                    if acc > target && *d > 0.0 {
                        pick = i;
                        break;
                    }
                }
                if dist2[pick] == 0.0 {
                    // rounding at the tail; fall back to the farthest point
                    pick = argmax(&dist2);
                }
                pick
            } else {
                rng.random_range(0..n)
            };
            centers.push(next);
            let c = self.data.frame(next);
            for (d, x) in dist2.iter_mut().zip(self.data.frames()) {
                *d = d.min(sq_dist(x, c));
            }
        }

        let dim = self.dim();
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        let assignment: Vec<usize> = self
            .data
            .frames()
            .map(|x| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (j, &c) in centers.iter().enumerate() {
                    let d = sq_dist(x, self.data.frame(c));
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                best
            })
            .collect();
        for (x, &j) in self.data.frames().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(x) {
                *s += v;
            }
        }
        let means: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                if counts[j] == 0 {
                    self.data.frame(centers[j]).to_vec()
                } else {
                    sums[j].iter().map(|s| s / counts[j] as f64).collect()
                }
            })
            .collect();
        let mut sq = vec![vec![0.0; dim]; k];
        for (x, &j) in self.data.frames().zip(&assignment) {
            for ((s, v), m) in sq[j].iter_mut().zip(x).zip(&means[j]) {
                let d = v - m;
                *s += d * d;
            }
        }
        let fallback = self.floored_global();
        let variances: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                if counts[j] < 2 {
                    fallback.clone()
                } else {
                    sq[j]
                        .iter()
                        .zip(self.floor)
                        .map(|(s, f)| (s / counts[j] as f64).max(*f))
                        .collect()
                }
            })
            .collect();
        let mass: Vec<f64> = counts.iter().map(|&c| c.max(1) as f64).collect();
        let total: f64 = mass.iter().sum();
        let weights = mass.iter().map(|m| m / total).collect();
        GmmModel::from_parts_unchecked(weights, means, variances)
    }

    fn e_step(&self, model: &GmmModel) -> EStep {
        let k = model.num_components();
        let n = self.data.num_frames();
        let mut resp = vec![0.0; n * k];
        let mut frame_ll = Vec::with_capacity(n);
        for (x, r) in self.data.frames().zip(resp.chunks_exact_mut(k)) {
            model.component_log_terms(x, r);
            let lse = log_sum_exp(r);
            for v in r.iter_mut() {
                *v = (*v - lse).exp();
            }
            frame_ll.push(lse);
        }
        EStep {
            log_likelihood: frame_ll.iter().sum(),
            resp,
            frame_ll,
        }
    }

    fn m_step(&self, e: &EStep) -> (GmmModel, bool) {
        let n = self.data.num_frames();
        let k = e.resp.len() / n;
        let dim = self.dim();
        let mut mass = vec![0.0; k];
        let mut means = vec![vec![0.0; dim]; k];
        for (x, r) in self.data.frames().zip(e.resp.chunks_exact(k)) {
            for j in 0..k {
                mass[j] += r[j];
                for (m, v) in means[j].iter_mut().zip(x) {
                    *m += r[j] * v;
                }
            }
        }
        let mut variances = vec![vec![0.0; dim]; k];
        for j in 0..k {
            if mass[j] > EMPTY_MASS {
                means[j].iter_mut().for_each(|m| *m /= mass[j]);
            }
        }
        for (x, r) in self.data.frames().zip(e.resp.chunks_exact(k)) {
            for j in 0..k {
                if mass[j] <= EMPTY_MASS {
                    continue;
                }
                for ((s, v), m) in variances[j].iter_mut().zip(x).zip(&means[j]) {
                    let d = v - m;
                    *s += r[j] * d * d;
                }
            }
        }

        let mut reseeded = false;
        let mut worst: Vec<usize> = (0..n).collect();
        worst.sort_by(|&a, &b| e.frame_ll[a].total_cmp(&e.frame_ll[b]).then(a.cmp(&b)));
        let mut worst = worst.into_iter();
        let fallback = self.floored_global();
        for j in 0..k {
            if mass[j] > EMPTY_MASS {
                for (s, f) in variances[j].iter_mut().zip(self.floor) {
                    *s = (*s / mass[j]).max(*f);
                }
            } else {
                reseeded = true;
                let at = worst.next().unwrap_or(0);
                means[j] = self.data.frame(at).to_vec();
                variances[j] = fallback.clone();
                mass[j] = 1.0;
            }
        }
        let total: f64 = mass.iter().sum();
        let weights = mass.iter().map(|m| m / total).collect();
        (GmmModel::from_parts_unchecked(weights, means, variances), reseeded)
    }

    fn total_log_likelihood(&self, model: &GmmModel) -> f64 {
        self.e_step(model).log_likelihood
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn gaussian_blobs(seed: u64, per: usize, centers: &[[f64; 2]]) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = Vec::new();
        for c in centers {
            for _ in 0..per {
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                frames.push([c[0] + zx, c[1] + zy]);
            }
        }
        FeatureMatrix::from_frames(2, frames, 0).unwrap()
    }

    fn config(k: usize) -> EmConfig {
        EmConfig {
            num_components: k,
            ..EmConfig::speaker_default()
        }
    }

    #[test]
    fn single_component_is_closed_form() {
        let data = gaussian_blobs(3, 200, &[[1.0, -2.0], [4.0, 0.5]]);
        let model = em_fit(&data, &config(1)).unwrap();
        assert_eq!(model.weights(), &[1.0]);
        let mean = data.row_means();
        let var = data.row_variances();
        for d in 0..2 {
            assert!((model.means()[0][d] - mean[d]).abs() < 1e-10);
            assert!((model.variances()[0][d] - var[d]).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_two_separated_blobs() {
        let data = gaussian_blobs(11, 500, &[[-5.0, -5.0], [5.0, 5.0]]);
        // moment oracle: the generating labels are known
        let first = FeatureMatrix::from_frame_major(2, data.as_frame_major()[..1000].to_vec(), 0).unwrap();
        let second = FeatureMatrix::from_frame_major(2, data.as_frame_major()[1000..].to_vec(), 0).unwrap();
        let oracle = [first.row_means(), second.row_means()];

        let model = em_fit(&data, &config(2)).unwrap();
        let mut order: Vec<usize> = (0..2).collect();
        order.sort_by(|&a, &b| model.means()[a][0].total_cmp(&model.means()[b][0]));
        for (slot, &j) in order.iter().enumerate() {
            let target = if slot == 0 { -5.0 } else { 5.0 };
            for d in 0..2 {
                assert!((model.means()[j][d] - target).abs() < 0.3);
                assert!((model.means()[j][d] - oracle[slot][d]).abs() < 1e-3);
            }
            assert!((model.weights()[j] - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn one_iteration_does_not_decrease_likelihood() {
        let data = gaussian_blobs(4, 100, &[[0.0, 0.0], [3.0, 1.0], [-2.0, 4.0]]);
        let fit = em_fit_detailed(
            &data,
            &EmConfig {
                max_iters: 1,
                ..config(3)
            },
        )
        .unwrap();
        let trace = &fit.traces[0];
        assert_eq!(trace.log_likelihoods.len(), 2);
        assert!(trace.log_likelihoods[1] >= trace.log_likelihoods[0]);
    }

    #[test]
    fn zero_iterations_rejected() {
        let data = gaussian_blobs(4, 10, &[[0.0, 0.0]]);
        let cfg = EmConfig {
            max_iters: 0,
            ..config(1)
        };
        assert!(matches!(em_fit(&data, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn too_few_frames() {
        let data = gaussian_blobs(4, 3, &[[0.0, 0.0]]);
        assert!(matches!(em_fit(&data, &config(4)), Err(Error::TooFewFrames { needed: 4, got: 3 })));
    }

    #[test]
    fn identical_frames_fall_back_to_one_component() {
        let data = FeatureMatrix::from_frames(2, vec![[1.5, -0.5]; 20], 0).unwrap();
        let fit = em_fit_detailed(&data, &config(4)).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.model.num_components(), 1);
        assert_eq!(fit.model.means()[0], vec![1.5, -0.5]);
        assert!(fit.model.variances()[0].iter().all(|&v| v >= MIN_VARIANCE));
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn duplicate_heavy_data_survives() {
        // only two distinct points but four components requested
        let mut frames = vec![[0.0, 0.0]; 10];
        frames.extend(vec![[1.0, 1.0]; 10]);
        let data = FeatureMatrix::from_frames(2, frames, 0).unwrap();
        let fit = em_fit_detailed(&data, &config(4)).unwrap();
        let total: f64 = fit.model.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(fit.log_likelihood.is_finite());
    }

    #[test]
    fn restarts_keep_the_best() {
        let data = gaussian_blobs(8, 60, &[[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0]]);
        let fit = em_fit_detailed(
            &data,
            &EmConfig {
                num_restarts: 4,
                ..config(4)
            },
        )
        .unwrap();
        assert_eq!(fit.traces.len(), 4);
        for t in &fit.traces {
            assert!(fit.log_likelihood >= *t.log_likelihoods.last().unwrap());
        }
    }

    #[test]
    fn same_seed_same_model() {
        let data = gaussian_blobs(2, 80, &[[0.0, 0.0], [2.0, 3.0]]);
        let a = em_fit(&data, &config(3)).unwrap();
        let b = em_fit(&data, &config(3)).unwrap();
        assert_eq!(a, b);
    }
}
