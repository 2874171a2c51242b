//! Univariate normal mixtures fitted by EM, with BIC model selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{LasrError, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Fitted normal mixture. Components are sorted by mean; the first one is
/// the background.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    weights: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
    loglik: f64,
}

impl MixtureModel {
    /// Build a model from explicit parameters. Weights are renormalized;
    /// components are reordered by ascending mean.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64>) -> Result<Self> {
        let m = weights.len();
        if m == 0 || means.len() != m || sds.len() != m {
            return Err(LasrError::invalid(
                "mixture needs equally many weights, means and sds (at least one)",
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(LasrError::invalid("mixture weights must be positive"));
        }
        if sds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(LasrError::invalid("mixture sds must be positive"));
        }
        if means.iter().any(|mu| !mu.is_finite()) {
            return Err(LasrError::invalid("mixture means must be finite"));
        }
        let total: f64 = weights.iter().sum();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
        Ok(MixtureModel {
            weights: order.iter().map(|&i| weights[i] / total).collect(),
            means: order.iter().map(|&i| means[i]).collect(),
            sds: order.iter().map(|&i| sds[i]).collect(),
            loglik: f64::NAN,
        })
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    /// Log-likelihood of the data the model was fitted to (NaN for models
    /// built by hand).
    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    /// Prior probability of the background class.
    pub fn beta1(&self) -> f64 {
        self.weights[0]
    }

    /// Prior probability of the signal class (all non-background components).
    pub fn beta2(&self) -> f64 {
        self.weights[1..].iter().sum()
    }

    /// Weighted density of component `k` at `z`.
    pub fn component_density(&self, k: usize, z: f64) -> f64 {
        let u = (z - self.means[k]) / self.sds[k];
        self.weights[k] * (-0.5 * u * u - LN_SQRT_2PI).exp() / self.sds[k]
    }

    pub fn density(&self, z: f64) -> f64 {
        (0..self.m()).map(|k| self.component_density(k, z)).sum()
    }

    /// Free parameter count: m means, m sds and m-1 weights.
    pub fn n_params(&self) -> usize {
        3 * self.m() - 1
    }

    /// Schwarz criterion in the "larger is better" form.
    pub fn bic(&self, n: usize) -> f64 {
        self.loglik - 0.5 * self.n_params() as f64 * (n as f64).ln()
    }

    pub fn loglik_of(&self, samples: &[f64]) -> f64 {
        let mut logs = vec![0.0; self.m()];
        samples
            .iter()
            .map(|&x| {
                for (k, l) in logs.iter_mut().enumerate() {
                    *l = self.log_component(k, x);
                }
                log_sum_exp(&logs)
            })
            .sum()
    }

    fn log_component(&self, k: usize, x: f64) -> f64 {
        let u = (x - self.means[k]) / self.sds[k];
        self.weights[k].ln() - 0.5 * u * u - LN_SQRT_2PI - self.sds[k].ln()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// EM starting values and restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    /// Number of EM runs; the first starts at the quantile initialization,
    /// the rest at jittered copies of it.
    pub restarts: usize,
    pub seed: u64,
    /// Jitter sd for restart means, as a fraction of the sample sd.
    pub jitter: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            restarts: 5,
            seed: 0,
            jitter: 0.25,
        }
    }
}

/// EM stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmControl {
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmControl {
    fn default() -> Self {
        EmControl {
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

/// Result of [`fit_mixture`].
#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub model: MixtureModel,
    /// False when `max_iter` was reached before the tolerance.
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood after every EM step of the winning run, starting with
    /// the initial parameters.
    pub loglik_trace: Vec<f64>,
    /// Whether every run's trace was nondecreasing.
    pub monotone: bool,
}

struct Sample {
    xs: Vec<f64>,
    /// Distinct values of `xs` with their multiplicities.
    values: Vec<f64>,
    counts: Vec<f64>,
    sd: f64,
}

impl Sample {
    fn new(samples: &[f64], m: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(LasrError::invalid("no samples to fit"));
        }
        if m == 0 {
            return Err(LasrError::invalid("component count must be at least 1"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(LasrError::invalid("samples must be finite"));
        }
        let mut xs = samples.to_vec();
        xs.sort_by(f64::total_cmp);
        let distinct = 1 + xs.windows(2).filter(|w| w[0] != w[1]).count();
        if distinct < m.max(2) {
            return Err(LasrError::Degenerate(format!(
                "{distinct} distinct sample value(s) cannot support a {m}-component fit"
            )));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut values: Vec<f64> = Vec::with_capacity(distinct);
        let mut counts: Vec<f64> = Vec::with_capacity(distinct);
        for &x in &xs {
            if values.last() == Some(&x) {
                *counts.last_mut().unwrap() += 1.0;
            } else {
                values.push(x);
                counts.push(1.0);
            }
        }
        Ok(Sample { xs, values, counts, sd })
    }

    fn quantile(&self, p: f64) -> f64 {
        let pos = p * (self.xs.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        self.xs[lo] + (pos - lo as f64) * (self.xs[hi] - self.xs[lo])
    }
}

struct Params {
    weights: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

struct Run {
    params: Params,
    trace: Vec<f64>,
    converged: bool,
    monotone: bool,
}

/// Fit an `m`-component normal mixture by EM.
///
/// Standard deviations are floored at `1e-3` times the sample sd. Among the
/// restarts, the run with the highest final log-likelihood wins.
pub fn fit_mixture(
    samples: &[f64],
    m: usize,
    init: &InitSpec,
    control: EmControl,
) -> Result<MixtureFit> {
    let sample = Sample::new(samples, m)?;
    let floor = 1e-3 * sample.sd;
    let base_sd = (sample.sd / m as f64).max(floor);
    let base_means: Vec<f64> = (1..=m)
        .map(|k| sample.quantile((2 * k - 1) as f64 / (2 * m) as f64))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
    let mut best: Option<Run> = None;
    let mut all_monotone = true;
    for r in 0..init.restarts.max(1) {
        let mut means = base_means.clone();
        if r > 0 {
            for mu in &mut means {
                let z: f64 = rng.sample(StandardNormal);
                *mu += z * init.jitter * sample.sd;
            }
            means.sort_by(f64::total_cmp);
        }
        let start = Params {
            weights: vec![1.0 / m as f64; m],
            means,
            sds: vec![base_sd; m],
        };
        let Some(run) = run_em(&sample, start, floor, control) else {
            continue;
        };
        all_monotone &= run.monotone;
        let better = match &best {
            None => true,
            Some(b) => run.trace.last().unwrap() > b.trace.last().unwrap(),
        };
        if better {
            best = Some(run);
        }
    }
    let run = best.ok_or_else(|| {
        LasrError::Numeric(format!("every EM run collapsed a component (m = {m})"))
    })?;
    let loglik = *run.trace.last().unwrap();
    let mut model = MixtureModel::new(run.params.weights, run.params.means, run.params.sds)?;
    model.loglik = loglik;
    Ok(MixtureFit {
        model,
        converged: run.converged,
        iterations: run.trace.len() - 1,
        loglik_trace: run.trace,
        monotone: all_monotone,
    })
}

/// One EM run over the distinct values weighted by their counts; `None` if a
/// component loses all its mass.
fn run_em(sample: &Sample, mut p: Params, floor: f64, control: EmControl) -> Option<Run> {
    let (xs, counts) = (&sample.values, &sample.counts);
    let m = p.weights.len();
    let n = xs.len();
    let total_n = sample.xs.len() as f64;
    let mut resp = vec![0.0; n * m];
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut monotone = true;
    let mut logs = vec![0.0; m];

    for iter in 0..=control.max_iter {
        // E-step at the current parameters
        let log_w: Vec<f64> = p.weights.iter().map(|w| w.ln()).collect();
        let log_s: Vec<f64> = p.sds.iter().map(|s| s.ln()).collect();
        let mut ll = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            for k in 0..m {
                let u = (x - p.means[k]) / p.sds[k];
                logs[k] = log_w[k] - 0.5 * u * u - LN_SQRT_2PI - log_s[k];
            }
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let row = &mut resp[i * m..(i + 1) * m];
            let mut total = 0.0;
            for k in 0..m {
                row[k] = (logs[k] - top).exp();
                total += row[k];
            }
            ll += counts[i] * (top + total.ln());
            for r in row.iter_mut() {
                *r /= total;
            }
        }
        if let Some(&prev) = trace.last() {
            // tolerate last-bit rounding in the sum
            if ll < prev - 1e-9 * prev.abs().max(1.0) {
                monotone = false;
            }
            debug_assert!(monotone, "EM log-likelihood decreased: {prev} -> {ll}");
            trace.push(ll);
            if ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < control.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        if iter == control.max_iter {
            break;
        }

        // M-step
        for k in 0..m {
            let mut nk = 0.0;
            let mut sx = 0.0;
            for (i, &x) in xs.iter().enumerate() {
                let r = counts[i] * resp[i * m + k];
                nk += r;
                sx += r * x;
            }
            if nk <= 1e-12 * total_n {
                return None;
            }
            let mu = sx / nk;
            let mut ss = 0.0;
            for (i, &x) in xs.iter().enumerate() {
                ss += counts[i] * resp[i * m + k] * (x - mu) * (x - mu);
            }
            p.weights[k] = nk / total_n;
            p.means[k] = mu;
            p.sds[k] = (ss / nk).sqrt().max(floor);
        }
    }
    Some(Run {
        params: p,
        trace,
        converged,
        monotone,
    })
}

/// Fit every candidate component count and keep the largest BIC; ties go to
/// the smaller count.
pub fn select_model(
    samples: &[f64],
    candidate_ms: &[usize],
    init: &InitSpec,
    control: EmControl,
) -> Result<MixtureFit> {
    if candidate_ms.is_empty() {
        return Err(LasrError::invalid("no candidate component counts"));
    }
    let mut ms = candidate_ms.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let n = samples.len();
    let mut best: Option<(f64, MixtureFit)> = None;
    for m in ms {
        let fit = fit_mixture(samples, m, init, control)?;
        let bic = fit.model.bic(n);
        if best.as_ref().map_or(true, |(b, _)| bic > *b) {
            best = Some((bic, fit));
        }
    }
    Ok(best.unwrap().1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn draw_mixture(seed: u64, n: usize, parts: &[(f64, f64, f64)]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = parts.last().unwrap();
                for p in parts {
                    acc += p.0;
                    if u < acc {
                        chosen = p;
                        break;
                    }
                }
                Normal::new(chosen.1, chosen.2).unwrap().sample(&mut rng)
            })
            .collect()
    }

    #[test]
    fn single_component_is_closed_form() {
        let xs = draw_mixture(3, 1000, &[(1.0, 5.0, 2.0)]);
        let fit = fit_mixture(&xs, 1, &InitSpec::default(), EmControl::default()).unwrap();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((fit.model.means()[0] - mean).abs() < 1e-12);
        assert!((fit.model.sds()[0] - sd).abs() < 1e-12);
        assert_eq!(fit.model.weights(), &[1.0]);
        assert!(fit.converged);
    }

    #[test]
    fn recovers_two_components_within_standard_errors() {
        // asymptotic SEs for well-separated components with n = 5000
        let n: f64 = 5000.0;
        let se_mu = 1.0 / (0.5 * n).sqrt();
        let se_sd = 1.0 / (2.0 * 0.5 * n).sqrt();
        let se_w = (0.25 / n).sqrt();
        let mut good = 0;
        for seed in 0..10 {
            let xs = draw_mixture(100 + seed, 5000, &[(0.5, 0.0, 1.0), (0.5, 10.0, 1.0)]);
            let init = InitSpec {
                seed,
                ..InitSpec::default()
            };
            let fit = fit_mixture(&xs, 2, &init, EmControl::default()).unwrap();
            let md = &fit.model;
            let ok = (md.means()[0] - 0.0).abs() <= 5.0 * se_mu
                && (md.means()[1] - 10.0).abs() <= 5.0 * se_mu
                && (md.sds()[0] - 1.0).abs() <= 5.0 * se_sd
                && (md.sds()[1] - 1.0).abs() <= 5.0 * se_sd
                && (md.weights()[0] - 0.5).abs() <= 5.0 * se_w;
            good += ok as usize;
            assert!(fit.monotone);
        }
        assert!(good >= 9, "only {good}/10 seeds within 5 SE");
    }

    #[test]
    fn loglik_trace_is_nondecreasing_on_awkward_data() {
        for seed in 0..5 {
            let xs = draw_mixture(seed, 400, &[(0.3, 0.0, 3.0), (0.4, 2.0, 0.5), (0.3, 2.5, 4.0)]);
            for m in 1..=4 {
                let fit = fit_mixture(
                    &xs,
                    m,
                    &InitSpec {
                        seed,
                        ..Default::default()
                    },
                    EmControl::default(),
                )
                .unwrap();
                assert!(fit.monotone);
                for w in fit.loglik_trace.windows(2) {
                    assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let xs = vec![3.0; 50];
        let e = fit_mixture(&xs, 2, &InitSpec::default(), EmControl::default()).unwrap_err();
        assert!(matches!(e, LasrError::Degenerate(_)));
        assert!(fit_mixture(&[], 1, &InitSpec::default(), EmControl::default()).is_err());
    }

    #[test]
    fn weights_sum_to_one_and_means_sorted() {
        let xs = draw_mixture(9, 2000, &[(0.2, 8.0, 1.0), (0.5, 0.0, 1.0), (0.3, 4.0, 1.0)]);
        let fit = fit_mixture(&xs, 3, &InitSpec::default(), EmControl::default()).unwrap();
        let md = &fit.model;
        assert!((md.weights().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(md.weights().iter().all(|w| *w > 0.0));
        assert!(md.means().windows(2).all(|w| w[0] <= w[1]));
        assert!((md.loglik() - md.loglik_of(&xs)).abs() < 1e-6 * md.loglik().abs());
    }

    #[test]
    fn bic_prefers_one_component_for_normal_data() {
        let mut picked_one = 0;
        for seed in 0..20 {
            let xs = draw_mixture(500 + seed, 1000, &[(1.0, 0.0, 1.0)]);
            let fit = select_model(&xs, &[1, 2], &InitSpec::default(), EmControl::default())
                .unwrap();
            picked_one += (fit.model.m() == 1) as usize;
        }
        assert!(picked_one >= 18, "m = 1 chosen {picked_one}/20 times");
    }

    #[test]
    fn bic_uses_three_m_minus_one_parameters() {
        let md = MixtureModel::new(vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(md.n_params(), 5);
    }
}
