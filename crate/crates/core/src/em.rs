//! Maximum likelihood by EM.
//!
//! EM runs on the equivalent mixture of `(d+1)`-variate Gaussians: the E-step
//! evaluates the GMoE joint density directly, the M-step computes weighted
//! moments of `z = (x, y)`, clips the covariance eigenvalues at
//! `lambda_floor`, and maps the result back to `(c, Γ, a, b, ν)`. Clipping at a
//! floor is the exact maximizer of the Gaussian likelihood under an
//! eigenvalue lower bound, so every iteration still ascends.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::SquareMatrix;
use crate::model::{from_joint_gaussian, Component, Floors, JointGaussian, MeasureDoc, MixingMeasure};
use crate::rng::stream;
use crate::sampler::Dataset;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(serialize = "T: Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct EmSettings<T> {
    /// Stop once `|ℓ_t − ℓ_{t−1}| / (|ℓ_{t−1}| + 1) < epsilon`.
    pub epsilon: T,
    pub max_iter: usize,
    pub lambda_floor: T,
    pub nu_floor: T,
    /// Recorded and reported, never enforced during EM.
    pub beta_floor: T,
}

impl<T: Scalar> Default for EmSettings<T> {
    fn default() -> Self {
        Self {
            epsilon: T::lit(1e-5),
            max_iter: 2000,
            lambda_floor: T::lit(1e-8),
            nu_floor: T::lit(1e-8),
            beta_floor: T::zero(),
        }
    }
}

impl<T: Scalar> EmSettings<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.lambda_floor > T::zero()) || !(self.nu_floor > T::zero()) {
            return Err(Error::invalid("covariance and variance floors must be positive"));
        }
        if !(self.beta_floor >= T::zero()) {
            return Err(Error::invalid("beta_floor must be non-negative"));
        }
        Ok(())
    }

    pub fn floors(&self) -> Floors<T> {
        Floors::new(self.lambda_floor, self.nu_floor)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult<T> {
    pub g_hat: MixingMeasure<T>,
    /// Log-likelihood of the initial measure followed by one entry per iteration.
    pub loglik_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of M-step atom updates whose expert variance was clipped at the floor.
    pub nu_clips: usize,
    pub beta_floor: T,
}

impl<T: Scalar> FitResult<T> {
    pub fn final_loglik(&self) -> T {
        *self.loglik_trace.last().expect("trace holds at least the initial value")
    }

    /// Whether some fitted weight fell below `beta_floor`.
    pub fn beta_floor_violated(&self) -> bool {
        self.g_hat.min_weight() < self.beta_floor
    }

    pub fn to_doc(&self) -> FitDoc {
        FitDoc {
            measure: self.g_hat.to_doc(),
            loglik_trace: self.loglik_trace.iter().map(|v| v.to_f64_lossy()).collect(),
            iterations: self.iterations,
            converged: self.converged,
            nu_clips: self.nu_clips,
            beta_floor: self.beta_floor.to_f64_lossy(),
            beta_floor_violated: self.beta_floor_violated(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&self.to_doc())
    }
}

/// Serialized [`FitResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDoc {
    pub measure: MeasureDoc,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub nu_clips: usize,
    pub beta_floor: f64,
    pub beta_floor_violated: bool,
}

/// Posterior atom probabilities, row-major `n × k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities<T> {
    k: usize,
    data: Vec<T>,
}

impl<T: Scalar> Responsibilities<T> {
    pub fn from_rows(k: usize, data: Vec<T>) -> Result<Self> {
        if k == 0 || !data.len().is_multiple_of(k) {
            return Err(Error::invalid("responsibility matrix must be n × k with k ≥ 1"));
        }
        Ok(Self { k, data })
    }

    pub fn uniform(n: usize, k: usize) -> Self {
        Self {
            k,
            data: vec![T::one() / T::lit(k as f64); n * k],
        }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.data.len() / self.k
    }
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.k..(i + 1) * self.k]
    }
}

/// Posteriors of the latent atom given each `(x_i, y_i)`, and `Σ_i log p_G(x_i, y_i)`.
pub fn e_step<T: Scalar>(g: &MixingMeasure<T>, data: &Dataset<T>) -> Result<(Responsibilities<T>, T)> {
    if g.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            what: "dataset vs measure",
            expected: g.dim(),
            got: data.dim(),
        });
    }
    let k = g.len();
    let log_w: Vec<T> = g.weights().iter().map(|w| w.ln()).collect();
    let mut out = Vec::with_capacity(data.len() * k);
    let mut terms = vec![T::zero(); k];
    let mut loglik = T::zero();
    for (x, y) in data.rows() {
        for (t, (lw, atom)) in terms.iter_mut().zip(log_w.iter().zip(g.atoms())) {
            *t = *lw + atom.log_density(x, y);
        }
        let max = terms.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = out.len();
        out.extend(terms.iter().map(|&t| (t - max).exp()));
        let row = &mut out[start..];
        let s: T = row.iter().copied().sum();
        for r in row.iter_mut() {
            *r /= s;
        }
        loglik += max + s.ln();
    }
    Ok((Responsibilities { k, data: out }, loglik))
}

/// Weighted joint-Gaussian MLE per atom, mapped back to GMoE parameters.
pub fn m_step<T: Scalar>(resp: &Responsibilities<T>, data: &Dataset<T>, settings: &EmSettings<T>) -> Result<MixingMeasure<T>> {
    m_step_counted(resp, data, settings).map(|(g, _)| g)
}

fn m_step_counted<T: Scalar>(
    resp: &Responsibilities<T>,
    data: &Dataset<T>,
    settings: &EmSettings<T>,
) -> Result<(MixingMeasure<T>, usize)> {
    let n = data.len();
    if resp.n() != n {
        return Err(Error::DimensionMismatch {
            what: "responsibility rows vs dataset",
            expected: n,
            got: resp.n(),
        });
    }
    let d = data.dim();
    let dd = d + 1;
    let k = resp.k();
    let floors = settings.floors();
    let min_mass = T::lit(10.0) * T::epsilon() * T::lit(n as f64);

    let mut masses = vec![T::zero(); k];
    for i in 0..n {
        for (m, &r) in masses.iter_mut().zip(resp.row(i)) {
            *m += r;
        }
    }
    if let Some((l, &mass)) = masses.iter().enumerate().find(|(_, &m)| !(m >= min_mass) || m == T::zero()) {
        return Err(Error::DegenerateComponent {
            component: l,
            mass: mass.to_f64_lossy(),
            iteration: None,
        });
    }

    let mut atoms = Vec::with_capacity(k);
    let mut clips = 0;
    let mut z = vec![T::zero(); dd];
    for (l, &mass) in masses.iter().enumerate() {
        let mut mean = vec![T::zero(); dd];
        for (i, (x, y)) in data.rows().enumerate() {
            let r = resp.row(i)[l];
            for j in 0..d {
                mean[j] += r * x[j];
            }
            mean[d] += r * y;
        }
        for m in mean.iter_mut() {
            *m /= mass;
        }
        let mut cov = SquareMatrix::zeros(dd);
        for (i, (x, y)) in data.rows().enumerate() {
            let r = resp.row(i)[l];
            for j in 0..d {
                z[j] = x[j] - mean[j];
            }
            z[d] = y - mean[d];
            for p in 0..dd {
                let rp = r * z[p];
                for q in 0..=p {
                    cov[(p, q)] += rp * z[q];
                }
            }
        }
        for p in 0..dd {
            for q in 0..=p {
                let v = cov[(p, q)] / mass;
                cov[(p, q)] = v;
                cov[(q, p)] = v;
            }
        }
        let (cov, _) = cov.clamp_eigenvalues(settings.lambda_floor);
        let jg = JointGaussian::with_floor(mean, cov, settings.lambda_floor)?;
        let conv = from_joint_gaussian(&jg, &floors)?;
        clips += usize::from(conv.nu_clipped);
        atoms.push(conv.component);
    }
    let total: T = masses.iter().copied().sum();
    let weights = masses.iter().map(|&m| m / total).collect();
    Ok((MixingMeasure::new(weights, atoms)?, clips))
}

/// Runs EM from `init` until the relative log-likelihood change drops below
/// `epsilon` or `max_iter` iterations have run.
pub fn fit<T: Scalar>(data: &Dataset<T>, k: usize, init: &MixingMeasure<T>, settings: &EmSettings<T>) -> Result<FitResult<T>> {
    settings.validate()?;
    if init.len() != k {
        return Err(Error::DimensionMismatch {
            what: "initial measure atoms vs k",
            expected: k,
            got: init.len(),
        });
    }
    if data.is_empty() {
        return Err(Error::invalid("cannot fit an empty dataset"));
    }
    let (mut resp, mut loglik) = e_step(init, data)?;
    let mut g = init.clone();
    let mut trace = vec![loglik];
    let mut converged = false;
    let mut iterations = 0;
    let mut nu_clips = 0;
    while iterations < settings.max_iter {
        iterations += 1;
        let (next, clips) = m_step_counted(&resp, data, settings).map_err(|e| match e {
            Error::DegenerateComponent { component, mass, .. } => Error::DegenerateComponent {
                component,
                mass,
                iteration: Some(iterations),
            },
            other => other,
        })?;
        nu_clips += clips;
        let (next_resp, next_loglik) = e_step(&next, data)?;
        trace.push(next_loglik);
        g = next;
        resp = next_resp;
        let change = (next_loglik - loglik).abs() / (loglik.abs() + T::one());
        loglik = next_loglik;
        if change < settings.epsilon {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        g_hat: g,
        loglik_trace: trace,
        iterations,
        converged,
        nu_clips,
        beta_floor: settings.beta_floor,
    })
}

/// Favourable initialization around the true measure `g0`.
///
/// The fitted indices `0..k` are mapped onto the true atoms by a uniformly
/// random surjection (every true atom receives at least one fitted atom).
/// Each fitted atom copies its true atom with i.i.d. `N(0, perturb_sd²)` noise
/// added to every coordinate of `c`, the upper triangle of `Γ` (mirrored),
/// `a`, `b` and `ν`. The eigenvalues of `Γ` are then clipped at half the
/// smallest eigenvalue of the true `Γ`, and `ν` at half the true `ν`. Weights
/// split the true weight evenly within a cell. Atoms are emitted grouped by
/// true atom in ascending order, so `k = k₀` with `perturb_sd = 0` returns
/// `g0` itself.
pub fn init_favourable<T: Scalar>(
    g0: &MixingMeasure<T>,
    k: usize,
    seed: u64,
    perturb_sd: T,
    floors: &Floors<T>,
) -> Result<MixingMeasure<T>> {
    init_favourable_with_partition(g0, k, seed, perturb_sd, floors).map(|(g, _)| g)
}

/// [`init_favourable`], also returning the true-atom index of every fitted atom.
pub fn init_favourable_with_partition<T: Scalar>(
    g0: &MixingMeasure<T>,
    k: usize,
    seed: u64,
    perturb_sd: T,
    floors: &Floors<T>,
) -> Result<(MixingMeasure<T>, Vec<usize>)> {
    let k0 = g0.len();
    if k < k0 {
        return Err(Error::invalid(format!("k = {k} is smaller than the true order {k0}")));
    }
    if !(perturb_sd >= T::zero()) || !perturb_sd.is_finite() {
        return Err(Error::invalid("perturb_sd must be finite and non-negative"));
    }
    let mut rng = stream(seed);
    let assignment = loop {
        let draw: Vec<usize> = (0..k).map(|_| rng.random_range(0..k0)).collect();
        let mut hit = vec![false; k0];
        for &t in &draw {
            hit[t] = true;
        }
        if hit.iter().all(|&h| h) {
            break draw;
        }
    };
    let mut sizes = vec![0usize; k0];
    for &t in &assignment {
        sizes[t] += 1;
    }

    let d = g0.dim();
    let noise = |rng: &mut crate::rng::StreamRng| perturb_sd * T::lit(rng.sample::<f64, _>(StandardNormal));
    // A perturbed atom never drops below half the smallest gate eigenvalue or
    // half the expert variance of its generator; near-singular starts lose all
    // responsibility in the first E-step.
    let half = T::lit(0.5);
    let gamma_floor: Vec<T> = g0.atoms().iter().map(|a| floors.lambda.max(a.gamma().min_eigenvalue() * half)).collect();
    let mut weights = Vec::with_capacity(k);
    let mut atoms = Vec::with_capacity(k);
    let mut parents = Vec::with_capacity(k);
    for (t, (w0, atom)) in g0.iter().enumerate() {
        for _ in 0..sizes[t] {
            let c: Vec<T> = atom.c().iter().map(|&v| v + noise(&mut rng)).collect();
            let mut gamma = atom.gamma().clone();
            for i in 0..d {
                for j in i..d {
                    let v = gamma[(i, j)] + noise(&mut rng);
                    gamma[(i, j)] = v;
                    gamma[(j, i)] = v;
                }
            }
            let (gamma, _) = gamma.clamp_eigenvalues(gamma_floor[t]);
            let a: Vec<T> = atom.a().iter().map(|&v| v + noise(&mut rng)).collect();
            let b = atom.b() + noise(&mut rng);
            let nu = (atom.nu() + noise(&mut rng)).max(floors.nu.max(atom.nu() * half));
            atoms.push(Component::with_floors(c, gamma, a, b, nu, floors)?);
            weights.push(w0 / T::lit(sizes[t] as f64));
            parents.push(t);
        }
    }
    let total: T = weights.iter().copied().sum();
    if (total - T::one()).abs() > T::lit(1e-13) {
        for w in weights.iter_mut() {
            *w /= total;
        }
    }
    Ok((MixingMeasure::new(weights, atoms)?, parents))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::log_joint_density;
    use crate::sampler::sample;

    fn model_one() -> MixingMeasure<f64> {
        MixingMeasure::new(
            vec![0.3, 0.4, 0.3],
            vec![
                Component::scalar(-0.1, 0.04, 0.40, 0.34, 0.01).unwrap(),
                Component::scalar(0.1, 0.02, -0.71, -0.33, 0.03).unwrap(),
                Component::scalar(0.5, 0.01, 0.0, 0.2, 0.02).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_atom_responsibilities_are_one() {
        let g = MixingMeasure::new(vec![1.0], vec![Component::scalar(0.0, 1.0, 0.5, 0.0, 1.0).unwrap()]).unwrap();
        let ds = sample(&g, 100, 1);
        let (r, _) = e_step(&g, &ds).unwrap();
        assert!((0..100).all(|i| r.row(i) == [1.0]));
    }

    #[test]
    fn responsibilities_normalized_and_loglik_matches_density() {
        let g = model_one();
        let ds = sample(&g, 300, 2);
        let (r, ll) = e_step(&g, &ds).unwrap();
        for i in 0..ds.len() {
            assert!((r.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let direct: f64 = ds.rows().map(|(x, y)| log_joint_density(&g, x, y).unwrap()).sum();
        assert!((ll - direct).abs() < 1e-10);
    }

    #[test]
    fn well_separated_atoms_give_hard_assignments() {
        // atoms 20 gate-sd apart: posterior odds below e^-100 for the wrong atom
        let g = MixingMeasure::new(
            vec![0.5, 0.5],
            vec![
                Component::<f64>::scalar(-10.0, 0.25, 0.0, 0.0, 1.0).unwrap(),
                Component::scalar(10.0, 0.25, 0.0, 0.0, 1.0).unwrap(),
            ],
        )
        .unwrap();
        let (ds, labels) = crate::sampler::sample_with_labels(&g, 200, 5);
        let (r, _) = e_step(&g, &ds).unwrap();
        for (i, &z) in labels.iter().enumerate() {
            assert!((r.row(i)[z] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_single_atom_m_step_is_sample_moments() {
        let g = model_one();
        let ds = sample(&g, 400, 3);
        let r = Responsibilities::uniform(ds.len(), 1);
        let fitted = m_step(&r, &ds, &EmSettings::default()).unwrap();
        let jg = crate::model::to_joint_gaussian(&fitted.atoms()[0]);
        let n = ds.len() as f64;
        let mx = ds.x().iter().sum::<f64>() / n;
        let my = ds.y().iter().sum::<f64>() / n;
        let vxx = ds.x().iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
        let vxy = ds.x().iter().zip(ds.y()).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        let vyy = ds.y().iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
        assert!((jg.psi()[0] - mx).abs() < 1e-12 && (jg.psi()[1] - my).abs() < 1e-12);
        let s = jg.sigma();
        assert!((s[(0, 0)] - vxx).abs() < 1e-12);
        assert!((s[(0, 1)] - vxy).abs() < 1e-12);
        assert!((s[(1, 1)] - vyy).abs() < 1e-12);
        assert_eq!(fitted.weights(), &[1.0]);
    }

    #[test]
    fn two_point_dataset() {
        // weighted moments by hand: mean (1, 0); cov [[1, 0], [0, 0]] → y-variance clipped
        let ds = Dataset::new(1, vec![0.0, 2.0], vec![0.0, 0.0], 0, "").unwrap();
        let settings = EmSettings::<f64>::default();
        let g = m_step(&Responsibilities::uniform(2, 1), &ds, &settings).unwrap();
        let atom = &g.atoms()[0];
        assert_eq!(atom.c(), &[1.0]);
        assert!((atom.gamma()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(atom.a()[0].abs() < 1e-15);
        assert!(atom.b().abs() < 1e-15);
        assert!((atom.nu() - settings.nu_floor).abs() < 1e-20);
    }

    #[test]
    fn dead_component_is_reported() {
        let ds = Dataset::new(1, vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.5], 0, "").unwrap();
        let r = Responsibilities::from_rows(2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        match m_step(&r, &ds, &EmSettings::default()) {
            Err(Error::DegenerateComponent { component: 1, .. }) => {}
            other => panic!("expected degenerate component 1, got {other:?}"),
        }
    }

    #[test]
    fn k_one_fit_is_closed_form_after_one_iteration() {
        let truth = MixingMeasure::new(vec![1.0], vec![Component::<f64>::scalar(0.3, 0.5, 1.5, -0.2, 0.4).unwrap()]).unwrap();
        let ds = sample(&truth, 2000, 4);
        let init = MixingMeasure::new(vec![1.0], vec![Component::scalar(0.0, 1.0, 0.0, 0.0, 1.0).unwrap()]).unwrap();
        let one = EmSettings {
            max_iter: 1,
            ..EmSettings::default()
        };
        let res = fit(&ds, 1, &init, &one).unwrap();
        let closed = m_step(&Responsibilities::uniform(ds.len(), 1), &ds, &one).unwrap();
        for (a, b) in res.g_hat.atoms()[0].stacked().iter().zip(closed.atoms()[0].stacked()) {
            assert!((a - b).abs() < 1e-10_f64);
        }
        assert_eq!(res.iterations, 1);
        assert!(!res.converged);
    }

    #[test]
    fn converged_flag_matches_iteration_cap() {
        let g = model_one();
        let ds = sample(&g, 500, 6);
        let init = init_favourable(&g, 3, 1, 0.05, &Floors::default()).unwrap();
        for max_iter in [1, 3, 2000] {
            let s = EmSettings {
                max_iter,
                ..EmSettings::default()
            };
            let res = fit(&ds, 3, &init, &s).unwrap();
            assert_eq!(!res.converged, res.iterations == max_iter, "max_iter={max_iter}");
            assert_eq!(res.loglik_trace.len(), res.iterations + 1);
        }
    }

    #[test]
    fn refit_from_output_is_a_fixed_point() {
        let g = model_one();
        let ds = sample(&g, 1000, 8);
        let s = EmSettings::default();
        let res = fit(&ds, 3, &g, &s).unwrap();
        let again = fit(&ds, 3, &res.g_hat, &s).unwrap();
        let change = (again.loglik_trace[1] - again.loglik_trace[0]).abs() / (again.loglik_trace[0].abs() + 1.0);
        assert!(change < s.epsilon);
        assert_eq!(again.iterations, 1);
    }

    #[test]
    fn init_exact_when_no_perturbation() {
        let g = model_one();
        let init = init_favourable(&g, 3, 99, 0.0, &Floors::default()).unwrap();
        assert_eq!(init, g);
    }

    #[test]
    fn init_one_extra_atom() {
        let g = model_one();
        for seed in 0..20 {
            let (init, parents) = init_favourable_with_partition(&g, 4, seed, 0.01, &Floors::default()).unwrap();
            assert_eq!(init.len(), 4);
            let mut sizes = [0; 3];
            for &p in &parents {
                sizes[p] += 1;
            }
            assert_eq!(sizes.iter().filter(|&&s| s == 2).count(), 1);
            assert!(sizes.iter().all(|&s| s >= 1));
            let t = sizes.iter().position(|&s| s == 2).unwrap();
            let ws: Vec<f64> = parents.iter().zip(init.weights()).filter(|(&p, _)| p == t).map(|(_, &w)| w).collect();
            assert_eq!(ws[0], ws[1]);
            assert!((ws[0] - g.weights()[t] / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn init_rejects_small_k() {
        assert!(init_favourable(&model_one(), 2, 0, 0.01, &Floors::default()).is_err());
    }
}
