//! Checks against independent references: quadrature, closed-form normal
//! CDFs and known truths.

use gmoe::em::{fit, init_favourable, init_favourable_with_partition, EmSettings};
use gmoe::experiments::{preset, tv_distance, ModelId, TvMethod};
use gmoe::model::{Component, MixingMeasure};
use gmoe::sampler::sample_with_labels;
use gmoe::voronoi::assign_cells;
use statrs::distribution::{ContinuousCDF, Normal};

fn distance(a: &Component<f64>, b: &Component<f64>) -> f64 {
    a.stacked().iter().zip(b.stacked()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn one_dimensional_presets_integrate_to_one() {
    let h = 0.01;
    for id in [ModelId::Model1, ModelId::Model2] {
        let g = preset::<f64>(id);
        let mut total = 0.0;
        for i in 0..2000 {
            let x = -10.0 + (i as f64 + 0.5) * h;
            for j in 0..2000 {
                let y = -10.0 + (j as f64 + 0.5) * h;
                total += g.log_density(&[x], y).unwrap().exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "{id}: {total}");
    }
}

fn ks_statistic(mut values: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn sampler_marginals_match_normal_mixture_cdfs() {
    let g = preset::<f64>(ModelId::Model1);
    let n = 50_000;
    let (data, _) = sample_with_labels(&g, n, 2718);
    let x_law: Vec<(f64, Normal)> = g.iter().map(|(w, a)| (w, Normal::new(a.c()[0], a.gamma()[(0, 0)].sqrt()).unwrap())).collect();
    let y_law: Vec<(f64, Normal)> = g
        .iter()
        .map(|(w, a)| {
            let (c, gam, s) = (a.c()[0], a.gamma()[(0, 0)], a.a()[0]);
            (w, Normal::new(s * c + a.b(), (s * s * gam + a.nu()).sqrt()).unwrap())
        })
        .collect();
    let mix = |law: &[(f64, Normal)], v: f64| law.iter().map(|(w, d)| w * d.cdf(v)).sum::<f64>();
    // 1.95 / sqrt(n) is the 0.1% critical value.
    let crit = 1.95 / (n as f64).sqrt();
    let dx = ks_statistic(data.x().to_vec(), |v| mix(&x_law, v));
    let dy = ks_statistic(data.y().to_vec(), |v| mix(&y_law, v));
    assert!(dx < crit, "x: {dx} vs {crit}");
    assert!(dy < crit, "y: {dy} vs {crit}");
}

#[test]
fn tv_matches_shifted_expert_closed_form() {
    // Same gate, expert means differing by 0.2 at unit variance: TV = 2Φ(0.1) − 1.
    let one = |b: f64| MixingMeasure::new(vec![1.0], vec![Component::scalar(0.0, 1.0, 0.5, b, 1.0).unwrap()]).unwrap();
    let exact = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(0.1) - 1.0;
    let grid = tv_distance(&one(0.0), &one(0.2), TvMethod::Grid, 800, 0).unwrap();
    assert!((grid.value - exact).abs() < 1e-4, "grid {} vs {exact}", grid.value);
    let mc = tv_distance(&one(0.0), &one(0.2), TvMethod::Mc, 200_000, 5).unwrap();
    let se = mc.stderr.unwrap();
    assert!((mc.value - exact).abs() < 4.0 * se, "mc {} ± {se} vs {exact}", mc.value);
}

#[test]
fn favourable_init_stays_near_its_generator() {
    for id in ModelId::ALL {
        let g0 = preset::<f64>(id);
        for seed in 0..50 {
            let k = 3 + (seed as usize % 3);
            let (g, part) = init_favourable_with_partition(&g0, k, seed, 0.01, &Default::default()).unwrap();
            for (atom, &t) in g.atoms().iter().zip(&part) {
                let dist = distance(atom, &g0.atoms()[t]);
                assert!(dist < 0.1, "{id}, seed {seed}: {dist}");
            }
        }
    }
}

#[test]
fn em_recovers_model_one_atoms() {
    let g0 = preset::<f64>(ModelId::Model1);
    let settings = EmSettings::<f64>::default();
    let (data, _) = sample_with_labels(&g0, 10_000, 31);
    let init = init_favourable(&g0, 3, 32, 0.01, &settings.floors()).unwrap();
    let res = fit(&data, 3, &init, &settings).unwrap();
    assert!(res.converged);
    let cells = assign_cells(&res.g_hat, &g0).unwrap();
    assert_eq!(cells.cell_sizes(), vec![1, 1, 1]);
    for (j, cell) in cells.cells.iter().enumerate() {
        let dist = distance(&res.g_hat.atoms()[cell[0]], &g0.atoms()[j]);
        assert!(dist < 0.1, "atom {j}: {dist}");
    }
}
