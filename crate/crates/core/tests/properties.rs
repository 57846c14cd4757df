use gmoe::em::init_favourable_with_partition;
use gmoe::experiments::{preset, ModelId};
use gmoe::linalg::SquareMatrix;
use gmoe::model::{from_joint_gaussian, to_joint_gaussian, Component, Floors, MixingMeasure};
use gmoe::voronoi::{assign_cells, classify_setting, loss_dbar, loss_dtilde};
use proptest::prelude::*;

fn component(d: usize) -> impl Strategy<Value = Component<f64>> {
    (
        prop::collection::vec(-2.0..2.0f64, d),
        prop::collection::vec(-1.0..1.0f64, d * d),
        prop::collection::vec(-2.0..2.0f64, d),
        -2.0..2.0f64,
        0.01..2.0f64,
    )
        .prop_map(move |(c, l, a, b, nu)| {
            let mut gamma = SquareMatrix::scaled_identity(d, 0.05);
            for i in 0..d {
                for j in 0..d {
                    for t in 0..d {
                        gamma[(i, j)] += l[i * d + t] * l[j * d + t];
                    }
                }
            }
            Component::new(c, gamma, a, b, nu).unwrap()
        })
}

fn measure() -> impl Strategy<Value = MixingMeasure<f64>> {
    (1usize..=3, 1usize..=4)
        .prop_flat_map(|(d, k)| (prop::collection::vec(component(d), k), prop::collection::vec(0.1..1.0f64, k)))
        .prop_map(|(atoms, raw)| {
            let total: f64 = raw.iter().sum();
            MixingMeasure::new(raw.iter().map(|w| w / total).collect(), atoms).unwrap()
        })
}

fn preset_id() -> impl Strategy<Value = ModelId> {
    prop::sample::select(ModelId::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip_is_bit_exact(g in measure()) {
        let back = MixingMeasure::<f64>::from_json(&g.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn joint_gaussian_round_trip(comp in component(2)) {
        let back = from_joint_gaussian(&to_joint_gaussian(&comp), &Floors::default()).unwrap();
        prop_assert!(!back.nu_clipped);
        for (x, y) in back.component.stacked().iter().zip(comp.stacked()) {
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn density_ignores_atom_order(g in measure(), x in prop::collection::vec(-2.0..2.0f64, 3), y in -3.0..3.0f64) {
        let x = &x[..g.dim()];
        let order: Vec<usize> = (0..g.len()).rev().collect();
        let a = g.log_density(x, y).unwrap();
        let b = g.permuted(&order).unwrap().log_density(x, y).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn favourable_partition_is_surjective_and_preserves_weights(id in preset_id(), extra in 0usize..4, seed in any::<u64>()) {
        let g0 = preset::<f64>(id);
        let k = g0.len() + extra;
        let (g, part) = init_favourable_with_partition(&g0, k, seed, 0.01, &Default::default()).unwrap();
        prop_assert_eq!(part.len(), k);
        let mut mass = vec![0.0; g0.len()];
        for (i, &t) in part.iter().enumerate() {
            mass[t] += g.weights()[i];
        }
        for (m, w) in mass.iter().zip(g0.weights()) {
            prop_assert!(*m > 0.0);
            prop_assert!((m - w).abs() < 1e-15);
        }
        prop_assert!(part.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn losses_are_non_negative_and_grow_along_a_ray(id in preset_id(), extra in 0usize..3, seed in any::<u64>(), t in 0.1..0.9f64) {
        let g0 = preset::<f64>(id);
        let k = g0.len() + extra;
        let (g, part) = init_favourable_with_partition(&g0, k, seed, 0.02, &Default::default()).unwrap();
        // Shrink every atom toward its generator by `t`; weights stay fixed.
        let shrunk = MixingMeasure::new(
            g.weights().to_vec(),
            g.atoms()
                .iter()
                .zip(&part)
                .map(|(atom, &j)| {
                    let a0 = &g0.atoms()[j];
                    let mix = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| q + t * (p - q)).collect::<Vec<_>>();
                    let d = atom.dim();
                    let gamma = SquareMatrix::from_row_major(d, mix(atom.gamma().as_slice(), a0.gamma().as_slice())).unwrap();
                    Component::new(mix(atom.c(), a0.c()), gamma, mix(atom.a(), a0.a()), a0.b() + t * (atom.b() - a0.b()), a0.nu() + t * (atom.nu() - a0.nu())).unwrap()
                })
                .collect(),
        )
        .unwrap();
        prop_assume!(assign_cells(&g, &g0).unwrap().cells == assign_cells(&shrunk, &g0).unwrap().cells);
        let setting = classify_setting(&g0, 1e-12);
        let near = loss_dbar(&shrunk, &g0).unwrap();
        let far = loss_dbar(&g, &g0).unwrap();
        prop_assert!(near >= 0.0);
        prop_assert!(near <= far + 1e-15);
        let near = loss_dtilde(&shrunk, &g0, &setting).unwrap();
        let far = loss_dtilde(&g, &g0, &setting).unwrap();
        prop_assert!(near >= 0.0);
        prop_assert!(near <= far + 1e-15);
    }
}
