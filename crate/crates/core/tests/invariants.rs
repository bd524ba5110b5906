use mimo_scatter::channel::{capacity, TransferMatrix, TransferMode};
use mimo_scatter::linalg::CMatrix;
use mimo_scatter::par;
use mimo_scatter::quadrature::sphere_rule;
use mimo_scatter::report::stamped;
use mimo_scatter::scene::{presets, Scene};
use mimo_scatter::sweep::loglog_fit;
use mimo_scatter::{C64, V3};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::path::Path;

fn complex() -> impl Strategy<Value = C64> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| C64::new(a, b))
}

fn dominant_matrix(n: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec(complex(), n * n).prop_map(move |v| CMatrix::from_fn(n, n, |i, j| if i == j { v[i * n + j] + C64::new(2.0 * n as f64, 0.0) } else { v[i * n + j] }))
}

fn transfer(entries: Vec<Vec<C64>>) -> TransferMatrix {
    let (m, n) = (entries.len(), entries[0].len());
    TransferMatrix { f_hz: 1.0e8, mode: TransferMode::Full, rx_ids: (0..m).map(|i| format!("rx{i}")).collect(), tx_ids: (0..n).map(|i| format!("tx{i}")).collect(), entries }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lu_solves_and_transposed_solves(a in dominant_matrix(9), b in prop::collection::vec(complex(), 9)) {
        let lu = a.clone().lu().unwrap();
        let x = lu.solve(&b);
        let r = a.matvec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            prop_assert!((ri - bi).norm() < 1e-12);
        }
        let y = lu.solve_transpose(&b);
        let r = a.transpose().matvec(&y);
        for (ri, bi) in r.iter().zip(&b) {
            prop_assert!((ri - bi).norm() < 1e-12);
        }
    }

    #[test]
    fn parallel_and_sequential_factorisations_agree_bitwise(a in dominant_matrix(70)) {
        let par_lu = a.clone().lu().unwrap().inverse();
        par::force_sequential(true);
        let seq_lu = a.lu().unwrap().inverse();
        par::force_sequential(false);
        prop_assert_eq!(par_lu.as_slice(), seq_lu.as_slice());
    }

    #[test]
    fn capacity_is_nonnegative_and_increasing(
        entries in prop::collection::vec(prop::collection::vec(complex(), 3), 2),
        snr in 1e-3f64..1e3,
    ) {
        let h = transfer(entries);
        let c1 = capacity(&h, snr);
        let c2 = capacity(&h, 2.0 * snr);
        prop_assert!(c1 >= 0.0);
        prop_assert!(c2 >= c1 - 1e-12);
    }

    #[test]
    fn capacity_is_invariant_under_unit_phase(
        entries in prop::collection::vec(prop::collection::vec(complex(), 2), 2),
        phase in 0.0f64..(2.0 * PI),
    ) {
        let h = transfer(entries.clone());
        let u = C64::from_polar(1.0, phase);
        let g = transfer(entries.iter().map(|r| r.iter().map(|z| z * u).collect()).collect());
        prop_assert!((capacity(&h, 10.0) - capacity(&g, 10.0)).abs() < 1e-10);
    }

    #[test]
    fn loglog_fit_recovers_power_laws(p in -4.0f64..4.0, c in 1e-6f64..1e6, x0 in 0.01f64..10.0) {
        let x: Vec<f64> = (0..5).map(|i| x0 * 2f64.powi(i)).collect();
        let y: Vec<f64> = x.iter().map(|x| c * x.powf(p)).collect();
        let fit = loglog_fit(&x, &y).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-9);
        prop_assert!(fit.r2 > 1.0 - 1e-9 || p.abs() < 1e-9);
    }

    #[test]
    fn stamped_names_round_integer_hertz(mhz in 1u32..100_000) {
        let hz = mhz as f64 * 1.0e6;
        let omega_trip = (2.0 * PI * hz) / (2.0 * PI);
        let name = stamped(Path::new("."), "H", omega_trip, "full", "csv");
        prop_assert_eq!(name.file_name().unwrap().to_string_lossy().into_owned(), format!("H_{}Hz_full.csv", mhz as u64 * 1_000_000));
    }

    #[test]
    fn sphere_rule_integrates_low_degree_harmonics(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
        // ∫ (1 + a x + b y z + c z²) dΩ = 4π + 4πc/3
        let (dirs, w) = sphere_rule(8, 16);
        let s: f64 = dirs.iter().zip(&w).map(|(d, w)| w * (1.0 + a * d.x + b * d.y * d.z + c * d.z * d.z)).sum();
        prop_assert!((s - 4.0 * PI * (1.0 + c / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn scene_documents_round_trip(dy in 0.0f64..2.0, dz in -0.5f64..0.5) {
        let base = presets::desk();
        let Ok(scene) = base.with_scatterers_moved(|c| c + V3::new(0.0, dy, dz)) else { return Ok(()) };
        let text = serde_json::to_string(&scene.to_doc()).unwrap();
        let back = Scene::from_json(&text).unwrap();
        prop_assert_eq!(&back.regions, &scene.regions);
        prop_assert_eq!(back.to_doc(), scene.to_doc());
        prop_assert!((back.d_m - scene.d_m).abs() < 1e-12);
    }
}
