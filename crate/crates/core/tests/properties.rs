use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use proptest::collection::vec;
use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assume, proptest, ProptestConfig, Strategy};

use mobcast::baselines::{avg_predict, avg_window_predict, last_day_predict};
use mobcast::dataio::{
    align_and_filter, generate_synthetic, latent_totals, load_bundle, load_cases, load_mobility, save_bundle,
    RawCountry, RegionUniverse, SyntheticConfig,
};
use mobcast::eval::{error_metric, pearson_shift_correlation};
use mobcast::graphs::{latent_message, normalize_incoming};
use mobcast::models::{Model, ModelSpec};
use mobcast::numcore::{adam_step, batchnorm_apply, sgd_step, AdamState, Matrix, Mode, Rng, RunningStats, Tape};
use mobcast::train::mse_loss;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    vec(lo..hi, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

fn square(max_n: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_n).prop_flat_map(|n| matrix(n, n, 0.0, 100.0))
}

fn counts() -> impl Strategy<Value = Vec<f64>> {
    vec((0u32..500).prop_map(f64::from), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn batchnorm_columns_are_standardized_under_row_permutation(x in matrix(6, 3, -50.0, 50.0), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..6).collect();
        Rng::new(seed).shuffle(&mut perm);
        let permuted = Matrix::from_rows(&perm.iter().map(|&r| x.row(r).to_vec()).collect::<Vec<_>>());
        for input in [&x, &permuted] {
            let (_, var) = mobcast::numcore::tape::column_moments(input);
            // var / (var + 1e-5) is within 1e-6 of 1 once var >= 10
            prop_assume!(var.iter().all(|&v| v >= 10.0));
            let mut tape = Tape::new();
            let xv = tape.constant(input.clone());
            let g = tape.constant(Matrix::filled(1, 3, 1.0));
            let b = tape.constant(Matrix::zeros(1, 3));
            let y = batchnorm_apply(&mut tape, xv, g, b, &mut RunningStats::new(3), Mode::Train).unwrap();
            let (mean, var) = mobcast::numcore::tape::column_moments(tape.value(y));
            for k in 0..3 {
                prop_assert!(mean[k].abs() < 1e-6);
                prop_assert!((var[k] - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn optimizer_steps_stay_finite(p in matrix(3, 4, -1e3, 1e3), g in matrix(3, 4, -1e6, 1e6), lr in 0.0f64..=1.0) {
        let mut params = vec![p.clone()];
        sgd_step(&mut params, std::slice::from_ref(&g), lr).unwrap();
        prop_assert!(params[0].is_finite());
        let mut params = vec![p];
        let mut state = AdamState::new(&[(3, 4)]);
        for _ in 0..3 {
            adam_step(&mut params, std::slice::from_ref(&g), &mut state, lr).unwrap();
        }
        prop_assert!(params[0].is_finite());
    }

    #[test]
    fn normalization_is_stochastic_idempotent_and_scale_free(m in square(8), lambda in 1e-3f64..1e3) {
        let a = normalize_incoming(&m).unwrap();
        for r in 0..a.rows() {
            let raw: f64 = m.row(r).iter().sum();
            let s: f64 = a.row(r).iter().sum();
            if raw > 0.0 {
                prop_assert!((s - 1.0).abs() < 1e-9);
            } else {
                prop_assert_eq!(s, 0.0);
            }
        }
        prop_assert!(normalize_incoming(&a).unwrap().max_abs_diff(&a) < 1e-12);
        prop_assert!(normalize_incoming(&m.scale(lambda)).unwrap().max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn messages_are_convex_combinations(m in square(6), seed in any::<u64>()) {
        let n = m.rows();
        let mut rng = Rng::new(seed);
        let x = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.uniform_range(-10.0, 10.0)).collect()).unwrap();
        let a = normalize_incoming(&m).unwrap();
        let z = latent_message(&a, &x).unwrap();
        for u in (0..n).filter(|&u| m.row(u).iter().sum::<f64>() > 0.0) {
            for c in 0..3 {
                let col: Vec<f64> = (0..n).map(|v| x.get(v, c)).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(z.get(u, c) >= lo - 1e-9 && z.get(u, c) <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn losses_match_brute_force(pairs in vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
        let mut mse = 0.0;
        let mut mae = 0.0;
        for i in 0..p.len() {
            mse += (p[i] - y[i]) * (p[i] - y[i]);
            mae += (p[i] - y[i]).abs();
        }
        let n = p.len() as f64;
        prop_assert!((mse_loss(&p, &y).unwrap() - mse / n).abs() <= 1e-10 * (1.0 + mse / n));
        prop_assert!((error_metric(&p, &y).unwrap() - mae / n).abs() <= 1e-10 * (1.0 + mae / n));
    }

    #[test]
    fn pearson_is_affine_invariant(
        m in vec(-100.0f64..100.0, 20),
        c in vec(-100.0f64..100.0, 20),
        shift in 1usize..=14,
        a in 0.1f64..10.0,
        b in -50.0f64..50.0,
    ) {
        let base = pearson_shift_correlation(&m, &c, shift).unwrap();
        let m2: Vec<f64> = m.iter().map(|v| a * v + b).collect();
        let c2: Vec<f64> = c.iter().map(|v| a * v - b).collect();
        match (base, pearson_shift_correlation(&m2, &c2, shift).unwrap()) {
            (Some(r), Some(r2)) => {
                prop_assert!((r - r2).abs() < 1e-12);
                prop_assert!(r.abs() <= 1.0 + 1e-12);
            }
            (x, y) => prop_assert_eq!(x.is_none(), y.is_none()),
        }
    }

    #[test]
    fn baselines_match_brute_force(series in counts(), window in 1usize..20, j in 1usize..15) {
        let n = series.len();
        let avg = series.iter().sum::<f64>() / n as f64;
        prop_assert_eq!(avg_predict(&series, j).unwrap(), avg);
        let k = window.min(n);
        let tail = series[n - k..].iter().sum::<f64>() / k as f64;
        prop_assert_eq!(avg_window_predict(&series, window, j).unwrap(), tail);
        prop_assert_eq!(last_day_predict(&series, j).unwrap(), series[n - 1]);
        prop_assert_eq!(avg_window_predict(&series, n + window, j).unwrap(), avg_predict(&series, j).unwrap());
        prop_assert!(tail >= 0.0 && avg >= 0.0);
    }

    #[test]
    fn parameter_registry_round_trips(seed in any::<u64>(), hidden in 1usize..8) {
        let spec = ModelSpec { hidden, ..ModelSpec::mpnn() };
        let a = Model::new(spec.clone(), &mut Rng::new(seed)).unwrap();
        let mut b = Model::zeroed(spec).unwrap();
        b.params_mut().restore(&a.params().flatten()).unwrap();
        prop_assert_eq!(a.params(), b.params());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn latent_totals_never_decrease(seed in any::<u64>(), beta in 1.0f64..1.2, regions in 2usize..8) {
        let cfg = SyntheticConfig { n_regions: regions, n_days: 30, n_countries: 2, base_rate: beta, noise_seed: seed, ..Default::default() };
        let ds = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(&ds, &generate_synthetic(&cfg).unwrap());
        for (k, d) in ds.iter().enumerate() {
            for seed_region in 0..regions {
                let totals = latent_totals(&cfg, d, k, seed_region);
                prop_assert!(totals.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)));
            }
        }
    }

    #[test]
    fn mobility_aggregation_is_exact(records in vec((0usize..3, 0usize..3, 0usize..4, 0usize..4, 0u32..10_000), 1..80)) {
        let ids: Vec<String> = (0..4).map(|i| format!("r{i}")).collect();
        let universe = RegionUniverse::new(ids.clone()).unwrap();
        let mut expected: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();
        let mut body = String::from("date,time_of_day,origin,destination,count\n");
        for &(day, tod, o, d, c) in &records {
            if !seen.insert((day, tod, o, d)) {
                continue;
            }
            body += &format!("2020-03-0{},{tod},{},{},{c}\n", day + 1, ids[o], ids[d]);
            *expected.entry((day, d, o)).or_insert(0.0) += f64::from(c);
        }
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(body.as_bytes()).unwrap();
        let days = load_mobility(file.path(), &universe).unwrap();
        for (date, m) in &days {
            let day = date.day0() as usize;
            for d in 0..4 {
                for o in 0..4 {
                    prop_assert_eq!(m.get(d, o), expected.get(&(day, d, o)).copied().unwrap_or(0.0));
                }
            }
        }
    }

    #[test]
    fn filtered_regions_keep_enough_cases_and_bundles_round_trip(totals in vec(0u32..30, 2..6)) {
        prop_assume!(totals.iter().any(|&t| t >= 10));
        let n = totals.len();
        let ids: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
        let universe = RegionUniverse::new(ids.clone()).unwrap();
        let dates: Vec<NaiveDate> = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap().iter_days().take(3).collect();
        let mut cases = String::from("date,region,new_cases\n");
        let mut mob = String::from("date,origin,destination,count\n");
        for (i, &t) in totals.iter().enumerate() {
            let split = [t / 3, t / 3, t - 2 * (t / 3)];
            for (k, d) in dates.iter().enumerate() {
                cases += &format!("{d},{},{}\n", ids[i], split[k]);
                mob += &format!("{d},{},{},{}\n", ids[i], ids[(i + 1) % n], 5 + i);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cases.csv"), cases).unwrap();
        std::fs::write(dir.path().join("mob.csv"), mob).unwrap();
        let raw = RawCountry {
            country: "X".into(),
            regions: ids,
            mobility: load_mobility(&dir.path().join("mob.csv"), &universe).unwrap(),
            cases: load_cases(&dir.path().join("cases.csv"), &universe, None).unwrap(),
        };
        let ds = align_and_filter(&raw, 10.0).unwrap();
        prop_assert_eq!(ds.n_regions(), totals.iter().filter(|&&t| t >= 10).count());
        for u in 0..ds.n_regions() {
            prop_assert!(ds.region_series(u).iter().sum::<f64>() >= 10.0);
        }
        prop_assert!(ds.mobility.iter().all(|m| m.shape() == (ds.n_regions(), ds.n_regions())));
        save_bundle(&ds, &dir.path().join("bundle")).unwrap();
        prop_assert_eq!(load_bundle(&dir.path().join("bundle")).unwrap(), ds);
    }
}
