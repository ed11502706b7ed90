use csikit::channel::{make_dataset, ChannelTensor, DatasetRecipe};
use csikit::evaluate::*;
use csikit::numerics::{derive_seed, gaussian_draw, ComplexMatrix, SeededRng, C64};
use csikit::pilots::Density;

fn test_channels(n: usize, seed: u64) -> Vec<ChannelTensor> {
    let sys = SystemConfig::default();
    make_dataset(&DatasetRecipe::default(), n, &sys.channel_config(), seed, None).unwrap().samples
}

fn type2(subband_rb: usize, codewords: usize, phase_bits: u32) -> SchemeSpec {
    SchemeSpec::Type2 {
        subband_rb,
        codewords,
        phase_bits,
        amplitude_bits: 3,
        density: Density::FULL,
    }
}

fn point(id: &str, scheme: SchemeSpec) -> OperatingPoint {
    OperatingPoint { id: id.into(), scheme }
}

fn no_models(_: &OperatingPoint) -> csikit::Result<LoadedModel> {
    Ok(LoadedModel::None)
}

fn orthogonal_rows(m: usize, nt: usize) -> Vec<Vec<C64>> {
    (0..m)
        .map(|u| {
            let mut row = vec![C64::new(0.0, 0.0); nt];
            row[u] = C64::new(0.6, 0.8);
            row
        })
        .collect()
}

#[test]
fn stacking_keeps_order_and_permutes_with_users() {
    let mut rng = SeededRng::new(1);
    let rows: Vec<Vec<C64>> = (0..4).map(|_| gaussian_draw(&mut rng, 8, 1.0)).collect();
    let refs: Vec<&[C64]> = rows.iter().map(Vec::as_slice).collect();
    let h = stack_channels(&refs).unwrap();
    for (m, r) in rows.iter().enumerate() {
        assert_eq!(h.row(m), r.as_slice());
    }
    let perm = [2, 0, 3, 1];
    let permuted: Vec<&[C64]> = perm.iter().map(|&i| rows[i].as_slice()).collect();
    let hp = stack_channels(&permuted).unwrap();
    for (m, &i) in perm.iter().enumerate() {
        assert_eq!(hp.row(m), h.row(i));
    }
    assert_eq!(stack_channels(&refs[..1]).unwrap().row(0), rows[0].as_slice());
}

#[test]
fn orthogonal_users_get_scaled_identity() {
    let rows = orthogonal_rows(4, 32);
    let refs: Vec<&[C64]> = rows.iter().map(Vec::as_slice).collect();
    let h = stack_channels(&refs).unwrap();
    let (p, scale) = zf_precoder(&h).unwrap();
    let hp = h.matmul(&p).unwrap();
    // Before normalization HP = I; every user's row has norm 1, so the scale is 1/2.
    assert!((scale - 0.5).abs() < 1e-15);
    for i in 0..4 {
        for j in 0..4 {
            let expect = if i == j { 0.5 } else { 0.0 };
            assert!((hp.get(i, j) - C64::new(expect, 0.0)).norm() < 1e-15);
        }
    }
}

#[test]
fn random_stacks_are_nulled_and_power_normalized() {
    let mut rng = SeededRng::new(2);
    for _ in 0..200 {
        let rows: Vec<Vec<C64>> = (0..4).map(|_| gaussian_draw(&mut rng, 32, 1.0)).collect();
        let refs: Vec<&[C64]> = rows.iter().map(Vec::as_slice).collect();
        let h = stack_channels(&refs).unwrap();
        let (p, _) = zf_precoder(&h).unwrap();
        let hp = h.matmul(&p).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(hp.get(i, j).norm() < 1e-10);
                }
            }
        }
        let trace: f64 = p.data().iter().map(|x| x.norm_sqr()).sum();
        assert!((trace - 1.0).abs() < 1e-9);
    }
}

fn flat_channel(row: &[C64], k: usize) -> ChannelTensor {
    let mut h = ChannelTensor::zeros(k, 1, row.len());
    for f in 0..k {
        h.row_mut(f, 0).copy_from_slice(row);
    }
    h
}

#[test]
fn orthogonal_perfect_csi_rate_is_closed_form() {
    let rows = orthogonal_rows(4, 32);
    let chans: Vec<ChannelTensor> = rows.iter().map(|r| flat_channel(r, 24)).collect();
    let refs: Vec<&[C64]> = rows.iter().map(Vec::as_slice).collect();
    let (p, s) = zf_precoder(&stack_channels(&refs).unwrap()).unwrap();
    let set = PrecoderSet {
        partition: vec![(0, 24)],
        matrices: vec![p],
        scales: vec![s],
    };
    let ch: Vec<&ChannelTensor> = chans.iter().collect();
    let (se, per) = sum_se(&ch, &set, 25.0).unwrap();
    let rho = 10f64.powf(2.5);
    assert!((se - 4.0 * (1.0 + rho / 4.0).log2()).abs() < 1e-12);
    assert_eq!(se, per.iter().sum::<f64>());
}

#[test]
fn zero_precoder_gives_zero_rate() {
    let mut rng = SeededRng::new(3);
    let row = gaussian_draw(&mut rng, 8, 1.0);
    let h = flat_channel(&row, 12);
    let set = PrecoderSet {
        partition: vec![(0, 12)],
        matrices: vec![ComplexMatrix::zeros(8, 1)],
        scales: vec![0.0],
    };
    assert_eq!(sum_se(&[&h], &set, 25.0).unwrap().0, 0.0);
}

#[test]
fn user_groups_are_disjoint_strides() {
    let groups = user_groups(8, 4).unwrap();
    assert_eq!(groups[0], vec![0, 2, 4, 6]);
    assert_eq!(groups[7], vec![7, 1, 3, 5]);
    assert!(user_groups(3, 4).is_err());
}

#[test]
fn one_point_grid_equals_direct_evaluation() {
    let sys = SystemConfig::default();
    let test = test_channels(40, 11);
    let spec = type2(4, 4, 3);
    let out = sweep(&[point("t2", spec.clone())], &sys, &test, 5, no_models).unwrap();
    let scheme = PreparedScheme::new(spec, sys, LoadedModel::None).unwrap();
    let direct = run_operating_point("t2", &scheme, &test, derive_seed(5, EVAL_STREAM)).unwrap();
    assert_eq!(out.rows(), vec![direct]);
}

#[test]
fn rerun_is_bit_identical_and_rows_are_consistent() {
    let sys = SystemConfig::default();
    let test = test_channels(40, 12);
    let grid = [
        point("ideal", SchemeSpec::Ideal),
        point("type1", SchemeSpec::Type1 { subband_rb: 4, phase_bits: 3, density: Density::FULL }),
        point("t2", type2(4, 4, 3)),
        point("exp", SchemeSpec::Explicit { density: Density::from_period(4).unwrap(), bits: 5 }),
    ];
    let files = || {
        let out = sweep(&grid, &sys, &test, 9, no_models).unwrap();
        let mut csv = Vec::new();
        write_results_csv(&mut csv, &out.rows(), sys.users).unwrap();
        let mut jsonl = Vec::new();
        write_jsonl(&mut jsonl, &out.outcomes).unwrap();
        (out, csv, jsonl)
    };
    let (out, csv_a, json_a) = files();
    let (_, csv_b, json_b) = files();
    assert_eq!(csv_a, csv_b);
    assert_eq!(json_a, json_b);
    for r in out.rows() {
        assert_eq!(r.se_sum, r.se_per_ue.iter().sum::<f64>());
        assert!(r.se_sum <= out.ideal.se_sum);
        assert!(r.se_sum >= 0.0 && r.n_samples == 40);
    }
}

#[test]
fn missing_model_is_recorded_and_sweep_continues() {
    let sys = SystemConfig::default();
    let test = test_channels(8, 13);
    let rx = SchemeSpec::RxType2 {
        subband_rb: 4,
        codewords: 4,
        phase_bits: 3,
        amplitude_bits: 3,
        density: Density::FULL,
        conv_width: 4,
        depth: 2,
    };
    let grid = [point("rx", rx), point("t2", type2(4, 4, 3))];
    let out = sweep(&grid, &sys, &test, 1, |p| {
        if p.scheme.is_ai() {
            Err(csikit::Error::MissingModel(p.id.clone()))
        } else {
            Ok(LoadedModel::None)
        }
    })
    .unwrap();
    assert!(out.outcomes[0].row.is_none());
    assert!(out.outcomes[0].error.as_deref().unwrap().contains("missing model"));
    assert!(out.outcomes[1].row.is_some());
}

#[test]
fn type2_curve_is_monotone_in_overhead() {
    let sys = SystemConfig::default();
    let test = test_channels(200, 14);
    let grid = [
        point("a", type2(4, 4, 3)),
        point("b", type2(4, 6, 4)),
        point("c", type2(2, 6, 4)),
        point("d", type2(2, 8, 4)),
        point("e", type2(1, 8, 4)),
    ];
    let mut rows = sweep(&grid, &sys, &test, 15, no_models).unwrap().rows();
    rows.sort_by(|a, b| a.overhead_kbps.total_cmp(&b.overhead_kbps));
    for w in rows.windows(2) {
        assert!(w[1].se_sum >= w[0].se_sum, "{} {} -> {} {}", w[0].scheme, w[0].se_sum, w[1].scheme, w[1].se_sum);
    }
}

#[test]
fn doubling_the_test_set_moves_mean_se_little() {
    let sys = SystemConfig::default();
    let test = test_channels(800, 16);
    let grid = [point("t2", type2(4, 6, 4))];
    let half = sweep(&grid, &sys, &test[..400], 17, no_models).unwrap().rows()[0].se_sum;
    let full = sweep(&grid, &sys, &test, 17, no_models).unwrap().rows()[0].se_sum;
    assert!((full / half - 1.0).abs() < 0.02, "{half} vs {full}");
}

#[test]
fn validation_names_the_field() {
    let mut sys = SystemConfig::default();
    sys.snr_db = 99.0;
    assert!(sys.validate().unwrap_err().to_string().contains("system.snr_db"));
    let sys = SystemConfig::default();
    let err = SchemeSpec::Type2 {
        subband_rb: 0,
        codewords: 4,
        phase_bits: 3,
        amplitude_bits: 3,
        density: Density::FULL,
    }
    .validate(&sys)
    .unwrap_err();
    assert!(err.to_string().contains("subband_rb"), "{err}");
}
