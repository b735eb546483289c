use motif_core::geometry::{sample_geometry, ParamSpace, XfmrGeometry, XfmrTemplate};
use motif_core::oracle::{generate_dataset, simulate, solve_sparams, synthesize_lumped};
use motif_core::rfnet::{extract_lq, Channel, CHANNELS};
use motif_core::FrequencyGrid;
use proptest::prelude::*;

fn template() -> impl Strategy<Value = XfmrTemplate> {
    prop::sample::select(XfmrTemplate::ALL.to_vec())
}

fn geometry() -> impl Strategy<Value = XfmrGeometry> {
    (template(), any::<u64>()).prop_map(|(t, seed)| sample_geometry(&ParamSpace::default_for(t), t, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expanded_matrix_is_symmetric(g in geometry()) {
        let t = simulate(&g, &FrequencyGrid::ghz100()).unwrap();
        for k in (0..200).step_by(7) {
            let s = t.expand_full(k).unwrap();
            prop_assert_eq!(s, s.transpose());
        }
    }

    #[test]
    fn passive_everywhere(g in geometry()) {
        let m = synthesize_lumped(&g).unwrap();
        let grid = FrequencyGrid::ghz200();
        for k in 0..grid.k {
            let s = m.full_s(grid.freq_hz(k)).unwrap();
            let sv = s.singular_values();
            prop_assert!(sv.max() <= 1.0 + 1e-9, "k={} sigma={}", k, sv.max());
        }
    }

    #[test]
    fn adjacent_points_move_less_than_threshold(g in geometry()) {
        let t = simulate(&g, &FrequencyGrid::ghz100()).unwrap();
        for ch in CHANNELS {
            let c = t.channel(ch);
            for w in c.windows(2) {
                prop_assert!((w[1].re - w[0].re).abs() < 0.2 && (w[1].im - w[0].im).abs() < 0.2, "{:?}", ch);
            }
        }
    }

    #[test]
    fn low_frequency_inductance_matches_model(g in geometry(), k in 1e-3f64..0.1) {
        let mut m = synthesize_lumped(&g).unwrap();
        m.k = k;
        let t = solve_sparams(&m, &FrequencyGrid::ghz100()).unwrap();
        let l = extract_lq(&t, 0).unwrap().inductance;
        prop_assert!((l / m.l1 - 1.0).abs() < 0.05, "extracted {} model {}", l, m.l1);
    }
}

#[test]
fn dataset_of_one_sample() {
    let ds = generate_dataset(&ParamSpace::default_for(XfmrTemplate::OneToOne), XfmrTemplate::OneToOne, 1, &FrequencyGrid::ghz100(), 3)
        .unwrap();
    assert_eq!(ds.manifest.samples(), 1);
    assert_eq!(ds.labels.dim(), (1, 2400));
    assert_eq!(ds.features.dim(), (1, 6));
}

#[test]
fn dataset_generation_is_deterministic_and_rejects_low_srf() {
    let grid = FrequencyGrid::ghz100();
    let space = ParamSpace::default_for(XfmrTemplate::MToN);
    let a = generate_dataset(&space, XfmrTemplate::MToN, 40, &grid, 11).unwrap();
    let b = generate_dataset(&space, XfmrTemplate::MToN, 40, &grid, 11).unwrap();
    assert_eq!(a, b);
    let (srfs, _) = motif_core::metrics::label_srfs(a.labels.view(), &grid).unwrap();
    assert!(srfs.iter().all(|&s| s >= 0.15 * grid.f_max()));
}

#[test]
fn open_decoupled_limit() {
    let g = XfmrGeometry {
        template: XfmrTemplate::MToN,
        turns_primary: 1,
        turns_secondary: 1,
        outer_dim: 60.0,
        trace_width: 4.0,
        trace_spacing: 3.0,
        winding_gap: 6.0,
    };
    let mut m = synthesize_lumped(&g).unwrap();
    m.k = 1e-3;
    let t = solve_sparams(&m, &FrequencyGrid::new(0.001, 0.001, 4).unwrap()).unwrap();
    assert!(t.get(Channel::S13, 0).norm() < 1e-3);
}
