use tomoheight::synth::{gen_scene, oracle_height_map, SceneParams, DEFAULT_VEGETATION_FLOOR_M};
use tomoheight::{BandId, PolSet};

fn p95(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(0.95 * (v.len() - 1) as f64).round() as usize]
}

#[test]
fn oracle_tracks_canopy_height_on_noisy_scenes() {
    for band in BandId::ALL {
        for seed in 0..4 {
            let p = SceneParams {
                nx: 32,
                ny: 32,
                seed,
                noise_rel: 0.1,
                ..Default::default()
            };
            let s = gen_scene(&p, band, &PolSet::union()).unwrap();
            let est = oracle_height_map(&s.cube, DEFAULT_VEGETATION_FLOOR_M).unwrap();
            let err: Vec<f64> = (0..32 * 32)
                .filter_map(|i| s.chm.get(i / 32, i % 32).map(|h| (est[i] - h as f64).abs()))
                .collect();
            assert!(!err.is_empty());
            let q = p95(err);
            assert!(q <= 3.0, "{band} seed {seed}: p95 {q:.3}");
        }
    }
}

#[test]
fn scenes_are_physical_and_reproducible() {
    let p = SceneParams {
        nx: 24,
        ny: 20,
        seed: 11,
        ..Default::default()
    };
    let a = gen_scene(&p, BandId::LBi, &PolSet::union()).unwrap();
    let b = gen_scene(&p, BandId::LBi, &PolSet::union()).unwrap();
    assert_eq!(a.cube, b.cube);
    let bits = |h: &[f32]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.chm.heights_m), bits(&b.chm.heights_m));
    assert_eq!(a.cube.nz, 36);
    assert!(a.cube.intensity.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(a.chm.heights_m.iter().all(|h| h.is_nan() || *h >= 0.0));
}
