use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strokeforge_core::oracle::{
    render_stroke, render_stroke_discrete, sample_action, Action, DiscreteAction, OracleConfig,
};
use strokeforge_core::Image;

/// Disc rasterized by midpoint quadrature of the vertical chord overlap
/// inside each pixel, then composited black-over-white at full opacity.
fn reference_disc(size: usize, cx: f64, cy: f64, r: f64) -> Image {
    let mut img = Image::white(size, size);
    let n = 2000;
    for py in 0..size {
        for px in 0..size {
            let mut cov = 0.0;
            for i in 0..n {
                let dx = px as f64 + (i as f64 + 0.5) / n as f64 - cx;
                if dx.abs() < r {
                    let h = (r * r - dx * dx).sqrt();
                    cov += ((cy + h).min(py as f64 + 1.0) - (cy - h).max(py as f64)).max(0.0);
                }
            }
            let v = (1.0 - cov / n as f64) as f32;
            img.set_pixel(py, px, [v, v, v]);
        }
    }
    img
}

fn dyadic(v: f32) -> f32 {
    (v * 1024.0).round() / 1024.0
}

#[test]
fn degenerate_stroke_matches_reference_disc() {
    let cfg = OracleConfig::default();
    let a = Action::from_array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
    let img = render_stroke(&a, &cfg).unwrap();
    let reference = reference_disc(64, 32.0, 32.0, cfg.max_radius_px as f64);
    let err = img.max_abs_diff(&reference).unwrap();
    assert!(err <= 1.0 / 255.0, "max per-pixel error {err}");
}

#[test]
fn zero_pressure_renders_exact_white() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let mut a = sample_action(&mut rng);
        a.start_pressure = 0.0;
        a.end_pressure = 0.0;
        assert_eq!(render_stroke(&a, &OracleConfig::default()).unwrap(), Image::white(64, 64));
    }
}

#[test]
fn white_ink_is_invisible() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let mut a = sample_action(&mut rng);
        a.color_r = 1.0;
        a.color_g = 1.0;
        a.color_b = 1.0;
        assert_eq!(render_stroke(&a, &OracleConfig::default()).unwrap(), Image::white(64, 64));
    }
}

#[test]
fn mirrored_control_points_mirror_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = OracleConfig::default();
    for _ in 0..30 {
        let raw = sample_action(&mut rng).to_array().map(dyadic);
        let a = Action::from_array(raw).unwrap();
        let img = render_stroke(&a, &cfg).unwrap();
        let mirrored = render_stroke(&a.mirrored_horizontally(), &cfg).unwrap();
        let err = img.flip_horizontal().max_abs_diff(&mirrored).unwrap();
        assert!(err <= 1e-6, "mirror error {err}");
    }
}

#[test]
fn ink_grows_with_brush_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = OracleConfig::default();
    for _ in 0..20 {
        let mut a = sample_action(&mut rng);
        a.start_pressure = 1.0;
        a.end_pressure = 1.0;
        a.color_r = 0.0;
        a.color_g = 0.0;
        a.color_b = 0.0;
        let mut prev = 0.0f32;
        for k in 0..=20 {
            a.brush_size = k as f32 / 20.0;
            let ink = render_stroke(&a, &cfg).unwrap().ink_mass();
            assert!(ink >= prev - 1e-3, "size {} ink {ink} < {prev}", a.brush_size);
            prev = ink;
        }
    }
}

#[test]
fn lifted_brush_renders_white() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dv = DiscreteAction::from_continuous(sample_action(&mut rng), true);
    assert_eq!(
        render_stroke_discrete(&dv, &OracleConfig::default()).unwrap(),
        Image::white(64, 64)
    );
}

#[test]
fn top_level_equals_continuous_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let base = sample_action(&mut rng);
    let dv = DiscreteAction::new(base, 9, 9, 9, false).unwrap();
    let mut cont = base;
    cont.brush_size = 1.0;
    cont.start_pressure = 1.0;
    cont.end_pressure = 1.0;
    let cfg = OracleConfig::default();
    assert_eq!(render_stroke_discrete(&dv, &cfg).unwrap(), render_stroke(&cont, &cfg).unwrap());
}

#[test]
fn level_four_equals_four_ninths() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base = sample_action(&mut rng);
    let dv = DiscreteAction::new(base, 4, 4, 4, false).unwrap();
    let mut cont = base;
    cont.brush_size = 4.0 / 9.0;
    cont.start_pressure = 4.0 / 9.0;
    cont.end_pressure = 4.0 / 9.0;
    let cfg = OracleConfig::default();
    assert_eq!(render_stroke_discrete(&dv, &cfg).unwrap(), render_stroke(&cont, &cfg).unwrap());
}

fn action_strategy() -> impl Strategy<Value = Action> {
    prop::array::uniform12(0.0f32..=1.0).prop_map(|a| Action::from_array(a).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pixels_stay_in_unit_range(a in action_strategy()) {
        let img = render_stroke(&a, &OracleConfig::scaled_to(32)).unwrap();
        prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rendering_is_pure(a in action_strategy()) {
        let cfg = OracleConfig::scaled_to(32);
        prop_assert_eq!(render_stroke(&a, &cfg).unwrap(), render_stroke(&a, &cfg).unwrap());
    }

    #[test]
    fn discrete_equals_snapped_continuous(
        a in action_strategy(),
        s in 0u8..10, p0 in 0u8..10, p1 in 0u8..10,
    ) {
        let cfg = OracleConfig::scaled_to(32);
        let dv = DiscreteAction::new(a, s, p0, p1, false).unwrap();
        prop_assert_eq!(
            render_stroke_discrete(&dv, &cfg).unwrap(),
            render_stroke(&dv.snapped().unwrap(), &cfg).unwrap()
        );
    }
}
