use fracrfk::geometry::{make_mask, GridSpec, Shape};
use fracrfk::shape_opt::{growth_diagnostics, Evaluator, OptimizeOptions, ShapeState, GROWTH_SAMPLES};

// frozen from the first run of this configuration
const SUP_L2_48: f64 = 0.9267512805;
const MAX_SUP_R_SIGMA_48: f64 = 1.2881662139;

fn ball_state(cells: usize, sigma: f64) -> ShapeState {
    let g = GridSpec::cube(2, cells, -1.5, 1.5).unwrap();
    let mask = make_mask(&g, &Shape::Ball { center: vec![0.0, 0.0], radius: 1.0 }).unwrap();
    let ev = Evaluator::new(2, sigma, &OptimizeOptions::default()).unwrap();
    let (_, eigen) = ev.solve(&mask, None).unwrap();
    let volume = mask.volume();
    ShapeState {
        energy_penalized: eigen.lambda + volume,
        mask,
        eigen,
        volume,
        penalty: 1.0,
        iteration: 0,
        history: Vec::new(),
        aborted: None,
    }
}

#[test]
fn growth_ratios_on_48_grid_ball() {
    let d = growth_diagnostics(&ball_state(48, 0.75), 0.75).unwrap();
    assert_eq!(d.rows.len(), GROWTH_SAMPLES);
    assert_eq!(d.components, 1);
    assert!(d.asymmetry < 0.05, "asymmetry {}", d.asymmetry);
    // equal-volume ball: sup/L² is that of the discrete first eigenfunction
    assert!(d.ratio_sup_l2 > 0.5 && d.ratio_sup_l2 < 2.0, "{}", d.ratio_sup_l2);
    for row in &d.rows {
        assert!(row.radius.windows(2).all(|w| w[0] < w[1]));
        // sup over nested balls about a boundary point
        assert!(row.sup.windows(2).all(|w| w[0] <= w[1]), "{:?}", row.sup);
        assert!(row.sup_over_r_sigma.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(row.sup_over_r_2sigma_minus_1.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
    let worst = d.rows.iter().flat_map(|r| r.sup_over_r_sigma.iter().cloned()).fold(0.0, f64::max);
    println!("sup/L2 {:.10} max sup/r^sigma {:.10}", d.ratio_sup_l2, worst);
    assert!((d.ratio_sup_l2 - SUP_L2_48).abs() <= 1e-6 * SUP_L2_48);
    assert!((worst - MAX_SUP_R_SIGMA_48).abs() <= 1e-6 * MAX_SUP_R_SIGMA_48);
}

#[test]
fn growth_sup_is_deterministic() {
    let a = growth_diagnostics(&ball_state(32, 0.6), 0.6).unwrap();
    let b = growth_diagnostics(&ball_state(32, 0.6), 0.6).unwrap();
    assert_eq!(a.sup.to_bits(), b.sup.to_bits());
    assert_eq!(a.rows.len(), b.rows.len());
}
