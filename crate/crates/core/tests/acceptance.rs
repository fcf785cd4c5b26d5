//! Acceptance suite: one test per criterion, each ending in a single
//! PASS line (visible with `cargo test -- --nocapture`). Expected values
//! come from independent oracles computed inside this file, never from the
//! library code paths they check.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cpwl_core::build::{
    build_cnn_network, build_max_gadget, build_min_gadget, rescale_homogeneous,
    BuildConfig, CnnArch, CnnStagePlan, PatchSpec, PoolKind,
};
use cpwl_core::cpwl::{consistency_on_points, CpwlPredictor};
use cpwl_core::data::{gen_parabola, Dataset, Loss, Sample};
use cpwl_core::fit::AffinePiece;
use cpwl_core::partition::{Partition, Polytope};
use cpwl_core::pipeline::{build_1d_state, build_state_on_partition, even_count_boundaries};
use cpwl_core::runtime::{forward_cnn, forward_fc, network_risk, Network};
use cpwl_core::verify::{
    demonstrate_spurious, derive_epsilon, enumerate_patterns_1d, probe_local_min, ProbeConfig,
};

// ---------------------------------------------------------------------------
// oracles
// ---------------------------------------------------------------------------

/// Closed-form simple linear regression residual sum of squares over a
/// contiguous range of (x, y) pairs: an implementation route independent of
/// both the library's normal-equations solver and its prefix-sum shortcut.
fn oracle_range_rss(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    points
        .iter()
        .map(|p| {
            let e = p.1 - slope * p.0 - intercept;
            e * e
        })
        .sum()
}

/// Brute-force minimum mean risk over all contiguous partitions of the
/// sorted samples into exactly `p` groups.
fn oracle_best_contiguous_risk(points: &[(f64, f64)], p: usize) -> f64 {
    fn recurse(points: &[(f64, f64)], start: usize, groups_left: usize, acc: f64, best: &mut f64) {
        if groups_left == 1 {
            let total = acc + oracle_range_rss(&points[start..]);
            if total < *best {
                *best = total;
            }
            return;
        }
        // leave at least one point per remaining group
        for end in start + 1..=points.len() - (groups_left - 1) {
            recurse(
                points,
                end,
                groups_left - 1,
                acc + oracle_range_rss(&points[start..end]),
                best,
            );
        }
    }
    let mut best = f64::INFINITY;
    recurse(points, 0, p, 0.0, &mut best);
    best / points.len() as f64
}

fn parabola_points(n: usize) -> Vec<(f64, f64)> {
    gen_parabola(n, -1.0, 1.0)
        .unwrap()
        .samples()
        .iter()
        .map(|s| (s.x[0], s.y[0]))
        .collect()
}

fn parabola_state(n: usize, groups: usize) -> (Dataset, cpwl_core::pipeline::PipelineState) {
    let ds = gen_parabola(n, -1.0, 1.0).unwrap();
    let bounds = even_count_boundaries(&ds, groups).unwrap();
    let state = build_1d_state(&ds, &bounds, &Loss::Mse, &BuildConfig::default()).unwrap();
    (ds, state)
}

fn domain_grid(predictor: &CpwlPredictor, points: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = predictor.partition.domain.interval_bounds().unwrap();
    (0..=points)
        .map(|i| vec![lo + (hi - lo) * i as f64 / points as f64])
        .collect()
}

fn floor_log2(n: usize) -> usize {
    (usize::BITS - 1 - n.leading_zeros()) as usize
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_motivating_example_monotonicity() {
    let started = Instant::now();
    let ds = gen_parabola(40, -1.0, 1.0).unwrap();
    let points = parabola_points(40);

    let table = enumerate_patterns_1d(&ds, 4, &Loss::Mse).unwrap();
    let mut best = [f64::INFINITY; 5];
    for row in &table.rows {
        best[row.p] = best[row.p].min(row.risk);
    }

    for p in 1..=4 {
        let expected = oracle_best_contiguous_risk(&points, p);
        let got = best[p];
        assert!(
            (got - expected).abs() <= 1e-9 * expected.max(1e-30),
            "P = {p}: {got} vs oracle {expected}"
        );
    }
    assert!(best[1] > best[2] && best[2] > best[3] && best[3] > best[4]);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!(
        "criterion 01 PASS: best risks {:.6} > {:.6} > {:.6} > {:.6}, oracle-matched, {elapsed:?}",
        best[1], best[2], best[3], best[4]
    );
}

#[test]
fn criterion_02_gadget_exactness() {
    let started = Instant::now();
    let min_net = build_min_gadget();
    let max_net = build_max_gadget();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // dyadic-grid draws: multiples of 2^-20 up to 1e6 are exactly
    // representable and closed under the gadget's additions/subtractions
    let steps = 1_000_000u64 << 20;
    for _ in 0..10_000 {
        let a = rng.gen_range(0..=steps) as f64 / (1u64 << 20) as f64;
        let b = rng.gen_range(0..=steps) as f64 / (1u64 << 20) as f64;
        let min_out = forward_fc(&min_net, &[a, b]).unwrap().output[0];
        let max_out = forward_fc(&max_net, &[a, b]).unwrap().output[0];
        assert_eq!(min_out, a.min(b), "min({a}, {b})");
        assert_eq!(max_out, a.max(b), "max({a}, {b})");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("criterion 02 PASS: 10^4 exact min/max pairs, {elapsed:?}");
}

#[test]
fn criterion_03_maxmin_representation() {
    // the three-piece instance: f1 = x + 1, f2 = -x + 1, f3 = 3x - 7
    let pieces = vec![
        AffinePiece::new(vec![vec![1.0]], vec![1.0]).unwrap(),
        AffinePiece::new(vec![vec![-1.0]], vec![1.0]).unwrap(),
        AffinePiece::new(vec![vec![3.0]], vec![-7.0]).unwrap(),
    ];
    let partition = Partition {
        regions: vec![
            Polytope::interval(-3.0, 0.0).unwrap(),
            Polytope::interval(0.0, 2.0).unwrap(),
            Polytope::interval(2.0, 4.0).unwrap(),
        ],
        assignment: vec![],
        domain: Polytope::interval(-3.0, 4.0).unwrap(),
        auxiliary: vec![false; 3],
    };
    let fig = CpwlPredictor::from_region_pieces(partition, pieces).unwrap();
    let (ok, failures) = consistency_on_points(&fig, &domain_grid(&fig, 1000));
    assert!(ok, "{failures} grid disagreements on the three-piece instance");

    for groups in 1..=6 {
        let (_, state) = parabola_state(40, groups);
        let predictor = &state.predictor;
        let (ok, failures) = consistency_on_points(predictor, &domain_grid(predictor, 1000));
        assert!(ok, "P = {groups}: {failures} grid disagreements");
    }
    println!("criterion 03 PASS: max-min equals region pieces on 10^3-point grids for P <= 6");
}

#[test]
fn criterion_04_construction_fidelity_and_size_bounds() {
    for groups in 1..=4 {
        let (ds, state) = parabola_state(40, groups);
        let Network::Fc(net) = &state.network else { panic!("fc build expected") };
        let predictor = &state.predictor;
        let n = predictor.pieces_by_region.len();

        let mut points = domain_grid(predictor, 1000);
        points.extend(ds.samples().iter().map(|s| s.x.clone()));
        for x in &points {
            let expected = predictor.eval(x)[0];
            let got = forward_fc(net, x).unwrap().output[0];
            assert!(
                (got - expected).abs() <= 1e-8,
                "P = {groups}, x = {}: {got} vs {expected}",
                x[0]
            );
        }

        let hidden = net.hidden_widths();
        assert!(
            hidden.len() <= 1 + 4 * floor_log2(n),
            "P = {groups}: depth {} exceeds bound for n = {n}",
            hidden.len()
        );
        assert!(
            hidden.iter().all(|&w| w <= n * n),
            "P = {groups}: width bound violated for n = {n}: {hidden:?}"
        );
        if groups == 2 {
            assert_eq!(hidden, vec![2, 2], "2-piece case must build with two hidden layers of width 2");
        }
    }
    println!("criterion 04 PASS: forward fidelity 1e-8 and size bounds for P in 1..=4");
}

#[test]
fn criterion_05_local_minimum_certification() {
    let started = Instant::now();
    for groups in 1..=3 {
        let (ds, state) = parabola_state(40, groups);
        let epsilon = derive_epsilon(&state.network, &ds).unwrap();
        let outcome = probe_local_min(
            &state.network,
            &ds,
            &Loss::Mse,
            &ProbeConfig::new(1000, epsilon, 42),
        )
        .unwrap();
        assert_eq!(outcome.pattern_changes, 0, "P = {groups}: patterns flipped");
        assert!(
            outcome.min_delta >= -1e-12,
            "P = {groups}: risk decreased by {:e}",
            -outcome.min_delta
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!("criterion 05 PASS: 10^3 trials, zero flips, min delta >= -1e-12, {elapsed:?}");
}

#[test]
fn criterion_06_spuriousness_by_refinement() {
    for groups in 1..=2 {
        let (ds, state) = parabola_state(40, groups);
        let report = demonstrate_spurious(&state, &ds, &Loss::Mse, 1000, 42).unwrap();
        assert!(report.probe.certified, "P = {groups}: base probe failed");
        let refinement = report.refinement.as_ref().expect("refinement must run");
        assert!(refinement.refined_probe.certified, "P = {groups}: refined probe failed");
        assert!(
            refinement.decrease >= 1e-6,
            "P = {groups}: decrease {} below 1e-6",
            refinement.decrease
        );
        assert!(report.is_spurious_demonstrated);
    }
    println!("criterion 06 PASS: refinement strictly decreases risk, both probes certified");
}

/// dx = 4 synthetic dataset for the CNN path. The structured family
/// reachable through conv(2, 2) -> avg-pool -> all-ones read-out has slope
/// <w, (patch1 + patch2) / 2>, so targets y = |x0 + x2| are exactly
/// realizable per sign cluster.
fn cnn_fixture() -> (Dataset, Partition) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut samples = Vec::new();
    for side in [-1.0, 1.0] {
        for _ in 0..12 {
            let x0: f64 = side * rng.gen_range(0.1..1.0);
            let x2: f64 = side * rng.gen_range(0.1..1.0);
            let x1: f64 = rng.gen_range(-1.0..1.0);
            let x3: f64 = rng.gen_range(-1.0..1.0);
            samples.push(Sample {
                x: vec![x0, x1, x2, x3],
                y: vec![(x0 + x2).abs()],
            });
        }
    }
    let ds = Dataset::new(samples, 4, 1).unwrap();
    let regions = vec![
        Polytope::bbox(&[-1.0, -1.0, -1.0, -1.0], &[-0.05, 1.0, -0.05, 1.0]).unwrap(),
        Polytope::bbox(&[0.05, -1.0, 0.05, -1.0], &[1.0, 1.0, 1.0, 1.0]).unwrap(),
    ];
    let domain = Polytope::bbox(&[-1.2; 4], &[1.2; 4]).unwrap();
    let partition = Partition::from_regions(regions, domain, &ds).unwrap();
    (ds, partition)
}

#[test]
fn criterion_07_cnn_construction() {
    let (ds, partition) = cnn_fixture();
    let arch = CnnArch {
        stages: vec![
            CnnStagePlan::Conv(PatchSpec { size: 2, stride: 2 }),
            CnnStagePlan::Pool(PoolKind::Average, PatchSpec { size: 2, stride: 2 }),
        ],
    };
    let (net, fits) =
        build_cnn_network(&ds, &partition, &BuildConfig::default(), &arch).unwrap();
    assert_eq!(fits.len(), 2);

    // forward must reproduce each sample's structured least-squares fit
    for (i, s) in ds.samples().iter().enumerate() {
        let region = partition.assignment[i];
        let fit = fits.iter().find(|f| f.region_idx == region).unwrap();
        let expected = fit.piece.eval(&s.x)[0];
        let got = forward_cnn(&net, &s.x).unwrap().output[0];
        assert!(
            (got - expected).abs() <= 1e-8,
            "sample {i}: {got} vs structured fit {expected}"
        );
    }

    // perturbation probe over the first conv layer and the gadget stack
    let network = Network::Cnn(net);
    let epsilon = derive_epsilon(&network, &ds).unwrap();
    let outcome =
        probe_local_min(&network, &ds, &Loss::Mse, &ProbeConfig::new(1000, epsilon, 42)).unwrap();
    assert_eq!(outcome.pattern_changes, 0);
    assert!(outcome.min_delta >= -1e-12, "delta {:e}", outcome.min_delta);
    println!("criterion 07 PASS: CNN forward matches structured fits, probe certified");
}

#[test]
fn criterion_08_prevalence_of_risk_levels() {
    let ds = gen_parabola(12, -1.0, 1.0).unwrap();
    let with_three = enumerate_patterns_1d(&ds, 3, &Loss::Mse).unwrap();
    let with_two = enumerate_patterns_1d(&ds, 2, &Loss::Mse).unwrap();
    assert!(
        with_three.distinct_levels >= 10,
        "only {} distinct levels",
        with_three.distinct_levels
    );
    assert!(
        with_three.distinct_levels > with_two.distinct_levels,
        "{} vs {}",
        with_three.distinct_levels,
        with_two.distinct_levels
    );
    println!(
        "criterion 08 PASS: {} distinct levels at p_max = 3 (> {} at p_max = 2)",
        with_three.distinct_levels, with_two.distinct_levels
    );
}

#[test]
fn criterion_09_two_sample_degenerate_case() {
    // 1-D pair
    let ds = Dataset::new(
        vec![
            Sample { x: vec![0.0], y: vec![0.0] },
            Sample { x: vec![1.0], y: vec![1.0] },
        ],
        1,
        1,
    )
    .unwrap();
    let state = build_1d_state(&ds, &[], &Loss::Mse, &BuildConfig::default()).unwrap();
    let report = demonstrate_spurious(&state, &ds, &Loss::Mse, 200, 5).unwrap();
    assert!(report.base_risk <= 1e-12);
    assert!(!report.is_spurious_demonstrated);
    assert!(report.verdict.contains("global"), "{}", report.verdict);

    // 2-D pair through the user-supplied-partition path
    let ds2 = Dataset::new(
        vec![
            Sample { x: vec![-3.0, 0.5], y: vec![7.0] },
            Sample { x: vec![2.0, -1.0], y: vec![-1.0] },
        ],
        2,
        1,
    )
    .unwrap();
    let domain = Polytope::bbox(&[-4.0, -2.0], &[3.0, 2.0]).unwrap();
    let partition =
        Partition::from_regions(vec![domain.clone()], domain, &ds2).unwrap();
    let state2 =
        build_state_on_partition(&ds2, partition, &Loss::Mse, &BuildConfig::default()).unwrap();
    let report2 = demonstrate_spurious(&state2, &ds2, &Loss::Mse, 200, 5).unwrap();
    assert!(report2.base_risk <= 1e-12, "risk {}", report2.base_risk);
    assert!(report2.verdict.contains("global"), "{}", report2.verdict);
    println!("criterion 09 PASS: two-sample datasets certify as global minima with risk 0");
}

#[test]
fn criterion_10_homogeneous_rescaling_invariance() {
    let (ds, state) = parabola_state(40, 3);
    let Network::Fc(net) = &state.network else { panic!("fc build expected") };
    let base_outputs: Vec<f64> = ds
        .samples()
        .iter()
        .map(|s| forward_fc(net, &s.x).unwrap().output[0])
        .collect();
    let base_risk = network_risk(&state.network, &ds, &Loss::Mse).unwrap().risk;

    let hidden_count = net.hidden_widths().len();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let layer = rng.gen_range(0..hidden_count);
        let a = rng.gen_range(0.1..10.0);
        let scaled = rescale_homogeneous(net, layer, a).unwrap();
        for (s, &expected) in ds.samples().iter().zip(&base_outputs) {
            let got = forward_fc(&scaled, &s.x).unwrap().output[0];
            assert!(
                (got - expected).abs() <= 1e-9,
                "layer {layer}, a = {a}: {got} vs {expected}"
            );
        }
        let risk = network_risk(&Network::Fc(scaled), &ds, &Loss::Mse).unwrap().risk;
        assert!(
            (risk - base_risk).abs() <= 1e-9 * (1.0 + base_risk),
            "risk changed under rescaling: {risk} vs {base_risk}"
        );
    }
    println!("criterion 10 PASS: 10 seeded rescalings leave outputs and risk unchanged");
}
