use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ewmark_core::calibrators::{FixedKind, OgVariant};
use ewmark_core::eprocess::{growth_rate, run, Construction, EProcessState};
use ewmark_core::watermark::open_unit;
use ewmark_core::{PivotalValue, Status};

fn constructions() -> Vec<Construction> {
    vec![
        Construction::Nonadaptive {
            g: FixedKind::NegLog,
            lambda: 0.4215,
        },
        Construction::WeightAdaptive {
            g: FixedKind::NegLog,
            gamma: 0.5,
        },
        Construction::Og {
            variant: OgVariant::Ea2,
            range: None,
        },
        Construction::recommended_average(),
    ]
}

fn null_path(rng: &mut ChaCha8Rng, c: &Construction, t: usize) -> Vec<f64> {
    let mut state = EProcessState::monitor(c.clone(), 0.05).unwrap();
    (0..t)
        .map(|_| state.step(PivotalValue::new(open_unit(rng)).unwrap()).unwrap().log_m)
        .collect()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Optional stopping cannot push the mean of `M_τ` above 1 under the null.
#[test]
fn stopped_wealth_has_mean_at_most_one() {
    const T: usize = 100;
    let reps = 10_000;
    for c in constructions() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let (mut cross, mut fixed, mut drop) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..reps {
            let path = null_path(&mut rng, &c, T);
            let at = |pred: &dyn Fn(f64) -> bool| path.iter().copied().find(|&l| pred(l)).unwrap_or(path[T - 1]).exp();
            cross.push(at(&|l| l >= 2f64.ln()));
            fixed.push(path[T - 1].exp());
            drop.push(at(&|l| l < 0.5f64.ln()));
        }
        for (rule, xs) in [("cross 2", &cross), ("fixed 100", &fixed), ("below 0.5", &drop)] {
            let (m, se) = mean_se(xs);
            assert!(m <= 1.0 + 3.0 * se, "{} {rule}: mean {m} se {se}", c.label());
        }
    }
}

#[test]
fn null_growth_is_not_positive() {
    for c in [
        Construction::Og {
            variant: OgVariant::Ea2,
            range: None,
        },
        Construction::recommended_average(),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let nonpositive = (0..200)
            .filter(|_| {
                let mut trace = vec![0.0];
                trace.extend(null_path(&mut rng, &c, 1000));
                growth_rate(&trace).unwrap() <= 0.0
            })
            .count();
        assert!(nonpositive >= 190, "{}: {nonpositive}/200", c.label());
    }
}

/// Rebuilding the detector from the stored prefix reproduces each factor bit for bit.
#[test]
fn predictable_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let ys: Vec<PivotalValue> = (0..120)
        .map(|i| {
            let u = open_unit(&mut rng);
            PivotalValue::new(if i % 3 == 0 { u.sqrt() } else { u }).unwrap()
        })
        .collect();
    for c in constructions() {
        let mut live = EProcessState::monitor(c.clone(), 0.05).unwrap();
        for (t, y) in ys.iter().enumerate() {
            let mut replay = EProcessState::monitor(c.clone(), 0.05).unwrap();
            for prev in &ys[..t] {
                replay.step(*prev).unwrap();
            }
            let cals = replay.calibrators();
            let before = replay.component_log_m();
            let out = live.step(*y).unwrap();
            let after = live.component_log_m();
            for (i, (_, cal)) in cals.iter().enumerate() {
                let e = cal.value(y.p_value());
                assert_eq!((before[i] + e.ln()).to_bits(), after[i].to_bits(), "{} t={}", c.label(), t + 1);
                if cals.len() == 1 {
                    assert_eq!(e.to_bits(), out.e_value.to_bits());
                }
            }
        }
    }
}

#[test]
fn average_dominates_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let [wa, og] = [
        Construction::WeightAdaptive {
            g: FixedKind::NegLog,
            gamma: 0.5,
        },
        Construction::Og {
            variant: OgVariant::Ea2,
            range: None,
        },
    ];
    for rep in 0..100 {
        let skew = 1.0 + (rep % 5) as f64 * 0.5;
        let ys: Vec<PivotalValue> = (0..200)
            .map(|_| PivotalValue::new(open_unit(&mut rng).powf(1.0 / skew)).unwrap())
            .collect();
        let go = |c: &Construction| {
            let mut s = EProcessState::monitor(c.clone(), 0.05).unwrap();
            ys.iter().map(|y| s.step(*y).unwrap().log_m).collect::<Vec<_>>()
        };
        let (a, w, o) = (go(&Construction::recommended_average()), go(&wa), go(&og));
        for t in 0..ys.len() {
            assert!(a[t] >= w[t].max(o[t]) - std::f64::consts::LN_2, "t={t}");
        }
    }
}

#[test]
fn alternative_streams_stop_early() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut stops = Vec::new();
    for _ in 0..200 {
        // Y with CDF y^2, the law of the pivot for P = (1/2, 1/2).
        let ys: Vec<PivotalValue> = (0..700)
            .map(|_| PivotalValue::new(open_unit(&mut rng).sqrt()).unwrap())
            .collect();
        let res = run(ys, Construction::recommended_average(), 0.05, 0.0, None).unwrap();
        assert_eq!(res.verdict.status, Status::Rejected);
        stops.push(res.verdict.stop_index.unwrap());
    }
    stops.sort_unstable();
    assert!(stops[100] < 100, "median stop {}", stops[100]);
}
