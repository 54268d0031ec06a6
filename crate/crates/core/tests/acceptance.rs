//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;

use invset::coincidence::{symplectic_base, verify_coincidence};
use invset::differentiate::{jacobian, jacobian_fd};
use invset::integrate::{flow_adaptive, FlowOptions};
use invset::invariance::{verify_N_invariance, verify_rank_invariance, verify_set_persistence, Verdict};
use invset::models::toda::{self, ExplicitSetId, Lattice};
use invset::models::{kepler, oscillator};
use invset::rank_sets::{classify_M, member_N};
use invset::{ConservedQuantitySet, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLS: f64 = 1e-10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn sv(v: &[f64]) -> StateVector {
    StateVector::from_slice(v).unwrap()
}

fn opts() -> FlowOptions {
    FlowOptions::with_tolerances(TOLS, TOLS)
}

/// Physical-regime lattice state: `X ∈ [0.2, 1.5]`, `u ∈ [−1, 1]`.
fn random_toda(rng: &mut ChaCha8Rng, lattice: Lattice, n: usize) -> StateVector {
    let mut v: Vec<f64> = (0..lattice.x_len(n)).map(|_| rng.gen_range(0.2..1.5)).collect();
    v.extend((0..n).map(|_| rng.gen_range(-1.0..1.0)));
    sv(&v)
}

fn random_box(rng: &mut ChaCha8Rng, dim: usize, half: f64) -> StateVector {
    sv(&(0..dim).map(|_| rng.gen_range(-half..half)).collect::<Vec<_>>())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// `‖analytic − fd‖_max / ‖analytic‖_max`.
fn gradient_rel_error(q: &ConservedQuantitySet, x: &StateVector) -> f64 {
    let a = jacobian(q, x).unwrap();
    let f = jacobian_fd(q, x, None).unwrap();
    let diff = a
        .as_row_major()
        .iter()
        .zip(f.as_row_major())
        .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()));
    diff / a.max_abs()
}

fn criterion_1() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for a in [1.0, 1.5] {
        let x0 = kepler::circular_sample(a, 0.0).unwrap().to_state().unwrap();
        let t_end = kepler::circular_period(a);
        let kf = flow_adaptive(&kepler::kepler_field(), &x0, t_end, &opts()).unwrap();
        let lf = flow_adaptive(&kepler::linear_pair_field(a).unwrap(), &x0, t_end, &opts()).unwrap();
        let (dev, _) = kf.max_deviation(&lf).unwrap();
        let closure = kf.last().max_abs_diff(&x0);
        let rep = verify_coincidence(
            &symplectic_base(4).unwrap(),
            &kepler::hamiltonian(),
            &kepler::linear_driver(a).unwrap(),
            &x0,
            1,
            t_end,
            1e-6,
            &opts(),
        )
        .unwrap();
        let ok = dev < 1e-6 && closure < 1e-6 && rep.verdict == Verdict::Pass;
        pass &= ok;
        notes.push(format!("a={a}: deviation {dev:.2e}, closure {closure:.2e}, verdict {}", rep.verdict));
    }
    let rep = verify_coincidence(
        &symplectic_base(4).unwrap(),
        &kepler::hamiltonian(),
        &kepler::linear_driver(1.0).unwrap(),
        &sv(&[0.0, 2.0, 1.0, 0.0]),
        1,
        2.0 * PI,
        1e-6,
        &opts(),
    )
    .unwrap();
    let control = rep.verdict == Verdict::HypothesisError && rep.max_deviation > 1e-3;
    pass &= control;
    notes.push(format!("off-set control: {} with deviation {:.2e}", rep.verdict, rep.max_deviation));
    outcome(pass, notes.join("; "))
}

fn criterion_2() -> Outcome {
    let f = toda::periodic_field(4).unwrap();
    let q = toda::periodic_quantity(4, &[1, 2, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let generic = random_toda(&mut rng, Lattice::Periodic, 4);
    let pattern = sv(&[0.3, 0.7, 0.3, 0.7, 0.5, -0.2, 0.5, -0.2]);
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, x0, want) in [("pattern", pattern, 2), ("generic", generic, 3)] {
        let r = verify_rank_invariance(&f, &q, &x0, 10.0, 1e-8, &opts()).unwrap();
        let ranks = r.ranks();
        let all = ranks.len() == 401 && ranks.iter().all(|&s| s == want);
        let margin = r.min_margin().unwrap();
        let drift = r.drift.as_ref().unwrap().worst();
        let ok = all && drift < 1e-8 && (want != 2 || margin >= 10.0) && r.verdict == Verdict::Pass;
        pass &= ok;
        notes.push(format!(
            "{name}: rank {want} at {}/{} samples, min margin {margin:.2e}, drift {drift:.2e}",
            ranks.iter().filter(|&&s| s == want).count(),
            ranks.len()
        ));
    }
    outcome(pass, notes.join("; "))
}

/// Sample parameters for each non-empty set, chosen so the trajectory
/// stays bounded on `[0, 10]`.
fn persistence_params(id: &str, n: usize) -> Vec<Vec<f64>> {
    let even = n % 2 == 0;
    match (id, even) {
        ("M0_I3", true) => vec![vec![0.001, 0.3]],
        ("M1_I13", true) => vec![vec![0.4, 0.9, 0.6]],
        ("M1_I23", true) => vec![vec![0.001, 0.3, -0.1]],
        ("M2_I123", true) => vec![vec![0.3, 0.7, 0.5, -0.2]],
        ("M0_I3", false) => vec![vec![]],
        ("M1_I13", false) => vec![vec![0.6]],
        ("M1_I23", false) => vec![vec![0.4]],
        ("M2_I123", false) => vec![vec![0.6, 0.3]],
        ("M0_F3", true) => vec![vec![-0.3]],
        ("M1_F13", true) => vec![vec![0.5, 0.3]],
        ("M1_F23", true) => vec![vec![0.5, 0.2]],
        ("M2_F123", true) => vec![vec![0.5, 0.2, -0.1]],
        ("M0_F3", false) | ("M1_F13", false) => vec![vec![]],
        ("M1_F23", false) => vec![vec![0.7, 0.0], vec![0.0, -0.4]],
        ("M2_F123", false) => vec![vec![0.3, -0.2]],
        _ => unreachable!("no parameters for {id}"),
    }
}

fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    let mut count = 0;
    for lattice in [Lattice::Periodic, Lattice::Nonperiodic] {
        for n in [4, 5] {
            let field = toda::field(lattice, n).unwrap();
            for id in ExplicitSetId::nonempty(lattice) {
                for p in persistence_params(&id.to_string(), n) {
                    let x0 = toda::explicit_set_sample(&id, n, &p).unwrap();
                    let res = |x: &StateVector| toda::explicit_set_residual(&id, n, x);
                    let r = verify_set_persistence(&field, &res, &x0, 10.0, 1e-7, &opts()).unwrap();
                    count += 1;
                    worst = worst.max(r.max_residual());
                    let mut ok = r.passed() && r.max_residual() < 1e-7;
                    if lattice == Lattice::Periodic && n % 2 == 1 {
                        let fmax = r
                            .trajectory
                            .states()
                            .iter()
                            .map(|x| field.evaluate(x).unwrap().max_abs())
                            .fold(0.0_f64, f64::max);
                        ok &= fmax < 1e-12;
                    }
                    if !ok {
                        failures.push(format!("{id} n={n} params {p:?}: residual {:.2e}", r.max_residual()));
                    }
                    pass &= ok;
                }
            }
        }
    }
    let mut detail = format!("{count} set starts, worst residual {worst:.2e}");
    if !failures.is_empty() {
        detail.push_str(&format!("; failing: {}", failures.join(", ")));
    }
    outcome(pass, detail)
}

fn criterion_4() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, z0) in [("M2_I123", vec![0.3, 0.7, 0.5, -0.2]), ("M2_F123", vec![0.5, 0.2, -0.1])] {
        let id: ExplicitSetId = name.parse().unwrap();
        let red = toda::reduced_dynamics(&id).unwrap();
        let full = toda::field(id.lattice(), 4).unwrap();
        let x0 = red.lift(&z0, 4).unwrap();
        let ft = flow_adaptive(&full, &x0, 10.0, &opts()).unwrap();
        let rt = flow_adaptive(red.system(), &sv(&z0), 10.0, &opts()).unwrap();
        let dev = ft
            .states()
            .iter()
            .zip(rt.states())
            .map(|(a, b)| a.max_abs_diff(&red.lift(b, 4).unwrap()))
            .fold(0.0_f64, f64::max);
        pass &= dev < 1e-7;
        notes.push(format!("{name}: max deviation {dev:.2e}"));
    }
    outcome(pass, notes.join("; "))
}

fn criterion_5() -> Outcome {
    let mut worst = 0.0_f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 3..=6 {
        for m in 1..=3 {
            let c = toda::henon_closed_form(n, m).unwrap();
            let o = toda::henon_invariant_oracle(n, m).unwrap();
            for _ in 0..100 {
                let x = random_toda(&mut rng, Lattice::Periodic, n);
                let (a, b) = (c.value_raw(&x)[0], o.value_raw(&x)[0]);
                let rel = (a - b).abs() / a.abs().max(b.abs());
                if a != b {
                    worst = worst.max(rel);
                }
            }
        }
    }
    outcome(worst <= 1e-12, format!("1200 comparisons, worst relative gap {worst:.2e}"))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut trace_gap, mut lax, mut grad) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut pass = true;
    for n in 3..=5 {
        let closed: Vec<_> = (1..=3).map(|k| toda::flaschka_closed_form(n, k).unwrap()).collect();
        let traces: Vec<_> = (1..=3).map(|k| toda::flaschka_trace(n, k).unwrap()).collect();
        let stack = toda::nonperiodic_quantity(n, &[1, 2, 3]).unwrap();
        for _ in 0..50 {
            let x = random_toda(&mut rng, Lattice::Nonperiodic, n);
            for (c, t) in closed.iter().zip(&traces) {
                let (a, b) = (c.value_raw(&x)[0], t.value_raw(&x)[0]);
                pass &= rel_close(a, b, 1e-12);
                if a != b {
                    trace_gap = trace_gap.max((a - b).abs() / a.abs().max(b.abs()));
                }
            }
            let l = toda::lax_commutator_residual(n, &x).unwrap();
            pass &= l < 1e-12;
            lax = lax.max(l);
            let g = gradient_rel_error(&stack, &x);
            pass &= g <= 1e-6;
            grad = grad.max(g);
        }
    }
    outcome(
        pass,
        format!("150 states: trace gap {trace_gap:.2e}, Lax residual {lax:.2e}, gradient error {grad:.2e}"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut probes = 0usize;
    let mut hits = Vec::new();
    for lattice in [Lattice::Periodic, Lattice::Nonperiodic] {
        for n in [4, 5] {
            let dim = lattice.state_dim(n);
            let mut states: Vec<StateVector> = (0..1000).map(|_| random_box(&mut rng, dim, 2.0)).collect();
            for id in ExplicitSetId::nonempty(lattice) {
                let names = id.sample_params(n).unwrap();
                for _ in 0..5 {
                    let mut p: Vec<f64> = names.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
                    if lattice == Lattice::Nonperiodic && n % 2 == 1 && id.to_string() == "M1_F23" {
                        let zero = rng.gen_range(0..2);
                        p[zero] = 0.0;
                    }
                    states.push(toda::explicit_set_sample(&id, n, &p).unwrap());
                }
            }
            for id in ExplicitSetId::empty(lattice) {
                let q = id.quantity(n).unwrap();
                for x in &states {
                    probes += 1;
                    if classify_M(&q, x, 1e-8).unwrap().s == id.rank() {
                        hits.push(format!("{id} n={n} at {x}"));
                    }
                }
            }
        }
    }
    let detail = if hits.is_empty() {
        format!("{probes} probes, no state in a declared-empty set")
    } else {
        format!("{probes} probes, {} hits, first: {}", hits.len(), hits[0])
    };
    outcome(hits.is_empty(), detail)
}

fn criterion_8() -> Outcome {
    let f = oscillator::harmonic_field();
    let q = oscillator::circle_power(3);
    let rep = verify_N_invariance(&f, &q, &sv(&[1.0, 0.0]), 2, 2.0 * PI, 1e-4, &opts()).unwrap();
    let mut pass = rep.verdict == Verdict::Pass;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut states: Vec<StateVector> = rep.trajectory.states().to_vec();
    states.extend((0..200).map(|_| random_box(&mut rng, 2, 2.0)));
    states.extend((0..50).map(|_| {
        let th: f64 = rng.gen_range(0.0..2.0 * PI);
        sv(&[th.cos(), th.sin()])
    }));
    let (mut nest_bad, mut ident_bad) = (0, 0);
    for x in &states {
        let n1 = member_N(&q, x, 1, 1e-4).unwrap().verdict;
        let n2 = member_N(&q, x, 2, 1e-4).unwrap().verdict;
        if n2 && !n1 {
            nest_bad += 1;
        }
        let m0 = classify_M(&q, x, 1e-8).unwrap().s == 0;
        let n1_matched = member_N(&q, x, 1, 1e-8).unwrap().verdict;
        if m0 != n1_matched {
            ident_bad += 1;
        }
    }
    pass &= nest_bad == 0 && ident_bad == 0;
    outcome(
        pass,
        format!(
            "N_(2) along orbit: {}, worst residual {:.2e}; {} probe states, nesting violations {nest_bad}, M_(0)/N_(1) mismatches {ident_bad}",
            rep.verdict,
            rep.max_residual(),
            states.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cases: Vec<(String, ConservedQuantitySet, Box<dyn Fn(&mut ChaCha8Rng) -> StateVector>)> = Vec::new();
    let planar = |rng: &mut ChaCha8Rng| random_box(rng, 2, 2.0);
    cases.push(("R2".into(), oscillator::radius_squared(), Box::new(planar)));
    for p in [1, 2, 3] {
        cases.push((format!("CIRCLE{p}"), oscillator::circle_power(p), Box::new(planar)));
    }
    let kepler_state = |rng: &mut ChaCha8Rng| {
        let r: f64 = rng.gen_range(0.5..2.0);
        let th: f64 = rng.gen_range(0.0..2.0 * PI);
        sv(&[r * th.cos(), r * th.sin(), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
    };
    for a in [1.0, 1.5] {
        cases.push((format!("H,A,K(a={a})"), kepler::kepler_quantities(a).unwrap(), Box::new(kepler_state)));
        cases.push((format!("G(a={a})"), kepler::linear_driver(a).unwrap(), Box::new(kepler_state)));
    }
    for n in 3..=6 {
        cases.push((
            format!("I123(n={n})"),
            toda::periodic_quantity(n, &[1, 2, 3]).unwrap(),
            Box::new(move |rng: &mut ChaCha8Rng| random_toda(rng, Lattice::Periodic, n)),
        ));
        cases.push((
            format!("F123(n={n})"),
            toda::nonperiodic_quantity(n, &[1, 2, 3]).unwrap(),
            Box::new(move |rng: &mut ChaCha8Rng| random_toda(rng, Lattice::Nonperiodic, n)),
        ));
    }
    let mut worst = (0.0_f64, String::new());
    for (name, q, sample) in &cases {
        for _ in 0..50 {
            let x = sample(&mut rng);
            let e = gradient_rel_error(q, &x);
            if e > worst.0 || e.is_nan() {
                worst = (e, name.clone());
            }
        }
    }
    outcome(
        worst.0 <= 1e-6,
        format!("{} quantities x 50 states, worst relative error {:.2e} ({})", cases.len(), worst.0, worst.1),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("Kepler coincidence", criterion_1),
        ("rank invariance", criterion_2),
        ("explicit-set persistence", criterion_3),
        ("reduced-dynamics equivalence", criterion_4),
        ("Henon oracle equality", criterion_5),
        ("Flaschka consistency", criterion_6),
        ("emptiness probes", criterion_7),
        ("N_(r) machinery", criterion_8),
        ("differentiation", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("acceptance {} [{tag}] {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
