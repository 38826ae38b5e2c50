mod common;

use cba::ctc::{ctc_brute_force, ctc_loss, ctc_nll, LabelSequence, LogProbLattice};
use common::{brute_force_nll, central_diff, max_rel_error, random_labels, random_lattice, rng};
use rand::Rng;

#[test]
fn forward_backward_matches_enumeration() {
    let mut r = rng(11);
    let mut checked = 0;
    while checked < 300 {
        let vocab = r.random_range(1..=3);
        let frames = r.random_range(1..=6);
        let len = r.random_range(0..=3);
        let labels = random_labels(&mut r, len, vocab);
        let seq = LabelSequence::new(labels.clone()).unwrap();
        if seq.min_frames() > frames {
            continue;
        }
        let lat = random_lattice(&mut r, frames, vocab + 1, 3.0);
        let want = brute_force_nll(&lat, &labels);
        let got = ctc_nll(&lat, &seq).unwrap();
        assert!(((got - want) / want).abs() <= 1e-9, "{got} vs {want} for {labels:?}, T={frames}");
        let lib = ctc_brute_force(&lat, &seq).unwrap();
        assert!(((lib - want) / want).abs() <= 1e-12);
        assert_eq!(ctc_loss(&lat, &seq).unwrap().loss, got);
        checked += 1;
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(12);
    let mut checked = 0;
    while checked < 60 {
        let vocab = r.random_range(1..=4);
        let frames = r.random_range(2..=8);
        let len = r.random_range(1..=3);
        let labels = random_labels(&mut r, len, vocab);
        let seq = LabelSequence::new(labels).unwrap();
        if seq.min_frames() > frames {
            continue;
        }
        let lat = random_lattice(&mut r, frames, vocab + 1, 2.0);
        let analytic = ctc_loss(&lat, &seq).unwrap().grad;
        let classes = lat.classes();
        let mut f = |v: &[f64]| {
            let l = LogProbLattice::from_scores(frames, classes, v.to_vec()).unwrap();
            ctc_nll(&l, &seq).unwrap()
        };
        let numeric = central_diff(&mut f, lat.as_slice(), 1e-5);
        let err = max_rel_error(&analytic, &numeric, 1e-6);
        assert!(err <= 1e-4, "relative error {err:e}");
        checked += 1;
    }
}

#[test]
fn gradient_rows_sum_to_minus_one() {
    let mut r = rng(13);
    let lat = random_lattice(&mut r, 7, 4, 2.0);
    let seq = LabelSequence::new(vec![1, 2, 2]).unwrap();
    let g = ctc_loss(&lat, &seq).unwrap().grad;
    for row in g.chunks(4) {
        assert!((row.iter().sum::<f64>() + 1.0).abs() < 1e-12);
    }
}
