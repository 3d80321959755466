use proptest::prelude::*;
use twrnnt::lattice::{backward, forward, forward_backward, log_sum_exp, rnnt_loss, rnnt_loss_grad};
use twrnnt::oracle::{
    enumerate, exact_conditionals, exact_prefix_logp, exact_sequence_logp, finite_diff_grad, max_relative_error,
    random_labels, random_lattice, FullLatticeModel,
};
use twrnnt::token_conditional::{conditional_profile, emission_forward, emission_forward_fast, next_token_distribution};
use twrnnt::weighted_loss::{weighted_rnnt_loss, weighted_rnnt_loss_grad, TokenWeights};
use twrnnt::{LabelSequence, PosteriorLattice, Vocabulary};

fn instance(seed: u64, frames: usize, labels: usize, vocab: usize) -> (PosteriorLattice, LabelSequence) {
    let vocab = Vocabulary::new(vocab).unwrap();
    (random_lattice(frames, labels, vocab, 1.5, seed), random_labels(labels, vocab, seed))
}

#[test]
fn small_cases_match_enumeration() {
    let (lat, y) = instance(7, 3, 2, 3);
    let loss = rnnt_loss(&lat, &y).unwrap();
    let exact = exact_sequence_logp(&lat, &y).unwrap();
    assert!((loss + exact).abs() < 1e-10);

    let (lat, y) = instance(8, 4, 3, 4);
    let loss = rnnt_loss(&lat, &y).unwrap();
    assert!((loss + exact_sequence_logp(&lat, &y).unwrap()).abs() < 1e-10);
}

#[test]
fn anti_diagonal_cuts_carry_all_mass() {
    let (lat, y) = instance(21, 5, 3, 3);
    let tables = forward_backward(&lat, &y).unwrap();
    let (frames, labels) = (5usize, 3usize);
    for n in 0..frames + labels {
        let terms: Vec<f64> = (0..frames)
            .filter(|&t| n >= t && n - t <= labels)
            .map(|t| tables.occupancy(t, n - t))
            .collect();
        assert!((log_sum_exp(&terms) - tables.loglik()).abs() < 1e-9, "cut {n}");
    }
    assert_eq!(tables.forward.at(0, 0), 0.0);
    assert_eq!(tables.backward.at(frames - 1, labels), lat.blank(frames - 1, labels));
}

#[test]
fn figure_configuration_partial_paths() {
    // Four frames, two tokens: A(t, 2) collects every partial path that emits the
    // first token at some frame t1 <= t, blanks up to t, then emits the second.
    let (lat, y) = instance(99, 4, 2, 3);
    let fwd = emission_forward(&lat, &y).unwrap();
    let blank = lat.vocab().blank();
    for t in 0..4 {
        let mut terms = Vec::new();
        for t1 in 0..=t {
            let lead: f64 = (0..t1).map(|s| lat.get(s, 0, blank)).sum();
            let run: f64 = (t1..t).map(|s| lat.get(s, 1, blank)).sum();
            terms.push(lead + lat.get(t1, 0, y.tokens()[0]) + run + lat.get(t, 1, y.tokens()[1]));
        }
        assert!((fwd.at(t, 2) - log_sum_exp(&terms)).abs() < 1e-12);
    }
    // Four possible emission frames for the first token.
    assert_eq!(enumerate(4, 1).unwrap().len(), 4);
}

#[test]
fn prefix_masses_match_partial_enumeration() {
    let (lat, y) = instance(5, 5, 3, 4);
    let fwd = emission_forward(&lat, &y).unwrap();
    for u in 0..=3 {
        let exact = exact_prefix_logp(&lat, &y, u).unwrap();
        assert!((fwd.prefix_logp[u] - exact).abs() < 1e-10);
    }
}

#[test]
fn next_token_distribution_sums_to_one_for_full_model() {
    let model = FullLatticeModel { frames: 3, vocab: Vocabulary::new(3).unwrap(), max_labels: 4, scale: 1.0, seed: 17 };
    let y = LabelSequence::from_tokens_unchecked(vec![2, 0, 1]);
    let lat = model.lattice_for(&y).unwrap();
    for u in 1..=4 {
        let dist = next_token_distribution(&lat, &y, u).unwrap();
        assert!((dist.total() - 1.0).abs() < 1e-9);
        if u <= 3 {
            let c = conditional_profile(&lat, &y).unwrap().conditionals[u - 1];
            assert!((dist.tokens[y.tokens()[u - 1]] - c).abs() < 1e-12);
        }
    }
}

#[test]
fn weighted_gradient_matches_finite_differences() {
    let (lat, y) = instance(3, 3, 2, 3);
    let w = TokenWeights { lambdas: vec![1.6, 0.4], ..TokenWeights::uniform(2) };
    let analytic = weighted_rnnt_loss_grad(&lat, &y, &w).unwrap();
    let numeric = finite_diff_grad(|l| weighted_rnnt_loss(l, &y, &w), &lat, 1e-6).unwrap();
    assert!(max_relative_error(analytic.values(), numeric.values(), 1e-3) < 1e-4);

    let w = TokenWeights { lambdas: vec![2.0, 0.0], ..TokenWeights::uniform(2) };
    let loss = weighted_rnnt_loss(&lat, &y, &w).unwrap();
    let c = exact_conditionals(&lat, &y).unwrap();
    let profile = conditional_profile(&lat, &y).unwrap();
    assert!((loss - (-2.0 * c[0].ln() - profile.final_blank_logp)).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dynamic_programs_agree_with_oracle(seed in any::<u64>(), frames in 1usize..=6, labels in 0usize..=4, vocab in 1usize..=5) {
        let (lat, y) = instance(seed, frames, labels, vocab);
        let f = forward(&lat, &y).unwrap();
        let b = backward(&lat, &y).unwrap();
        prop_assert!((f.loglik - b.loglik).abs() < 1e-9);
        let exact = exact_sequence_logp(&lat, &y).unwrap();
        prop_assert!((f.loglik - exact).abs() < 1e-10);
        if labels > 0 {
            let profile = conditional_profile(&lat, &y).unwrap();
            let oracle = exact_conditionals(&lat, &y).unwrap();
            for (c, o) in profile.conditionals.iter().zip(&oracle) {
                prop_assert!((c - o).abs() < 1e-10);
            }
            prop_assert!((profile.loglik_check.unwrap() - f.loglik).abs() < 1e-9);
            let slow = emission_forward(&lat, &y).unwrap();
            let fast = emission_forward_fast(&lat, &y).unwrap();
            for (a, b) in slow.prefix_logp.iter().zip(&fast.prefix_logp) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for u in 1..=labels {
                prop_assert!(slow.prefix_logp[u] <= slow.prefix_logp[u - 1] + 1e-12);
            }
        }
    }

    #[test]
    fn standard_gradient_matches_finite_differences(seed in any::<u64>(), frames in 1usize..=4, labels in 0usize..=3, vocab in 1usize..=3) {
        let (lat, y) = instance(seed, frames, labels, vocab);
        let analytic = rnnt_loss_grad(&lat, &y).unwrap();
        let numeric = finite_diff_grad(|l| rnnt_loss(l, &y), &lat, 1e-6).unwrap();
        prop_assert!(max_relative_error(analytic.values(), numeric.values(), 1e-3) < 1e-4);
        // Every path leaves through the final blank.
        let blank = lat.vocab().blank();
        prop_assert!((analytic.get(frames - 1, labels, blank) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_gradient_is_linear_in_weights(seed in any::<u64>(), a in prop::collection::vec(0.0f64..3.0, 3), b in prop::collection::vec(0.0f64..3.0, 3)) {
        let (lat, y) = instance(seed, 4, 3, 3);
        let wa = TokenWeights { lambdas: a.clone(), final_blank_weight: 0.5, ..TokenWeights::uniform(3) };
        let wb = TokenWeights { lambdas: b.clone(), final_blank_weight: 1.5, ..TokenWeights::uniform(3) };
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ws = TokenWeights { lambdas: sum, final_blank_weight: 2.0, ..TokenWeights::uniform(3) };
        let ga = weighted_rnnt_loss_grad(&lat, &y, &wa).unwrap();
        let gb = weighted_rnnt_loss_grad(&lat, &y, &wb).unwrap();
        let gs = weighted_rnnt_loss_grad(&lat, &y, &ws).unwrap();
        for i in 0..gs.values().len() {
            prop_assert!((ga.values()[i] + gb.values()[i] - gs.values()[i]).abs() < 1e-9);
        }
    }
}
