use proptest::prelude::*;

use sit_core::api::WeightVector;
use sit_core::mdp::AttackAction;
use sit_core::scenario::ScenarioConfig;
use sit_core::traffic::{observe, AdmissionRule, Network, SegmentSpec, SystemState};

fn network(rates: &[f64], rule: AdmissionRule) -> Network {
    Network::new(rates.iter().map(|&r| SegmentSpec::new(r).unwrap()).collect(), rule).unwrap()
}

fn rule() -> impl Strategy<Value = AdmissionRule> {
    prop_oneof![Just(AdmissionRule::InverseLoad), Just(AdmissionRule::LeastLoaded)]
}

fn queues(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..200.0f64], n)
}

fn admission(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, n).prop_map(|w| {
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    })
}

fn action(n: usize) -> impl Strategy<Value = AttackAction> {
    prop_oneof![
        Just(AttackAction::NoAttack),
        (0..n, 0.05..0.95f64).prop_map(|(segment, fraction)| AttackAction::Jam { segment, fraction }),
    ]
}

fn swapped(state: &SystemState) -> SystemState {
    let mut s = state.clone();
    s.queues.reverse();
    s.admission.reverse();
    s
}

proptest! {
    #[test]
    fn transitions_keep_queues_nonnegative_and_ratios_normalized(
        (rates, q, a, act) in prop::collection::vec(1.0..10.0f64, 2..5)
            .prop_flat_map(|r| { let n = r.len(); (Just(r), queues(n), admission(n), action(n)) }),
        rule in rule(),
        arrivals in 0u32..60,
        success in any::<bool>(),
    ) {
        let net = network(&rates, rule);
        let next = net.transition(&SystemState { queues: q, admission: a }, &act, arrivals, success);
        prop_assert!(next.queues.iter().all(|&x| x >= 0.0));
        prop_assert!(next.admission.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!((next.admission.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jamming_never_raises_an_estimate(
        q in queues(3),
        act in action(3),
        success in any::<bool>(),
    ) {
        let obs = observe(&q, &act, success);
        for (est, truth) in obs.estimates.iter().zip(&q) {
            prop_assert!(est <= truth);
        }
        if !success {
            prop_assert_eq!(&obs.estimates, &q);
        }
    }

    #[test]
    fn jamming_a_segment_never_lowers_its_inverse_load_ratio(
        q in queues(2),
        rates in prop::collection::vec(1.0..10.0f64, 2),
        segment in 0usize..2,
        fraction in 0.05..0.95f64,
    ) {
        let net = network(&rates, AdmissionRule::InverseLoad);
        let honest = net.true_ratios(&q);
        let jammed = net.ratios(&observe(&q, &AttackAction::Jam { segment, fraction }, true).estimates);
        prop_assert!(jammed[segment] >= honest[segment] - 1e-12);
    }

    #[test]
    fn symmetric_networks_commute_with_relabelling(
        q in queues(2),
        a in admission(2),
        rate in 1.0..10.0f64,
        act in action(2),
        arrivals in 0u32..60,
        success in any::<bool>(),
    ) {
        let net = network(&[rate, rate], AdmissionRule::InverseLoad);
        let state = SystemState { queues: q, admission: a };
        let mirrored_action = match act {
            AttackAction::Jam { segment, fraction } => AttackAction::Jam { segment: 1 - segment, fraction },
            AttackAction::NoAttack => AttackAction::NoAttack,
        };
        let direct = swapped(&net.transition(&state, &act, arrivals, success));
        let mirrored = net.transition(&swapped(&state), &mirrored_action, arrivals, success);
        for (x, y) in direct.queues.iter().zip(&mirrored.queues).chain(direct.admission.iter().zip(&mirrored.admission)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_queues_stay_equal_without_attack(
        level in 0.0..150.0f64,
        arrivals in prop::collection::vec(0u32..40, 1..20),
    ) {
        let net = network(&[5.0, 5.0], AdmissionRule::InverseLoad);
        let mut state = net.honest_state(vec![level, level]);
        for &lambda in &arrivals {
            state = net.transition(&state, &AttackAction::NoAttack, lambda, false);
            prop_assert_eq!(state.queues[0], state.queues[1]);
            prop_assert_eq!(state.admission[0], state.admission[1]);
        }
    }

    #[test]
    fn weight_lines_round_trip(values in prop::collection::vec(-1e12..1e12f64, 0..12)) {
        let w = WeightVector::new(values);
        let parsed: WeightVector = format!("# comment\n{w}\n").parse().unwrap();
        prop_assert_eq!(parsed, w);
    }

    #[test]
    fn stage_reward_weakly_decreases_in_cost(
        q in queues(2),
        a in admission(2),
        act in action(2),
        success in any::<bool>(),
        low in 0.0..5.0f64,
        extra in 0.0..5.0f64,
    ) {
        let cheap = ScenarioConfig::bundled("system1").unwrap().with_cost(low).model().unwrap();
        let dear = ScenarioConfig::bundled("system1").unwrap().with_cost(low + extra).model().unwrap();
        let state = SystemState { queues: q, admission: a };
        let next = cheap.transition(&state, &act, 8, success);
        let r_cheap = cheap.reward(&state, &act, &next, success);
        let r_dear = dear.reward(&state, &act, &next, success);
        if act.is_attack() {
            prop_assert!(r_dear <= r_cheap + 1e-12);
        } else {
            prop_assert_eq!(r_dear, r_cheap);
        }
    }
}
