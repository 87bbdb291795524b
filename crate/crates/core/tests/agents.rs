//! Action-sampling contracts, policy-gradient behavior, and the two-stage
//! training schedule.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use thermens_core::agents::{
    force_nonempty, init_policy_params, sample_high_action, sample_low_action, train_two_stage, ActionMode,
    BoundHeads, HrlAgents, Reinforce, TrainConfig, LOW_PREFIX,
};
use thermens_core::diff::{OptimizerKind, ParameterSet, Tape, Tensor};
use thermens_core::encoder::EncoderConfig;
use thermens_core::frames::StreamFrames;

#[test]
fn high_log_prob_at_even_odds() {
    // p = (0.5, 0.5): every outcome has pmf 0.25.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut tape = Tape::new();
        let logits = tape.var(Tensor::vector(vec![0.0, 0.0]));
        let (action, _) = sample_high_action(&mut tape, logits, ActionMode::Sample, &mut rng);
        assert!((action.log_prob - 0.25_f64.ln()).abs() < 1e-12);
        assert!(action.b.iter().any(|&x| x));
    }
}

#[test]
fn high_log_prob_saturates_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let logits = tape.var(Tensor::vector(vec![50.0, 60.0, 55.0]));
    let (action, _) = sample_high_action(&mut tape, logits, ActionMode::Sample, &mut rng);
    assert_eq!(action.b, vec![true, true, true]);
    assert!(action.log_prob.abs() < 1e-12);
}

#[test]
fn empty_draw_forces_most_probable() {
    let mut b = vec![false, false];
    force_nonempty(&mut b, &[0.2, 0.6]);
    assert_eq!(b, vec![false, true]);

    // Strongly negative logits make the raw draw all-zero deterministically.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let logits = tape.var(Tensor::vector(vec![-50.0, -40.0]));
    let (action, node) = sample_high_action(&mut tape, logits, ActionMode::Sample, &mut rng);
    assert_eq!(action.b, vec![false, true]);
    // log_prob was recomputed for the forced vector.
    let expect = (1.0 - sigmoid(-50.0)).ln() + sigmoid(-40.0).ln();
    assert!((action.log_prob - expect).abs() < 1e-9);
    assert_eq!(tape.value(node).as_scalar(), action.log_prob);
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn single_selection_gets_unit_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tape = Tape::new();
    let conc = tape.var(Tensor::vector(vec![3.7]));
    let (action, _) = sample_low_action(&mut tape, conc, &[2], 5, ActionMode::Sample, &mut rng).unwrap();
    assert_eq!(action.w, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    assert!(action.log_prob.abs() < 1e-12);
}

#[test]
fn empty_selection_is_contract_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new();
    let conc = tape.var(Tensor::vector(vec![]));
    assert!(sample_low_action(&mut tape, conc, &[], 4, ActionMode::Sample, &mut rng).is_err());
}

#[test]
fn low_action_simplex_contract_10k() {
    // Random states through a real head: weights on the simplex, zeros off
    // selection, log-probs matching the Dirichlet density computed directly.
    let n = 8;
    let s_dim = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = init_policy_params(LOW_PREFIX, s_dim + n, 12, n, &mut rng);
    for trial in 0..10_000 {
        let mut tape = Tape::new();
        let head = BoundHeads::bind(&mut tape, &params, LOW_PREFIX);
        let s: Vec<f64> = (0..s_dim + n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let s_node = tape.constant(Tensor::vector(s));
        let k = rng.gen_range(1..=n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
        }
        let mut selected = idx[..k].to_vec();
        selected.sort_unstable();

        let conc = head.concentrations(&mut tape, s_node, &selected, 0.05, 50.0);
        let (action, _) =
            sample_low_action(&mut tape, conc, &selected, n, ActionMode::Sample, &mut rng).unwrap();

        let sum: f64 = action.w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "trial {trial}: sum {sum}");
        for (i, &w) in action.w.iter().enumerate() {
            assert!(w >= 0.0);
            if !selected.contains(&i) {
                assert_eq!(w, 0.0, "trial {trial}: weight off selection");
            }
        }

        // Direct density computation.
        let c = tape.value(conc).values();
        let total: f64 = c.iter().sum();
        let mut expect = ln_gamma(total);
        for (&ci, &i) in c.iter().zip(&selected) {
            expect += (ci - 1.0) * action.w[i].ln() - ln_gamma(ci);
        }
        assert!(
            (action.log_prob - expect).abs() < 1e-9,
            "trial {trial}: log_prob {} vs direct {expect}",
            action.log_prob
        );
    }
}

#[test]
fn dirichlet_concentration_sampling_statistics() {
    // Equal concentrations of 50 over three models concentrate near 1/3.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut within = 0;
    for _ in 0..1000 {
        let mut tape = Tape::new();
        let conc = tape.constant(Tensor::vector(vec![50.0, 50.0, 50.0]));
        let (action, _) =
            sample_low_action(&mut tape, conc, &[0, 1, 2], 3, ActionMode::Sample, &mut rng).unwrap();
        if action.w.iter().all(|&w| (w - 1.0 / 3.0).abs() <= 0.1) {
            within += 1;
        }
    }
    assert!(within >= 950, "only {within})/1000 draws within 0.33 +- 0.1");
}

#[test]
fn greedy_low_action_normalizes_concentrations() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut tape = Tape::new();
    let conc = tape.constant(Tensor::vector(vec![2.0, 6.0]));
    let (action, _) = sample_low_action(&mut tape, conc, &[1, 3], 4, ActionMode::Greedy, &mut rng).unwrap();
    assert_eq!(action.w, vec![0.0, 0.25, 0.0, 0.75]);
}

#[test]
fn zero_rewards_leave_parameters_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = init_policy_params(LOW_PREFIX, 6, 8, 3, &mut rng);
    let before = params.clone();

    let mut tape = Tape::new();
    let head = BoundHeads::bind(&mut tape, &params, LOW_PREFIX);
    let s = tape.constant(Tensor::vector(vec![0.3, -0.1, 0.7, 0.2, -0.4, 0.9]));
    let conc = head.concentrations(&mut tape, s, &[0, 1, 2], 0.05, 50.0);
    let (_, logp) = sample_low_action(&mut tape, conc, &[0, 1, 2], 3, ActionMode::Sample, &mut rng).unwrap();
    let surrogate = tape.scale(logp, 0.0);

    let mut opt = Reinforce::new(OptimizerKind::Adam, 0.01, 1.0);
    opt.step(&mut params, &tape, surrogate).unwrap();
    assert_eq!(params, before);
}

#[test]
fn positive_reward_raises_action_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params = init_policy_params(LOW_PREFIX, 6, 8, 3, &mut rng);
    let s_values = vec![0.3, -0.1, 0.7, 0.2, -0.4, 0.9];
    let selected = [0usize, 1, 2];

    let run = |params: &ParameterSet, rng: &mut ChaCha8Rng| {
        let mut tape = Tape::new();
        let head = BoundHeads::bind(&mut tape, params, LOW_PREFIX);
        let s = tape.constant(Tensor::vector(s_values.clone()));
        let conc = head.concentrations(&mut tape, s, &selected, 0.05, 50.0);
        let (action, logp) =
            sample_low_action(&mut tape, conc, &selected, 3, ActionMode::Sample, rng).unwrap();
        (tape, action, logp)
    };
    let (mut tape, action, logp) = run(&params, &mut rng);
    let surrogate = tape.scale(logp, 1.0); // reward +1
    let mut opt = Reinforce::new(OptimizerKind::Sgd, 0.01, 1.0);
    opt.step(&mut params, &tape, surrogate).unwrap();

    // Recompute the log-density of the same action under the updated policy.
    let mut tape2 = Tape::new();
    let head = BoundHeads::bind(&mut tape2, &params, LOW_PREFIX);
    let s = tape2.constant(Tensor::vector(s_values.clone()));
    let conc = head.concentrations(&mut tape2, s, &selected, 0.05, 50.0);
    let w_sel: Vec<f64> = selected.iter().map(|&i| action.w[i]).collect();
    let lp_node = tape2.dirichlet_log_pmf(conc, &w_sel);
    let after = tape2.value(lp_node).as_scalar();
    assert!(
        after > action.log_prob,
        "log-prob did not increase: {} -> {after}",
        action.log_prob
    );
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        lambda: 0.5,
        batch_size: 16,
        stage1_epochs: 2,
        stage2_epochs: 2,
        steps_per_epoch: 96,
        hidden: 16,
        seed: 77,
        ..TrainConfig::default()
    }
}

fn tiny_setup() -> (Vec<StreamFrames>, thermens_core::models::ModelLibrary, EncoderConfig) {
    let ds = common::planted_stream(400, 0.02, 1001);
    let (library, _) = common::oracle_library(5, 1002);
    let frames = StreamFrames::build(&ds, &library, 4).unwrap();
    let enc = EncoderConfig::new(5).with_hidden(16);
    (vec![frames], library, enc)
}

#[test]
fn stage_one_never_touches_high_head() {
    let (streams, library, enc) = tiny_setup();
    let mut cfg = tiny_cfg();
    cfg.stage2_epochs = 0;
    let (agents, _) = train_two_stage(&streams, &library, &enc, &cfg).unwrap();
    let init = HrlAgents::init(enc, cfg.hidden, cfg.conc_min, cfg.conc_max, cfg.seed);
    for (name, t) in agents.params.iter() {
        if name.starts_with("high.") {
            assert_eq!(t, init.params.get(name), "{name} changed during stage 1");
        } else if name.starts_with("low.l2.w") {
            assert_ne!(t, init.params.get(name), "{name} never updated");
        }
    }
}

#[test]
fn training_log_is_deterministic_by_seed() {
    let (streams, library, enc) = tiny_setup();
    let cfg = tiny_cfg();
    let (_, log_a) = train_two_stage(&streams, &library, &enc, &cfg).unwrap();
    let (_, log_b) = train_two_stage(&streams, &library, &enc, &cfg).unwrap();
    assert_eq!(log_a, log_b);
    let mut cfg2 = cfg.clone();
    cfg2.seed = 78;
    let (_, log_c) = train_two_stage(&streams, &library, &enc, &cfg2).unwrap();
    assert_ne!(log_a, log_c);
}

#[test]
fn stage_one_reward_trend_is_nondecreasing() {
    let (streams, library, enc) = tiny_setup();
    let cfg = TrainConfig {
        lambda: 0.5,
        batch_size: 16,
        stage1_epochs: 12,
        stage2_epochs: 0,
        steps_per_epoch: 256,
        hidden: 16,
        seed: 13,
        ..TrainConfig::default()
    };
    let (_, log) = train_two_stage(&streams, &library, &enc, &cfg).unwrap();
    let r_l: Vec<f64> = log.iter().map(|r| r.mean_r_l).collect();
    let ma: Vec<f64> = r_l.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let range = r_l.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - r_l.iter().cloned().fold(f64::INFINITY, f64::min);
    for pair in ma.windows(2) {
        assert!(
            pair[1] >= pair[0] - 0.05 * range.max(1e-9),
            "smoothed r_l regressed: {ma:?}"
        );
    }
    assert!(
        ma.last().unwrap() > ma.first().unwrap(),
        "no improvement in smoothed r_l: {ma:?}"
    );
}

#[test]
fn greedy_act_is_deterministic() {
    let (streams, library, enc) = tiny_setup();
    let cfg = tiny_cfg();
    let (agents, _) = train_two_stage(&streams, &library, &enc, &cfg).unwrap();
    let window = streams[0].window(5).unwrap();
    let errors = streams[0].prev_errors(5);
    let mut rng_a = ChaCha8Rng::seed_from_u64(1);
    let mut rng_b = ChaCha8Rng::seed_from_u64(999);
    let (ha, la) = agents.act(&window, &errors, ActionMode::Greedy, &mut rng_a).unwrap();
    let (hb, lb) = agents.act(&window, &errors, ActionMode::Greedy, &mut rng_b).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(la, lb);
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    // Scaled-down encoder + both heads through sampled actions; the rewards
    // are constants, so the surrogate is differentiable in the parameters.
    use thermens_core::diff::check_gradients;

    let (streams, library, _) = tiny_setup();
    let enc_cfg = EncoderConfig::new(5).with_hidden(8);
    let agents = HrlAgents::init(enc_cfg.clone(), 8, 0.05, 50.0, 55);
    let window = streams[0].window(3).unwrap();
    let errors = streams[0].prev_errors(3);
    let preds = streams[0].preds[3].clone();
    let truth = streams[0].truths[3];
    let _ = library;

    // Freeze actions by sampling once.
    let (b, w_sel, selected) = {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let (h, l) = agents.act(&window, &errors, ActionMode::Sample, &mut rng).unwrap();
        let sel = h.selected_indices();
        let w_sel: Vec<f64> = sel.iter().map(|&i| l.w[i]).collect();
        (h.b, w_sel, sel)
    };
    let names: Vec<String> = agents.params.names().cloned().collect();
    let leaves: Vec<Tensor> = names.iter().map(|n| agents.params.get(n).clone()).collect();

    let r_h = {
        let yhat: f64 = selected
            .iter()
            .zip(&w_sel)
            .map(|(&i, &wi)| wi * preds[i])
            .sum();
        -((yhat - truth) * (yhat - truth)) - 0.005 * b.iter().filter(|&&x| x).count() as f64
    };
    let r_l = 0.37;

    let forward = |tape: &mut Tape, ids: &[thermens_core::diff::NodeId]| {
        let lookup: std::collections::BTreeMap<String, thermens_core::diff::NodeId> =
            names.iter().cloned().zip(ids.iter().copied()).collect();
        let enc = thermens_core::encoder::BoundEncoder::from_ids(&enc_cfg, lookup.clone());
        let s = enc.build_state(tape, &window, &errors)?;

        let high = BoundHeads::from_ids(lookup.clone(), "high.");
        let logits_h = high.forward(tape, s);
        let logp_h = tape.bernoulli_log_pmf(logits_h, &b);

        let b_node = tape.constant(Tensor::vector(b.iter().map(|&on| f64::from(on as u8)).collect()));
        let low_in = tape.concat_vec(s, b_node);
        let low = BoundHeads::from_ids(lookup, "low.");
        let conc = low.concentrations(tape, low_in, &selected, 0.05, 50.0);
        let logp_l = tape.dirichlet_log_pmf(conc, &w_sel);

        let th = tape.scale(logp_h, r_h);
        let tl = tape.scale(logp_l, r_l);
        Ok(tape.add(th, tl))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(57);
    let total: usize = leaves.iter().map(|t| t.len()).sum();
    let mut coords = Vec::new();
    while coords.len() < 30 {
        let mut flat = rng.gen_range(0..total);
        for (li, t) in leaves.iter().enumerate() {
            if flat < t.len() {
                coords.push((li, flat));
                break;
            }
            flat -= t.len();
        }
    }
    let report = check_gradients(&leaves, forward, Some(&coords), 1e-4).unwrap();
    assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
}
