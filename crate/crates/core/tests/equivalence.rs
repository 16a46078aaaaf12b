use critic_smc::critic::{ConstantCritic, CountingCritic, FnCritic};
use critic_smc::env::pursuit::Vec2;
use critic_smc::env::{DiscreteMdp, DiscreteState, Environment, Instrumented, LgssmWorld, PursuitState, PursuitWorld};
use critic_smc::experiments::rollout::{model_free_control, Trajectory};
use critic_smc::smc::{run_critic_smc, run_smc, run_smc_value_heuristic, ResamplingScheme, SmcConfig};

fn goal_seeking(s: &PursuitState, a: &Vec2) -> f64 {
    let dx = s.ego[0] + a[0] - s.goal[0];
    let dy = s.ego[1] + a[1] - s.goal[1];
    -12.0 * (dx * dx + dy * dy).sqrt()
}

#[test]
fn value_heuristic_with_zero_critic_is_plain_smc() {
    let env = PursuitWorld::default();
    for seed in 0..20 {
        let cfg = SmcConfig::new(12).with_history();
        let a = run_smc(&env, &cfg, None, seed).unwrap();
        let b = run_smc_value_heuristic(&env, &ConstantCritic(0.0), &cfg, 16, None, seed).unwrap();
        assert_eq!(a.log_evidence.to_bits(), b.log_evidence.to_bits());
        assert_eq!(a.system.states, b.system.states);
        let (ha, hb) = (a.system.history.unwrap(), b.system.history.unwrap());
        for (sa, sb) in ha.steps.iter().zip(&hb.steps) {
            assert_eq!(sa.parents, sb.parents);
            assert_eq!(sa.actions, sb.actions);
        }
    }
}

#[test]
fn model_free_control_is_critic_smc_with_one_particle() {
    let env = PursuitWorld::default();
    let critic = FnCritic(goal_seeking);
    for seed in 0..30 {
        for k in [1, 7, 64] {
            let cfg = SmcConfig::new(1).with_history().with_scheme(ResamplingScheme::Systematic);
            let run = run_critic_smc(&env, &critic, &cfg, k, None, seed).unwrap();
            let (traj, log_evidence) =
                model_free_control(&env, &critic, k, env.horizon(), ResamplingScheme::Systematic, None, seed).unwrap();
            assert_eq!(Trajectory::from_run(&run, 0), traj, "seed {seed}, k {k}");
            assert!((log_evidence - run.log_evidence).abs() < 1e-9);
        }
    }
}

#[test]
fn single_particle_value_heuristic_telescopes() {
    let mdp = DiscreteMdp::three_state();
    let g = |s: &DiscreteState| [0.4, -1.1, -2.5][s.index] - 0.3 * s.t as f64;
    let critic = FnCritic(move |s: &DiscreteState, _a: &usize| g(s));
    for seed in 0..10 {
        let cfg = SmcConfig::new(1).with_history().with_trace();
        let run = run_smc_value_heuristic(&mdp, &critic, &cfg, 5, None, seed).unwrap();
        let lineage = run.system.history.as_ref().unwrap().lineage(0);
        assert_eq!(lineage.len(), 3);
        let mut h_prev = 0.0;
        for ((_, _, r, s_next), row) in lineage.iter().zip(&run.trace) {
            let expected = r + g(s_next) - h_prev;
            assert!((row.log_normalizer - expected).abs() < 1e-12);
            h_prev = g(s_next);
        }
        let total: f64 = lineage.iter().map(|(_, _, r, _)| r).sum();
        assert!((run.log_evidence - total).abs() < 1e-12);
    }
}

#[test]
fn critic_smc_spends_n_transitions_and_nk_critic_calls_per_step() {
    let env = Instrumented::new(LgssmWorld::default());
    let critic = CountingCritic::new(ConstantCritic(-0.5));
    for (n, k) in [(1, 1), (10, 1), (10, 1000), (3, 17)] {
        env.reset();
        critic.reset();
        let run = run_critic_smc(&env, &critic, &SmcConfig::new(n), k, None, 5).unwrap();
        let steps = run.system.t as u64;
        assert_eq!(steps, 10);
        assert_eq!(env.transition_calls(), steps * n as u64);
        assert_eq!(critic.evaluations(), steps * (n * k) as u64);
    }
}

#[test]
fn call_budget_holds_on_pursuit_until_every_particle_stops() {
    let env = Instrumented::new(PursuitWorld::default());
    let critic = CountingCritic::new(FnCritic(goal_seeking));
    for seed in 0..5 {
        env.reset();
        critic.reset();
        let run = run_critic_smc(&env, &critic, &SmcConfig::new(6), 32, None, seed).unwrap();
        let steps = run.system.t as u64;
        assert!((1..=40).contains(&steps));
        assert_eq!(env.transition_calls(), steps * 6);
        assert_eq!(critic.evaluations(), steps * 6 * 32);
    }
}
