use geoffpac::envs::{build_random_mdp, build_two_circle, two_circle, RandomMdpSpec, TwoCircleSpec};
use geoffpac::experiment::train_seeds;
use geoffpac::{train, AgentConfig, Algorithm, CriticMode, Mdp};

fn two_circle_mdp() -> Mdp {
    build_two_circle(&TwoCircleSpec::default()).unwrap()
}

fn finals(mdp: &Mdp, cfg: &AgentConfig) -> Vec<f64> {
    train_seeds(mdp, cfg, &[0, 1, 2, 3, 4], None)
        .unwrap()
        .iter()
        .map(|r| r.final_row().pi_probe)
        .collect()
}

fn base() -> AgentConfig {
    AgentConfig {
        probe: (two_circle::A, two_circle::OUTER),
        ..AgentConfig::default()
    }
}

#[test]
fn off_pac_settles_on_inner_circle() {
    let mdp = two_circle_mdp();
    let p = finals(
        &mdp,
        &AgentConfig {
            algorithm: Algorithm::OffPac,
            ..base()
        },
    );
    assert!(p.iter().all(|&x| x < 0.1), "{p:?}");
}

#[test]
fn oracle_critic_reproduces_the_split() {
    let mdp = two_circle_mdp();
    let oracle = AgentConfig {
        critic_mode: CriticMode::OracleQ,
        ..base()
    };
    let ace = finals(
        &mdp,
        &AgentConfig {
            algorithm: Algorithm::Ace,
            ..oracle.clone()
        },
    );
    let geoff = finals(
        &mdp,
        &AgentConfig {
            algorithm: Algorithm::GeoffPac,
            ..oracle
        },
    );
    assert!(ace.iter().all(|&x| x < 0.1), "{ace:?}");
    assert!(geoff.iter().all(|&x| x > 0.9), "{geoff:?}");
}

#[test]
fn geoff_pac_improves_counterfactual_objective() {
    for seed in 0..3 {
        let mdp: Mdp = build_random_mdp(&RandomMdpSpec {
            n_states: 5,
            n_actions: 3,
            seed: 300 + seed,
            discount: 0.9,
        })
        .unwrap();
        let run = train(
            &mdp,
            &AgentConfig {
                gamma_hat: 0.5,
                seed,
                total_steps: 30_000,
                ..AgentConfig::default()
            },
        )
        .unwrap();
        let first = run.rows.first().unwrap().j_gamma;
        let last = run.final_row().j_gamma;
        assert!(last > first, "instance {seed}: J_gamma {first} -> {last}");
    }
}

#[test]
fn metric_rows_follow_the_schedule() {
    let mdp = two_circle_mdp();
    let run = train(
        &mdp,
        &AgentConfig {
            total_steps: 2_500,
            metric_every: 1_000,
            warmup_steps: 100,
            ..base()
        },
    )
    .unwrap();
    let steps: Vec<u64> = run.rows.iter().map(|r| r.step).collect();
    assert_eq!(steps, [0, 1_000, 2_000, 2_500]);
    assert!(run.rows.iter().all(|r| (0.0..=1.0).contains(&r.pi_probe)));
    assert_eq!(run.rows[0].pi_probe, 0.5);
}

#[test]
fn unclipped_runs_stay_finite() {
    let mdp = two_circle_mdp();
    let run = train(
        &mdp,
        &AgentConfig {
            rho_clip: None,
            c_clip: None,
            total_steps: 20_000,
            ..base()
        },
    )
    .unwrap();
    assert!(run.final_theta.iter().all(|x| x.is_finite()));
}
