use geoffpac::chain::{stationary_distribution, transition_matrix};
use geoffpac::envs::{
    build_random_mdp, build_two_circle, sample_transition, seeded_rng, RandomMdpSpec, Sampler, TwoCircleSpec,
};
use geoffpac::stats::BatchMeans;
use geoffpac::{Mdp, Policy};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const DRAWS: usize = 100_000;
const ALPHA: f64 = 1e-3;

/// Pearson statistic against `probs`, ignoring zero-probability cells
/// (which must then be empty). Returns `(statistic, degrees of freedom)`.
fn pearson(counts: &[usize], probs: &[f64]) -> (f64, usize) {
    let n: usize = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&k, &p) in counts.iter().zip(probs) {
        if p <= 1e-12 {
            assert_eq!(k, 0, "draw from a zero-probability cell");
            continue;
        }
        let e = n as f64 * p;
        stat += (k as f64 - e).powi(2) / e;
        cells += 1;
    }
    (stat, cells.saturating_sub(1))
}

fn assert_fits(counts: &[usize], probs: &[f64], what: &str) {
    let (stat, dof) = pearson(counts, probs);
    if dof == 0 {
        return;
    }
    let critical = ChiSquared::new(dof as f64).unwrap().inverse_cdf(1.0 - ALPHA);
    assert!(
        stat < critical,
        "{what}: chi-square {stat:.2} >= {critical:.2} ({dof} dof)"
    );
}

/// Draws `DRAWS` transitions from each state and checks both the action
/// frequencies and, per action, the next-state frequencies.
fn check_sampler(mdp: &Mdp, pi: &Policy, seed: u64) {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut rng = seeded_rng(seed, 0);
    for s in 0..ns {
        let mut actions = vec![0; na];
        let mut next = vec![vec![0; ns]; na];
        for _ in 0..DRAWS {
            let tr = sample_transition(mdp, pi, s, &mut rng);
            assert_eq!(tr.state, s);
            assert_eq!(tr.reward, mdp.reward(s, tr.action));
            assert_eq!(tr.discount, mdp.gamma(s, tr.action, tr.next_state));
            actions[tr.action] += 1;
            next[tr.action][tr.next_state] += 1;
        }
        assert_fits(&actions, &pi.probs(s), &format!("actions in state {s}"));
        for a in 0..na {
            if actions[a] > 0 {
                assert_fits(&next[a], mdp.next_dist(s, a), &format!("next state after ({s}, {a})"));
            }
        }
    }
}

#[test]
fn two_circle_sampler_matches_kernel() {
    let mdp: Mdp = build_two_circle(&TwoCircleSpec::default()).unwrap();
    let pi = Policy::from_theta(&mdp, vec![0.4, -0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    check_sampler(&mdp, &pi, 17);
}

#[test]
fn random_mdp_sampler_matches_kernel() {
    let mdp: Mdp = build_random_mdp(&RandomMdpSpec {
        n_states: 4,
        n_actions: 3,
        seed: 5,
        discount: 0.9,
    })
    .unwrap();
    let theta = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let pi = Policy::from_theta(&mdp, theta).unwrap();
    check_sampler(&mdp, &pi, 23);
}

#[test]
fn masked_actions_are_never_sampled() {
    let mdp: Mdp = build_two_circle(&TwoCircleSpec::default()).unwrap();
    let pi = Policy::uniform(&mdp);
    let mut sampler = Sampler::new(3, 0, 0);
    for _ in 0..10_000 {
        let tr = sampler.step(&mdp, &pi);
        assert!(mdp.is_available(tr.state, tr.action));
    }
}

#[test]
fn visitation_matches_stationary_distribution() {
    let mdp: Mdp = build_random_mdp(&RandomMdpSpec {
        n_states: 5,
        n_actions: 2,
        seed: 9,
        discount: 0.9,
    })
    .unwrap();
    let theta = (0..10).map(|i| (i as f64 * 0.71).cos()).collect();
    let mu = Policy::from_theta(&mdp, theta).unwrap();
    let d = stationary_distribution(&transition_matrix(&mdp, &mu)).unwrap();
    let steps = 1_000_000u64;
    let mut visits = BatchMeans::new(mdp.n_states(), steps, 500);
    let mut sampler = Sampler::new(4, 0, 0);
    for _ in 0..1_000 {
        sampler.step(&mdp, &mu);
    }
    for _ in 0..steps {
        let s = sampler.state();
        sampler.step(&mdp, &mu);
        visits.push_sparse([(s, 1.0)]);
    }
    let est = visits.finish();
    let z = est.max_z_score(&d);
    assert!(z < 3.0, "visitation z = {z:.2}, mean {:?} vs d {:?}", est.mean, d);
}

#[test]
fn same_seed_same_stream() {
    let mdp: Mdp = build_two_circle(&TwoCircleSpec::default()).unwrap();
    let pi = Policy::uniform(&mdp);
    let run = |seed, stream| {
        let mut s = Sampler::new(seed, stream, 0);
        (0..200).map(|_| s.step(&mdp, &pi).action).collect::<Vec<_>>()
    };
    assert_eq!(run(1, 0), run(1, 0));
    assert_ne!(run(1, 0), run(1, 1));
    assert_ne!(run(1, 0), run(2, 0));
}
