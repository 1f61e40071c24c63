use detnas_core::evolution::{
    initialize_population, make_children, pattern_report, run_search, select_topk, Controller,
    EvolutionConfig, Fitness, Individual, TabularFitness,
};
use detnas_core::searchspace::{architecture_flops, flops_extremes, random_architecture};
use detnas_core::{Architecture, ChoiceKind, Constraint, Error, SearchSpace, StageSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn three_block_space() -> SearchSpace {
    SearchSpace::new(
        8,
        vec![StageSpec::new(16, 1), StageSpec::new(32, 1), StageSpec::new(64, 1)],
        (32, 32),
    )
    .unwrap()
}

fn scored(values: &[f64]) -> Vec<Individual> {
    values
        .iter()
        .enumerate()
        .map(|(i, &f)| Individual {
            theta: Architecture::new(vec![ChoiceKind::from_index(i % 4).unwrap(), ChoiceKind::from_index(i / 4).unwrap()]),
            flops: 0,
            fitness: Some(f),
        })
        .collect()
}

fn percentile_budget(space: &SearchSpace, q: f64) -> u64 {
    let mut r = rng(77);
    let mut flops: Vec<u64> = (0..10_000)
        .map(|_| architecture_flops(&random_architecture(space, &mut r), space).unwrap())
        .collect();
    flops.sort_unstable();
    flops[(q * flops.len() as f64) as usize]
}

#[test]
fn unbounded_initialization_gives_distinct_members() {
    let space = SearchSpace::small();
    let pop = initialize_population(&space, &EvolutionConfig::default(), &mut rng(1)).unwrap();
    assert_eq!(pop.len(), 50);
    for (i, a) in pop.iter().enumerate() {
        assert!(pop[..i].iter().all(|b| b.theta != a.theta));
        assert!(a.fitness.is_none());
    }
}

#[test]
fn budget_below_the_cheapest_path_fails_before_sampling() {
    let space = SearchSpace::small();
    let ((cheapest_path, cheapest), _) = flops_extremes(&space).unwrap();
    let config = EvolutionConfig {
        constraint: Constraint::new(cheapest - 1),
        ..EvolutionConfig::default()
    };
    let err = initialize_population(&space, &config, &mut rng(1)).unwrap_err();
    assert!(matches!(err, Error::ConstrainedSampling { attempts: 0, .. }));
    let mut fitness = TabularFitness::new(20, 1, 0.0);
    let err = run_search(&space, &config, Controller::Evolution, &mut fitness, &mut rng(1), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::ConstrainedSampling { .. }));
    assert_eq!(fitness.calls(), 0);

    let tight = EvolutionConfig {
        constraint: Constraint::new(cheapest),
        population_size: 1,
        parent_size: 1,
        ..EvolutionConfig::default()
    };
    let mut r = rng(2);
    let pop = initialize_population(&space, &tight, &mut r);
    match pop {
        Ok(p) => assert_eq!(p[0].theta, cheapest_path),
        Err(e) => assert!(matches!(e, Error::ConstrainedSampling { attempts: 1000, .. })),
    }
}

#[test]
fn thirtieth_percentile_budget_is_respected_by_every_member() {
    let space = SearchSpace::small();
    let eta = percentile_budget(&space, 0.3);
    let config = EvolutionConfig {
        constraint: Constraint::new(eta),
        ..EvolutionConfig::default()
    };
    let pop = initialize_population(&space, &config, &mut rng(2)).unwrap();
    assert_eq!(pop.len(), 50);
    assert!(pop.iter().all(|p| p.flops <= eta));
}

#[test]
fn exhausted_resampling_reports_the_attempt_count() {
    let space = three_block_space();
    let config = EvolutionConfig {
        population_size: 65,
        parent_size: 1,
        max_resample_attempts: 500,
        ..EvolutionConfig::default()
    };
    let err = initialize_population(&space, &config, &mut rng(3)).unwrap_err();
    assert!(matches!(err, Error::ConstrainedSampling { attempts: 500, .. }));
}

#[test]
fn topk_follows_order_statistics_and_insertion_ties() {
    let pop = scored(&[0.1, 0.5, 0.3]);
    let top = select_topk(&pop, 2).unwrap();
    assert_eq!(top.iter().map(|i| i.fitness.unwrap()).collect::<Vec<_>>(), vec![0.5, 0.3]);

    let flat = scored(&[0.2; 6]);
    let top = select_topk(&flat, 3).unwrap();
    assert_eq!(top, flat[..3].to_vec());

    let all = select_topk(&pop, 3).unwrap();
    assert_eq!(all.iter().map(|i| i.fitness.unwrap()).collect::<Vec<_>>(), vec![0.5, 0.3, 0.1]);

    assert!(select_topk(&pop, 4).is_err());
    let mut unevaluated = pop.clone();
    unevaluated[1].fitness = None;
    assert!(select_topk(&unevaluated, 1).is_err());
}

fn parents_of(archs: &[Architecture], space: &SearchSpace) -> Vec<Individual> {
    archs
        .iter()
        .map(|a| Individual {
            theta: a.clone(),
            flops: architecture_flops(a, space).unwrap(),
            fitness: Some(0.0),
        })
        .collect()
}

#[test]
fn zero_mutation_copies_parents() {
    let space = SearchSpace::small();
    let mut r = rng(4);
    let archs: Vec<Architecture> = (0..5).map(|_| random_architecture(&space, &mut r)).collect();
    let parents = parents_of(&archs, &space);
    let config = EvolutionConfig {
        mutation_probability: 0.0,
        ..EvolutionConfig::default()
    };
    let children = make_children(&parents, &space, &config, &mut r).unwrap();
    assert_eq!(children.len(), 50);
    for child in &children[..25] {
        assert!(archs.contains(&child.theta));
    }
}

#[test]
fn crossover_of_identical_parents_is_a_fixed_point() {
    let space = SearchSpace::small();
    let a = random_architecture(&space, &mut rng(5));
    let parents = parents_of(&[a.clone(), a.clone()], &space);
    let config = EvolutionConfig {
        population_size: 10,
        parent_size: 2,
        ..EvolutionConfig::default()
    };
    let children = make_children(&parents, &space, &config, &mut rng(6)).unwrap();
    for child in &children[5..] {
        assert_eq!(child.theta, a);
    }
}

#[test]
fn certain_mutation_flips_every_position() {
    let space = SearchSpace::small();
    let a = random_architecture(&space, &mut rng(7));
    let parents = parents_of(std::slice::from_ref(&a), &space);
    let config = EvolutionConfig {
        population_size: 8,
        parent_size: 1,
        mutation_probability: 1.0,
        ..EvolutionConfig::default()
    };
    let children = make_children(&parents, &space, &config, &mut rng(8)).unwrap();
    for child in &children[..4] {
        for (x, y) in child.theta.choices().iter().zip(a.choices()) {
            assert_ne!(x, y);
        }
    }
}

#[test]
fn default_search_logs_one_thousand_rows() {
    let space = SearchSpace::small();
    let eta = percentile_budget(&space, 0.5);
    let config = EvolutionConfig {
        constraint: Constraint::new(eta),
        ..EvolutionConfig::default()
    };
    for controller in [Controller::Evolution, Controller::Random] {
        let mut fitness = TabularFitness::new(20, 9, 0.01);
        let mut streamed = 0;
        let result = run_search(&space, &config, controller, &mut fitness, &mut rng(10), &mut |_| streamed += 1).unwrap();
        assert_eq!(result.log.len(), 1000);
        assert_eq!(streamed, 1000);
        assert_eq!(fitness.calls(), result.computed_evaluations());
        assert!(result.log.iter().all(|r| r.flops <= eta));
        let max = result.log.iter().map(|r| r.fitness).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(result.best_fitness, max);
        assert!(result.log.windows(2).all(|w| w[0].best_so_far <= w[1].best_so_far));
        assert_eq!(result.log.last().unwrap().best_so_far, max);
        assert_eq!(result.best_curve().len(), 20);
        for (i, row) in result.log.iter().enumerate() {
            assert_eq!((row.iteration, row.index), (i / 50, i % 50));
        }
    }
}

#[test]
fn memo_table_never_recomputes_an_architecture() {
    let space = three_block_space();
    let config = EvolutionConfig {
        population_size: 20,
        parent_size: 5,
        iterations: 10,
        ..EvolutionConfig::default()
    };
    let mut fitness = TabularFitness::new(3, 2, 0.0);
    let result = run_search(&space, &config, Controller::Evolution, &mut fitness, &mut rng(11), &mut |_| {}).unwrap();
    let mut distinct: Vec<_> = result.log.iter().map(|r| r.architecture.clone()).collect();
    distinct.sort();
    distinct.dedup();
    assert_eq!(fitness.calls(), distinct.len());
    assert!(result.log.iter().any(|r| r.memo_hit));
}

#[test]
fn identical_seeds_reproduce_the_log() {
    let space = SearchSpace::small();
    let config = EvolutionConfig::default();
    let run = || {
        let mut fitness = TabularFitness::new(20, 3, 0.05);
        run_search(&space, &config, Controller::Evolution, &mut fitness, &mut rng(12), &mut |_| {}).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn evolution_matches_brute_force_on_three_blocks() {
    let space = three_block_space();
    let config = EvolutionConfig {
        iterations: 4,
        ..EvolutionConfig::default()
    };
    let mut hits = 0;
    for seed in 0..20 {
        let table = TabularFitness::new(3, 100 + seed, 0.0);
        let mut best = f64::NEG_INFINITY;
        for code in 0..64 {
            let a = Architecture::new((0..3).map(|i| ChoiceKind::from_index((code >> (2 * i)) & 3).unwrap()).collect());
            best = best.max(table.score(&a).unwrap());
        }
        let mut fitness = table.clone();
        let result = run_search(&space, &config, Controller::Evolution, &mut fitness, &mut rng(seed), &mut |_| {}).unwrap();
        if result.best_fitness == best {
            hits += 1;
        }
    }
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn failing_fitness_propagates() {
    let space = three_block_space();
    let mut failing = |_: &Architecture| -> detnas_core::Result<f64> { Err(Error::Empty("validation set")) };
    let config = EvolutionConfig {
        population_size: 4,
        parent_size: 2,
        ..EvolutionConfig::default()
    };
    let err = run_search(&space, &config, Controller::Random, &mut failing, &mut rng(1), &mut |_| {}).unwrap_err();
    assert_eq!(err, Error::Empty("validation set"));
    assert_eq!(failing.evaluate(&Architecture::uniform(&space, ChoiceKind::Shuffle7x7)).unwrap_err(), Error::Empty("validation set"));
}

#[test]
fn pattern_report_examples() {
    let space = SearchSpace::small();
    let sevens = Architecture::uniform(&space, ChoiceKind::Shuffle7x7);
    let report = pattern_report(&[sevens], &space).unwrap();
    for stage in 0..space.stages.len() {
        assert_eq!(report.frequency(stage, ChoiceKind::Shuffle7x7.index()), 1.0);
    }
    assert_eq!(report.stage_blocks, vec![4, 4, 8, 4]);
    assert!(matches!(pattern_report(&[], &space), Err(Error::Empty(_))));
    let large = Architecture::uniform(&SearchSpace::large(), ChoiceKind::Shuffle3x3);
    assert!(pattern_report(&[large], &space).is_err());

    let mut r = rng(13);
    let archs: Vec<_> = (0..100).map(|_| random_architecture(&space, &mut r)).collect();
    let report = pattern_report(&archs, &space).unwrap();
    for stage in 0..4 {
        for c in 0..4 {
            let f = report.frequency(stage, c);
            assert!((0.15..=0.35).contains(&f), "stage {stage} choice {c}: {f}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn children_stay_valid_and_within_budget(seed in any::<u64>(), p in 0.0f64..=1.0, q in 0.2f64..0.9) {
        let space = SearchSpace::small();
        let eta = percentile_budget(&space, q);
        let config = EvolutionConfig {
            population_size: 12,
            parent_size: 4,
            mutation_probability: p,
            constraint: Constraint::new(eta),
            ..EvolutionConfig::default()
        };
        let mut r = rng(seed);
        let mut pop = initialize_population(&space, &config, &mut r).unwrap();
        for (i, ind) in pop.iter_mut().enumerate() {
            ind.fitness = Some(i as f64);
        }
        let parents = select_topk(&pop, 4).unwrap();
        let children = make_children(&parents, &space, &config, &mut r).unwrap();
        prop_assert_eq!(children.len(), 12);
        for c in children {
            c.theta.check_space(&space).unwrap();
            prop_assert!(c.flops <= eta);
            prop_assert_eq!(c.flops, architecture_flops(&c.theta, &space).unwrap());
        }
    }
}
