use skillmix::graphlearn::{
    learn_graph_approximate, learn_graph_bruteforce, CompareMode, GraphLearnConfig, WeightScheme,
};
use skillmix::trainer::{PlantedGraph, SimDynamics, SimTrainer};
use skillmix::{numbered_skills, Setting, SkillId};

fn factory(a: Vec<Vec<f64>>, l0: Vec<f64>) -> impl Fn(u64) -> skillmix::Result<SimTrainer> + Sync {
    let d = SimDynamics::new(a, l0, 0.0, 0).unwrap().with_step_scale(0.05).unwrap();
    move |seed| {
        let mut d = d.clone();
        d.seed = seed;
        d.trainer()
    }
}

fn cfg() -> GraphLearnConfig {
    GraphLearnConfig {
        steps: 400,
        approx_steps: 50,
        ..GraphLearnConfig::default()
    }
}

fn off_diagonal_support(m: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut s = Vec::new();
    for (i, row) in m.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            if i != j && *w > 0.0 {
                s.push((i, j));
            }
        }
    }
    s
}

#[test]
fn planted_supports_are_recovered() {
    let skills = numbered_skills("s", 5);
    for seed in 0..20 {
        let a = PlantedGraph::binary(5, 0.3, seed).matrix();
        let f = factory(a.clone(), vec![1.0; 5]);
        let g = learn_graph_bruteforce(&skills, &skills, &f, &cfg()).unwrap().into_graph().unwrap();
        assert_eq!(off_diagonal_support(g.rows()), off_diagonal_support(&a), "seed {seed}");
        for (i, row) in g.rows().iter().enumerate() {
            for (j, w) in row.iter().enumerate() {
                let want = if i == j { 1.0 } else if a[i][j] > 0.0 { 0.5 } else { 0.0 };
                assert_eq!(*w, want);
            }
        }
    }
}

#[test]
fn raw_delta_weights_follow_the_planted_edges() {
    let skills = numbered_skills("s", 4);
    let a = PlantedGraph::binary(4, 0.5, 3).matrix();
    let f = factory(a.clone(), vec![1.0; 4]);
    let c = GraphLearnConfig {
        weight_scheme: WeightScheme::RawDelta,
        compare_mode: CompareMode::StepsToThreshold,
        ..cfg()
    };
    let g = learn_graph_bruteforce(&skills, &skills, &f, &c).unwrap().into_graph().unwrap();
    assert_eq!(off_diagonal_support(g.rows()), off_diagonal_support(&a));
    for (i, row) in g.rows().iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            assert!(*w <= 1.0);
            assert_eq!(*w > 0.0, i == j || a[i][j] > 0.0);
        }
    }
}

#[test]
fn threads_and_execution_order_do_not_change_the_result() {
    let skills = numbered_skills("s", 4);
    let a = PlantedGraph::binary(4, 0.5, 9).matrix();
    let f = factory(a, vec![1.0; 4]);
    let base = learn_graph_bruteforce(&skills, &skills, &f, &cfg()).unwrap();
    let shuffled = GraphLearnConfig {
        parallelism: 4,
        order_seed: Some(17),
        ..cfg()
    };
    let other = learn_graph_bruteforce(&skills, &skills, &f, &shuffled).unwrap();
    assert_eq!(base.graph, other.graph);
    assert_eq!(base.probes, other.probes);
    let mut log = Vec::new();
    base.write_probe_log(&mut log).unwrap();
    assert_eq!(log.iter().filter(|b| **b == b'\n').count(), 4 + 16);
}

#[test]
fn fine_tune_subset_graph() {
    let train = numbered_skills("s", 4);
    let eval = vec![SkillId::new(0, "s4").unwrap()];
    // skills 1 and 2 feed skill 4
    let a = vec![vec![0.5], vec![0.5], vec![0.0], vec![1.0]];
    let f = factory(a, vec![1.0]);
    let g = learn_graph_bruteforce(&train, &eval, &f, &cfg()).unwrap().into_graph().unwrap();
    assert_eq!(g.setting(), Setting::FineTune);
    assert_eq!(g.column(0), vec![0.5, 0.5, 0.0, 1.0]);
}

#[test]
fn approximate_support_stays_inside_the_truth() {
    let skills = numbered_skills("s", 5);
    for seed in 0..10 {
        let a = PlantedGraph::binary(5, 0.4, 50 + seed).matrix();
        let f = factory(a.clone(), vec![1.0; 5]);
        let g = learn_graph_approximate(&skills, &skills, &f, &cfg()).unwrap().into_graph().unwrap();
        let truth = off_diagonal_support(&a);
        assert!(off_diagonal_support(g.rows()).iter().all(|e| truth.contains(e)));
    }
}


#[test]
fn loss_vector_must_cover_the_eval_skills() {
    let train = numbered_skills("s", 3);
    let eval = vec![SkillId::new(0, "s3").unwrap()];
    let f = factory(vec![vec![1.0; 3]; 3], vec![1.0; 3]);
    assert!(learn_graph_bruteforce(&train, &eval, &f, &cfg()).is_err());
}
