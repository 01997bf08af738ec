use std::fs;

use skillmix::harness::{
    export_plots, preset, preset_names, replay, run_experiment, DatasetSource, ExperimentSpec, GraphSource,
    InitialLosses, MatrixSource, TrainerSpec, CURRICULUM_FRAC_PREVIOUS,
};
use skillmix::synthgen::LegoSpec;
use skillmix::{CurriculumDirection, RunLog, SelectorKind, SkillItMode};

fn lego_spec(selectors: Vec<SelectorKind>) -> ExperimentSpec {
    let p = preset("lego-pretrain").unwrap();
    ExperimentSpec {
        name: Some("lego".into()),
        seed: 8,
        dataset: DatasetSource::Lego {
            spec: LegoSpec::chain(3, 1),
            per_skill: 400,
        },
        eval_skills: None,
        setting: None,
        graph: GraphSource::LearnApproximate {
            config: Default::default(),
        },
        trainer: TrainerSpec::Sim {
            a_true: MatrixSource::Inline(vec![
                vec![0.5, 0.3, 0.1],
                vec![0.0, 0.4, 0.3],
                vec![0.0, 0.0, 0.5],
            ]),
            l0: InitialLosses::PerSkill(vec![0.7, 0.8, 0.9]),
            noise_sigma: 0.0,
            step_scale: 0.02,
            use_realized_counts: true,
            rescale: false,
        },
        selectors: selectors.into_iter().map(|s| p.run_config(s, 600, 2)).collect(),
        output_dir: None,
    }
}

fn all_selectors() -> Vec<SelectorKind> {
    let curriculum = |direction| SelectorKind::Curriculum {
        direction,
        epochs: 3,
        frac_previous: CURRICULUM_FRAC_PREVIOUS,
    };
    vec![
        SelectorKind::Random,
        SelectorKind::Stratified,
        SelectorKind::SkillStratified,
        curriculum(CurriculumDirection::Curriculum),
        curriculum(CurriculumDirection::Anticurriculum),
        SelectorKind::SkillIt {
            mode: SkillItMode::Full,
        },
        SelectorKind::SkillIt {
            mode: SkillItMode::NoGraph,
        },
        SelectorKind::SkillIt {
            mode: SkillItMode::Static,
        },
    ]
}

#[test]
fn every_selector_runs_on_finite_pools() {
    let out = run_experiment(&lego_spec(all_selectors())).unwrap();
    assert_eq!(out.runs.len(), 8);
    for r in &out.runs {
        assert!(r.error.is_none(), "{}: {:?}", r.label, r.error);
        assert_eq!(r.log.rounds.len(), 6);
        let used: usize = r.log.rounds.iter().map(|rec| rec.counts().iter().sum::<usize>()).sum();
        assert_eq!(used, 600);
        let first = r.log.rounds[0].before();
        let last = r.log.final_losses().unwrap();
        assert!(last.iter().zip(&first).all(|(l, f)| l <= f));
    }
    assert_eq!(out.summary.lines().count(), 9);
}

#[test]
fn outputs_land_on_disk_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = lego_spec(vec![
        SelectorKind::Stratified,
        SelectorKind::SkillIt {
            mode: SkillItMode::Full,
        },
    ]);
    spec.output_dir = Some(dir.path().join("out"));
    let out = run_experiment(&spec).unwrap();
    let base = dir.path().join("out");
    for f in ["experiment.json", "graph.csv", "probes.jsonl", "summary.csv", "runs/skillit.jsonl"] {
        assert!(base.join(f).exists(), "{f}");
    }
    let text = fs::read(base.join("runs/skillit.jsonl")).unwrap();
    let log = RunLog::read_jsonl(out.runs[1].log.config.clone(), &text[..]).unwrap();
    assert_eq!(log, out.runs[1].log);
    let again = replay(&spec, &log).unwrap();
    assert_eq!(again, log);

    let logs: Vec<RunLog> = out.runs.iter().map(|r| r.log.clone()).collect();
    let files = export_plots(&logs, &dir.path().join("plots")).unwrap();
    assert_eq!(files.series.len(), 2 * 3);
    assert_eq!(files.loss_charts.len(), 3);
    assert_eq!(files.mixture_charts.len(), 2);
}

#[test]
fn fine_tune_with_an_eval_subset() {
    let mut spec = lego_spec(vec![
        SelectorKind::SkillStratified,
        SelectorKind::SkillIt {
            mode: SkillItMode::Full,
        },
    ]);
    spec.eval_skills = Some(vec!["lego3".into()]);
    spec.trainer = TrainerSpec::Sim {
        a_true: MatrixSource::Inline(vec![vec![0.0], vec![0.3], vec![0.5]]),
        l0: InitialLosses::Uniform(1.0),
        noise_sigma: 0.0,
        step_scale: 0.02,
        use_realized_counts: false,
        rescale: false,
    };
    let out = run_experiment(&spec).unwrap();
    assert_eq!(out.graph.m(), 1);
    assert_eq!(out.graph.column(0), vec![0.0, 0.5, 1.0]);
    let strat = &out.runs[0].log.rounds[0].mixture;
    assert_eq!(strat.as_slice(), &[0.0, 0.5, 0.5]);
    assert!(out.runs[0].log.rounds.iter().all(|rec| rec.counts()[0] == 0));
    // no edge into the target: the least weight in every round
    for rec in &out.runs[1].log.rounds {
        assert_eq!(rec.mixture.as_slice().iter().cloned().fold(f64::INFINITY, f64::min), rec.mixture[0]);
    }
    assert!(out.runs.iter().all(|r| r.error.is_none()));
}

#[test]
fn curriculum_rejects_fine_tune() {
    let mut spec = lego_spec(vec![SelectorKind::Curriculum {
        direction: CurriculumDirection::Curriculum,
        epochs: 2,
        frac_previous: 0.0,
    }]);
    spec.eval_skills = Some(vec!["lego3".into()]);
    spec.trainer = TrainerSpec::Sim {
        a_true: MatrixSource::Inline(vec![vec![0.0], vec![0.3], vec![0.5]]),
        l0: InitialLosses::Uniform(1.0),
        noise_sigma: 0.0,
        step_scale: 0.02,
        use_realized_counts: false,
        rescale: false,
    };
    let out = run_experiment(&spec).unwrap();
    assert!(out.runs[0].error.as_deref().unwrap().contains("continual"));
}

#[test]
fn presets_are_well_formed() {
    for name in preset_names() {
        let p = preset(name).unwrap();
        assert!(p.window <= p.rounds, "{name}");
        p.run_config(SelectorKind::Stratified, 100 * p.rounds, 0).validate().unwrap();
    }
    assert!(preset("nope").is_err());
}
