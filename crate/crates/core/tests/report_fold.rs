use rqopt::harness::run_scenario;
use rqopt::policies::PolicyKind;
use rqopt::quality::{default_table_samples, rmse, train_tree_predictor, QualityPredictor};
use rqopt::report::{read_trace, serving_state_report, write_trace};
use rqopt::scenario::{ScenarioConfig, PRESET_NAMES};

#[test]
fn report_is_a_fold_over_the_trace_file() {
    for name in PRESET_NAMES {
        let s = ScenarioConfig::preset(name).unwrap();
        for kind in PolicyKind::ALL {
            let run = run_scenario(&s, kind).unwrap();
            let mut csv = Vec::new();
            write_trace(&run.output.trace, &mut csv).unwrap();
            let trace = read_trace(&csv[..]).unwrap();
            assert_eq!(trace, run.output.trace);
            let again = serving_state_report(&trace, &QualityPredictor::default(), 120.0, s.report_window_s).unwrap();
            assert_eq!(again, run.report, "{name} {kind}");
        }
    }
}

#[test]
fn trained_tree_reproduces_table() {
    let samples = default_table_samples("lab");
    for depth in 1..=8 {
        let model = train_tree_predictor(&samples, depth).unwrap();
        let rqopt::quality::PredictorModel::TrainedTree { tree, .. } = model.model() else {
            panic!("expected a tree");
        };
        assert!(tree.depth() <= depth);
        if depth >= 6 {
            assert!(rmse(&model, &samples).unwrap() < 1e-9);
        }
    }
}
