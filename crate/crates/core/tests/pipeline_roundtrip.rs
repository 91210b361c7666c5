use esci_core::data::{synth_generate, DatasetPaths, SynthConfig, Task};
use esci_core::gbdt::GbdtParams;
use esci_core::metrics::{evaluate_run, GroundTruth};
use esci_core::pipeline::{
    output_file_name, read_task_outputs, run_pipeline, PipelineConfig, PipelineData,
};

fn quick_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        seed,
        gbdt: GbdtParams {
            num_rounds: 15,
            max_depth: 3,
            ..GbdtParams::default()
        },
        ..PipelineConfig::default()
    }
}

#[test]
fn dataset_on_disk_matches_in_memory_run() {
    let synth = synth_generate(
        &SynthConfig {
            queries: 90,
            ..SynthConfig::default()
        },
        21,
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    synth.write_dir(tmp.path()).unwrap();

    let loaded = PipelineData::load(&DatasetPaths::in_dir(tmp.path()).existing()).unwrap();
    let direct = PipelineData::from_synth(&synth).unwrap();
    let a = run_pipeline(&loaded, &quick_config(21)).unwrap();
    let b = run_pipeline(&direct, &quick_config(21)).unwrap();
    assert_eq!(a.reports_kv(), b.reports_kv());
}

#[test]
fn written_predictions_rescore_to_reported_metrics() {
    let synth = synth_generate(
        &SynthConfig {
            queries: 90,
            ..SynthConfig::default()
        },
        22,
    )
    .unwrap();
    let data = PipelineData::from_synth(&synth).unwrap();
    let out = run_pipeline(&data, &quick_config(22)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    out.write_dir(tmp.path()).unwrap();

    let truth = GroundTruth::from_examples(data.truth.as_ref().unwrap()).unwrap();
    for task in Task::ALL {
        let path = tmp.path().join(output_file_name(task));
        let preds = read_task_outputs(&path, task).unwrap();
        let rescored = evaluate_run(&preds, &truth, task).unwrap();
        let reported = out.report(task, "test").unwrap();
        assert!((rescored.overall - reported.overall).abs() < 1e-9, "{task}");
        assert_eq!(rescored.count, reported.count);
    }
}

#[test]
fn noiseless_data_with_few_rounds_is_perfect() {
    let synth = synth_generate(
        &SynthConfig {
            queries: 120,
            noise: 0.0,
            ..SynthConfig::default()
        },
        23,
    )
    .unwrap();
    let out = run_pipeline(
        &PipelineData::from_synth(&synth).unwrap(),
        &quick_config(23),
    )
    .unwrap();
    for task in Task::ALL {
        assert_eq!(out.headline(task).unwrap().overall, 1.0, "{task}");
    }
}
