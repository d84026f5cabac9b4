use ipr_core::exec::{with_threads, Execution};
use ipr_core::explain::ExplainerId;
use ipr_core::harness::{run_ipr, run_ipr_with, IprConfig, RunOptions};
use ipr_core::nn::Model;
use ipr_core::zoo::{build_architecture, generate_synthetic_dataset, LabeledDataset};
use ipr_core::{Error, Result};

fn setup(arch: &str) -> (Model, LabeledDataset) {
    let model = build_architecture(arch, 16, 2, 3)
        .unwrap()
        .with_training_record(3, Some(1.0));
    (model, generate_synthetic_dataset(4, 16, 2, 5).unwrap())
}

fn quick_config() -> IprConfig {
    IprConfig {
        explainers: vec![
            ExplainerId::Gradients,
            ExplainerId::GuidedGradCAM,
            ExplainerId::IntegratedGradients,
            ExplainerId::LIME,
        ],
        bootstrap_resamples: 200,
        ..IprConfig::default()
    }
}

fn identity(m: &Model, _: &str, _: u64) -> Result<Model> {
    Ok(m.clone())
}

#[test]
fn identity_randomization_gives_zero_everywhere() {
    let (model, data) = setup("toy-res-4");
    let config = IprConfig {
        explainers: ExplainerId::DEFAULT_SET.to_vec(),
        ..quick_config()
    };
    let run = run_ipr_with(
        &model,
        &data,
        &config,
        &RunOptions {
            randomizer: &identity,
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert!(run.records().all(|r| r.ssim == 1.0 && r.layer_sensitivity == 0.0 && !r.sensitive_to_layer));
    assert!(run.images.iter().all(|i| i.score == 0.0 && !i.sensitive_to_image));
    for d in &run.datasets {
        assert_eq!(d.score, 0.0, "{}", d.explainer);
        assert!(!d.sensitive_to_dataset);
        assert_eq!(d.ci90, (0.0, 0.0));
    }
}

#[test]
fn record_algebra_holds() {
    let (model, data) = setup("toy-seq-3");
    let run = run_ipr(&model, &data, &quick_config()).unwrap();
    assert_eq!(run.layers, vec!["conv1", "conv2", "conv3", "fc"]);
    for r in run.records() {
        assert!((0.0..=1.0).contains(&r.ssim));
        assert_eq!(r.ssim, r.ssim_raw.clamp(0.0, 1.0));
        assert!((r.layer_sensitivity + r.ssim - 1.0).abs() <= 1e-15);
        assert_eq!(r.sensitive_to_layer, r.ssim <= 0.99);
    }
    for i in &run.images {
        assert_eq!(i.per_layer.len(), 4);
        let mean = i.per_layer.iter().map(|r| r.layer_sensitivity).sum::<f64>() / 4.0;
        assert!((i.score - mean).abs() < 1e-15);
        assert_eq!(i.sensitive_to_image, i.per_layer.iter().all(|r| r.sensitive_to_layer));
    }
    for d in &run.datasets {
        assert!((0.0..=1.0).contains(&d.score));
        assert!(d.ci90.0 <= d.score && d.score <= d.ci90.1);
        assert_eq!(d.num_images, 4);
        assert_eq!(d.num_layers, 4);
    }
    // class pinned to the original prediction
    for (s, (id, class)) in data.images.iter().zip(&run.classes) {
        assert_eq!(&s.image_id, id);
        assert_eq!(*class, model.forward(&s.tensor).unwrap().argmax());
    }
}

#[test]
fn restricting_scope_keeps_remaining_scores() {
    let (model, data) = setup("toy-seq-5");
    let full = run_ipr(&model, &data, &quick_config()).unwrap();
    let subset = IprConfig {
        critical_layers: Some(vec!["fc".into(), "conv2".into()]),
        ..quick_config()
    };
    let part = run_ipr(&model, &data, &subset).unwrap();
    assert_eq!(part.layers, vec!["conv2", "fc"]);
    for r in part.records() {
        let same = full
            .records()
            .find(|f| f.image_id == r.image_id && f.layer_id == r.layer_id && f.explainer == r.explainer)
            .unwrap();
        assert_eq!(same, r);
    }
}

#[test]
fn schedule_does_not_change_results() {
    let (model, data) = setup("toy-res-4");
    let config = quick_config();
    let seq = run_ipr_with(
        &model,
        &data,
        &config,
        &RunOptions {
            execution: Execution::Sequential,
            ..RunOptions::default()
        },
    )
    .unwrap();
    let one = with_threads(1, || run_ipr(&model, &data, &config).unwrap());
    let many = with_threads(4, || run_ipr(&model, &data, &config).unwrap());
    assert_eq!(seq, one);
    assert_eq!(seq, many);
}

#[test]
fn preconditions() {
    let (model, data) = setup("toy-seq-3");
    let empty_scope = IprConfig {
        critical_layers: Some(vec![]),
        ..quick_config()
    };
    assert!(run_ipr(&model, &data, &empty_scope).unwrap_err().is_validation());
    let unknown = IprConfig {
        critical_layers: Some(vec!["relu1".into()]),
        ..quick_config()
    };
    assert!(matches!(run_ipr(&model, &data, &unknown), Err(Error::UnknownLayer(_))));
    let none = IprConfig {
        explainers: vec![],
        ..quick_config()
    };
    assert!(run_ipr(&model, &data, &none).is_err());
    let untrained = build_architecture("toy-seq-3", 16, 2, 3).unwrap();
    assert!(run_ipr(&untrained, &data, &quick_config()).is_err());
    let lenient = IprConfig {
        require_trained: false,
        ..quick_config()
    };
    assert!(run_ipr(&untrained, &data, &lenient).is_ok());
}

#[test]
fn explainer_failure_carries_context() {
    let (model, data) = setup("toy-seq-3");
    // a randomizer that fails only for conv2
    let broken = |m: &Model, layer: &str, seed: u64| -> Result<Model> {
        if layer == "conv2" {
            Err(Error::InvalidArgument("boom".into()))
        } else {
            ipr_core::zoo::randomize_layer(m, layer, seed)
        }
    };
    let err = run_ipr_with(
        &model,
        &data,
        &quick_config(),
        &RunOptions {
            randomizer: &broken,
            ..RunOptions::default()
        },
    )
    .unwrap_err();
    assert!(err.to_string().contains("boom"));

    // an out-of-range LIME setting surfaces with explainer and image context
    let tiny = generate_synthetic_dataset(2, 8, 2, 1).unwrap();
    let small = build_architecture("toy-seq-3", 8, 2, 1).unwrap().with_training_record(1, Some(1.0));
    let config = IprConfig {
        explainers: vec![ExplainerId::LIME],
        explainer: ipr_core::explain::ExplainerConfig {
            lime_segments: 81,
            lime_samples: 100,
            ..Default::default()
        },
        ssim: ipr_core::metrics::SsimParams {
            window_size: 7,
            ..Default::default()
        },
        ..quick_config()
    };
    match run_ipr(&small, &tiny, &config).unwrap_err() {
        Error::Explainer {
            explainer,
            image_id,
            model_tag,
            ..
        } => {
            assert_eq!(explainer, "LIME");
            assert_eq!(image_id, "img0000");
            assert_eq!(model_tag, "original");
        }
        other => panic!("unexpected {other}"),
    }
}
