mod common;

use actinf::inference::{infer_states, Observation};
use actinf::model::{load_spec, save_spec, GenerativeModel};
use actinf::planning::{expected_free_energy, ObjectiveKind, PlanContext};
use actinf::tmaze::build_tmaze_model;
use actinf::Error;
use common::{random_model, random_policy, ModelShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: ModelShape = ModelShape {
    max_states: 6,
    max_outcomes: 6,
    max_actions: 4,
    max_horizon: 4,
    sparsity: 0.2,
};

#[test]
fn random_models_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..100 {
        let model = random_model(&mut rng, SHAPE);
        let path = dir.path().join(format!("m{i}.json"));
        save_spec(&model, &path).unwrap();
        let back = load_spec(&path).unwrap();
        assert_eq!(back, model, "model {i}");
    }
}

#[test]
fn tmaze_round_trips_with_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tmaze.json");
    let model = build_tmaze_model();
    save_spec(&model, &path).unwrap();
    assert_eq!(load_spec(&path).unwrap(), model);
}

#[test]
fn valid_models_are_accepted_downstream() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let model = random_model(&mut rng, SHAPE);
        assert!(model.validate().is_empty());
        let policy = random_policy(&mut rng, &model);
        let obs: Vec<Observation> = (1..=rng.gen_range(1..=model.horizon))
            .map(|t| Observation::new(t, rng.gen_range(0..model.num_outcomes)))
            .collect();
        let q = infer_states(&model, &policy, &obs).unwrap().states;
        if model.horizon > 1 {
            let ctx = PlanContext::new(1, vec![], 1.0).unwrap();
            for kind in ObjectiveKind::ALL {
                let ctx = ctx.clone().with_state_prior(Some(
                    actinf::numerics::normalize(model.prior_states.as_ref().unwrap()).unwrap(),
                ));
                expected_free_energy(&model, &q[0], &policy, &ctx, kind).unwrap();
            }
        }
    }
}

fn write(dir: &std::path::Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("model.json");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn load_errors_are_specific() {
    let dir = tempfile::tempdir().unwrap();
    let missing = load_spec(dir.path().join("nope.json")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));

    let garbage = load_spec(write(dir.path(), "{not json")).unwrap_err();
    assert!(!matches!(garbage, Error::Io { .. }));

    let mut doc = build_tmaze_model().to_json();
    doc["A"][0][1] = serde_json::json!(-0.5);
    let err = GenerativeModel::from_json(&doc).unwrap_err();
    assert!(err.to_string().contains("A[0][1]"), "{err}");
}
