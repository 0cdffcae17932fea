use dpan::classifiers::ClassifierKind;
use dpan::dataset::LoadedDataset;
use dpan::pipeline::{self, Seeds, TrainOptions};
use dpan::puf_sim::{self, EnvCondition};

#[test]
fn trained_model_survives_the_container() {
    let g = puf_sim::generate_dataset(2, &[EnvCondition::ideal()], 6, 3, None).unwrap();
    let data = LoadedDataset { manifest: g.manifest, images: g.images, manifest_hash: "t".into() };
    let opts = TrainOptions { search_budget: None, folds: 2, adversaries: 4, ..TrainOptions::default() };
    let model = pipeline::train_dpan(&data, ClassifierKind::Rf, &opts, Seeds::from_master(3)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dpan");
    pipeline::write_model(&model, &path).unwrap();
    let back = pipeline::read_model(&path).unwrap();
    assert_eq!(back, model);
    let img = &data.images[0].image;
    assert_eq!(back.predict(img).unwrap(), model.predict(img).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.push(0);
    assert!(pipeline::decode_model(&bytes).is_err());
    assert!(pipeline::decode_model(&bytes[..bytes.len() / 2]).is_err());
}
