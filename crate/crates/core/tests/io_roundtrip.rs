use std::fs;

use devscore::data::{gen_tabular, texture_bags, TabularGenConfig, TextureGenConfig};
use devscore::io::{
    decode_checkpoint, load_checkpoint, read_bags, read_pgm, save_checkpoint, write_bags,
    write_saliency_pgm, Checkpoint, CheckpointMeta,
};
use devscore::explain::SaliencyMap;
use devscore::{init_params, Error, LossKind, MilConfig, PriorConfig, ReferenceStats};

#[test]
fn tabular_bags_round_trip_bit_exactly() {
    let mut cfg = TabularGenConfig::standard(4);
    cfg.n_normal = 100;
    let bags = gen_tabular(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    write_bags(&path, &bags).unwrap();
    assert_eq!(read_bags(&path).unwrap(), bags);
    assert!(!dir.path().join("train_masks").exists());
}

#[test]
fn image_bags_keep_geometry_and_masks() {
    let cfg = TextureGenConfig { n_normal: 3, n_per_defect: 2, ..Default::default() };
    let bags = texture_bags(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("imgs.jsonl");
    write_bags(&path, &bags).unwrap();
    let back = read_bags(&path).unwrap();
    assert_eq!(back, bags);
    let masks = fs::read_dir(dir.path().join("nested/imgs_masks")).unwrap().count();
    assert_eq!(masks, 6);
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().nth(5).unwrap().contains("\"mask_path\":\"imgs_masks/"));
}

#[test]
fn corrupted_bag_files_report_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = "{\"id\":0,\"y\":0,\"class_id\":null,\"instances\":[[1.0,2.0]]}\n";
    fs::write(&path, format!("{good}{{\"id\":1,\"y\":3,\"class_id\":null,\"instances\":[[1.0,2.0]]}}\n")).unwrap();
    match read_bags(&path).unwrap_err() {
        Error::Parse { offset, message } => {
            assert_eq!(offset, good.len() as u64);
            assert!(message.contains("label"), "{message}");
        }
        e => panic!("{e}"),
    }
    fs::write(&path, &good[..good.len() - 6]).unwrap();
    assert!(matches!(read_bags(&path), Err(Error::Parse { .. })));
    let missing = "{\"id\":0,\"y\":1,\"class_id\":0,\"instances\":[[1.0]],\"mask_path\":\"nope.pgm\"}\n";
    fs::write(&path, missing).unwrap();
    assert!(matches!(read_bags(&path), Err(Error::Io(_))));
}

#[test]
fn checkpoint_file_round_trip() {
    let ckpt = Checkpoint {
        params: init_params(&[8, 64, 32], 5).unwrap(),
        meta: CheckpointMeta {
            seed: 5,
            mil: MilConfig::default(),
            prior: PriorConfig::default(),
            loss: LossKind::focal_default(),
            reference: ReferenceStats { mu_r: -0.0123456789, sigma_r: 1.0000001, l: 5000 },
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpt);

    let bytes = fs::read(&path).unwrap();
    let mut flipped = bytes.clone();
    flipped[0] = b'X';
    assert!(matches!(decode_checkpoint(&flipped), Err(Error::Parse { offset: 0, .. })));
    for cut in (0..bytes.len()).step_by(97) {
        assert!(decode_checkpoint(&bytes[..cut]).is_err());
    }
}

#[test]
fn saliency_pgm_is_min_max_scaled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.pgm");
    let map = SaliencyMap { image_id: 0, width: 3, height: 1, values: vec![2.0, 3.0, 4.0] };
    write_saliency_pgm(&path, &map).unwrap();
    let p = read_pgm(&path).unwrap();
    assert_eq!((p.maxval, p.data), (65535, vec![0, 32768, 65535]));
}
