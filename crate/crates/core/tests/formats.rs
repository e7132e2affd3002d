//! Byte-level checks of the files shared with the asset exporter.

use std::sync::Arc;

use intersect_core::nn::{self, LayerSpec, Network};
use intersect_core::obs::FINGERPRINT_LEN;
use intersect_core::reward::EmbeddingAssets;
use intersect_core::{Env, Frame, MetaAction, RewardConfig, RewardModel, ScenarioConfig};

fn le32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Two-dimensional embeddings: texts on the axes and the diagonal, one bank
/// entry per fingerprint.
fn emb1(bank: &[([u8; FINGERPRINT_LEN], [f32; 2])]) -> Vec<u8> {
    let mut b = b"EMB1".to_vec();
    le32(&mut b, 2);
    le32(&mut b, 3);
    for (id, e) in [(0u8, [1.0f32, 0.0]), (1, [0.6, 0.8]), (2, [0.0, 1.0])] {
        b.push(id);
        f32s(&mut b, &e);
    }
    le32(&mut b, bank.len() as u32);
    for (fp, e) in bank {
        b.extend_from_slice(fp);
        f32s(&mut b, e);
    }
    b
}

#[test]
fn hand_written_emb1_drives_the_embedding_model() {
    let mut env = Env::new(ScenarioConfig::default(), RewardConfig::default(), RewardModel::None).unwrap();
    let obs = env.reset(3).unwrap();
    let fp = obs.newest().fingerprint();
    let assets = EmbeddingAssets::from_bytes(&emb1(&[([0; FINGERPRINT_LEN], [1.0, 0.0]), (fp, [0.0, 1.0])])).unwrap();
    assert_eq!(assets.dim(), 2);
    assert_eq!(assets.bank().len(), 2);

    let model = RewardModel::Embedding(Arc::new(assets));
    let out = model.query(&obs).unwrap().unwrap();
    assert_eq!(out.suggested, MetaAction::Faster);
    assert!((out.scores[0] - 0.0).abs() < 1e-12);
    assert!((out.scores[1] - 0.8).abs() < 1e-6);
    assert!((out.scores[2] - 1.0).abs() < 1e-12);
}

#[test]
fn malformed_emb1_is_rejected() {
    let good = emb1(&[([7; FINGERPRINT_LEN], [1.0, 1.0])]);
    assert!(EmbeddingAssets::from_bytes(&good).is_ok());
    let mut bad_magic = good.clone();
    bad_magic[3] = b'2';
    assert!(EmbeddingAssets::from_bytes(&bad_magic).is_err());
    assert!(EmbeddingAssets::from_bytes(&good[..good.len() - 1]).is_err());
    let mut bad_id = good.clone();
    bad_id[12] = 5;
    assert!(EmbeddingAssets::from_bytes(&bad_id).is_err());
    let mut zero_dim = good;
    zero_dim[4..8].copy_from_slice(&0u32.to_le_bytes());
    assert!(EmbeddingAssets::from_bytes(&zero_dim).is_err());
}

#[test]
fn hand_written_nnw1_predicts() {
    // dense(2 -> 2), relu, dense(2 -> 3)
    let mut b = b"NNW1".to_vec();
    le32(&mut b, 3);
    b.push(1);
    le32(&mut b, 2);
    le32(&mut b, 2);
    le32(&mut b, 2);
    f32s(&mut b, &[1.0, 2.0, -1.0, 0.5, 0.0, 0.25]);
    b.push(2);
    le32(&mut b, 0);
    b.push(1);
    le32(&mut b, 2);
    le32(&mut b, 3);
    le32(&mut b, 2);
    f32s(&mut b, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5]);
    let net: Network<f32> = nn::io::from_bytes(&b, &[2]).unwrap();
    assert_eq!(net.specs(), &[LayerSpec::Dense { out_dim: 2 }, LayerSpec::Relu, LayerSpec::Dense { out_dim: 3 }]);
    // hidden = relu([1 + 2·2, −1 + 0.5·2 + 0.25]) = [5, 0.25]
    assert_eq!(net.predict(&[1.0, 2.0]).unwrap(), vec![5.5, 0.75, 5.75]);
    assert_eq!(nn::io::to_bytes(&net), b);
    assert!(nn::io::from_bytes::<f32>(&b[..b.len() - 4], &[2]).is_err());
}

#[test]
fn pgm_frames_use_the_exact_header() {
    let mut env = Env::new(ScenarioConfig::default(), RewardConfig::default(), RewardModel::None).unwrap();
    let frame = env.reset(1).unwrap().newest().clone();
    let mut bytes = Vec::new();
    frame.write_pgm(&mut bytes).unwrap();
    assert!(bytes.starts_with(b"P5 128 64 255\n"));
    assert_eq!(bytes.len(), 14 + 128 * 64);
    assert_eq!(Frame::read_pgm(&bytes[..]).unwrap(), frame);
    let mut other = b"P5\n128 64\n255\n".to_vec();
    other.extend_from_slice(frame.pixels());
    assert_eq!(Frame::read_pgm(&other[..]).unwrap(), frame);
    assert!(Frame::read_pgm(&b"P5 64 128 255\n"[..]).is_err());
}
