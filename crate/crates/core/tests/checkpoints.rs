use edgekg_core::checkpoint::{self, Encoding, HEADER_BYTES};
use edgekg_core::prune::{self, build_mask, MaskScope, SensitivityMap};
use edgekg_core::{EmbeddingModel, Error, ModelKind, NormKind, Table};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pruned_model(kind: ModelKind, ratio: f64, seed: u64) -> (EmbeddingModel, edgekg_core::prune::PruneMask) {
    let mut model = EmbeddingModel::<f32>::init(kind, 5, 23, 4, seed).unwrap().with_norm(NormKind::L2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = SensitivityMap {
        tables: model.tables().map(|t| (t, (0..model.table(t).len()).map(|_| rng.gen::<f64>()).collect())).collect(),
    };
    let mask = build_mask(&map, ratio, MaskScope::Global).unwrap();
    prune::apply_mask(&mut model, &mask).unwrap();
    (model, mask)
}

#[test]
fn every_kind_round_trips_in_every_encoding() {
    for kind in ModelKind::ALL {
        for ratio in [0.0, 0.3, 0.9] {
            let (model, mask) = pruned_model(kind, ratio, 4);
            for enc in [Encoding::Dense, Encoding::Masked, Encoding::Sparse] {
                let m = (enc != Encoding::Dense).then_some(&mask);
                let bytes = checkpoint::encode(&model, m, enc).unwrap();
                let back = checkpoint::decode(&bytes).unwrap();
                assert_eq!(back.model, model, "{kind} {enc:?}");
                assert_eq!(back.mask.as_ref(), m);
                assert_eq!(checkpoint::encode(&back.model, back.mask.as_ref(), enc).unwrap(), bytes);
            }
        }
    }
}

#[test]
fn dense_size_is_header_plus_four_bytes_per_parameter() {
    let m = EmbeddingModel::<f32>::init(ModelKind::TransR, 3, 10, 2, 0).unwrap();
    let bytes = checkpoint::encode(&m, None, Encoding::Dense).unwrap();
    assert_eq!(bytes.len(), HEADER_BYTES + 4 * m.parameter_count());
    assert_eq!(&bytes[..8], b"KGEMBED\0");
}

#[test]
fn truncations_and_bit_flips_never_panic() {
    let (model, mask) = pruned_model(ModelKind::RotatE, 0.5, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for enc in [Encoding::Dense, Encoding::Masked, Encoding::Sparse] {
        let bytes = checkpoint::encode(&model, (enc != Encoding::Dense).then_some(&mask), enc).unwrap();
        for cut in 0..bytes.len() {
            assert!(checkpoint::decode(&bytes[..cut]).is_err());
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(checkpoint::decode(&longer).is_err());
        for _ in 0..2000 {
            let mut b = bytes.clone();
            let i = rng.gen_range(0..b.len());
            b[i] ^= 1 << rng.gen_range(0..8);
            let _ = checkpoint::decode(&b);
        }
    }
}

#[test]
fn bad_headers_are_format_errors() {
    let m = EmbeddingModel::<f32>::init(ModelKind::DistMult, 2, 3, 1, 0).unwrap();
    let good = checkpoint::encode(&m, None, Encoding::Dense).unwrap();
    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(checkpoint::decode(&magic), Err(Error::Format(_))));
    let mut version = good.clone();
    version[8] = 99;
    assert!(checkpoint::decode(&version).is_err());
    let mut kind = good.clone();
    kind[12] = 200;
    assert!(checkpoint::decode(&kind).is_err());
    // a header claiming a huge model must fail before allocating
    let mut huge = good;
    huge[24..32].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(checkpoint::decode(&huge).is_err());
}

#[test]
fn masked_files_with_nonzero_pruned_values_are_rejected() {
    let (model, mask) = pruned_model(ModelKind::TransE, 0.5, 3);
    let mut bytes = checkpoint::encode(&model, Some(&mask), Encoding::Masked).unwrap();
    let first = mask.pruned_positions(Table::Entity).next().unwrap();
    // dense values follow the header, entity table first
    let pos = HEADER_BYTES + 4 * first;
    bytes[pos..pos + 4].copy_from_slice(&1.5f32.to_le_bytes());
    assert!(checkpoint::decode(&bytes).is_err());
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (model, mask) = pruned_model(ModelKind::PairRE, 0.6, 7);
    let path = dir.path().join("m.ckpt");
    let n = checkpoint::save(&path, &model, Some(&mask), Encoding::Sparse).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, n);
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.model, model);
    assert!(matches!(checkpoint::load(dir.path().join("missing")), Err(Error::Io { .. })));
}
