//! A tiny two-task run compared bit for bit against a hand-stepped walk of
//! the training procedure.

mod common;

use ivtlab::trainers::run_sequence;
use sha2::{Digest, Sha256};

fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

fn fingerprint(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[test]
fn trainer_matches_hand_walk_bit_for_bit() {
    let stream = common::micro_stream();
    let method = common::micro_method();
    assert!(stream.tasks.iter().all(|t| t.train.len() == 6));
    let walk = common::hand_walk(&stream, &method);
    let rec = run_sequence(&stream, &method).unwrap();

    assert_eq!(
        bits(rec.checkpoints[0].params.values()),
        bits(walk.after_task1.values())
    );
    assert_eq!(
        bits(rec.checkpoints[1].params.values()),
        bits(walk.after_task2.values())
    );
    let ledger = &rec.checkpoints[1].ledger;
    assert_eq!(
        bits(ledger.per_task()[&2].values()),
        bits(&walk.fisher_task2)
    );
    let t1 = &rec.checkpoints[0].ledger.per_task()[&1];
    assert_eq!(bits(t1.values()), bits(&walk.fisher_task1));

    let epochs: Vec<usize> = rec.ivt_log.iter().map(|f| f.epoch).collect();
    assert_eq!(epochs, vec![1, 2]);
    assert_eq!(walk.after_each_transform.len(), 2);
    assert!(rec.ivt_log.iter().all(|f| f.displacement_norm > 0.0));
}

/// Guards the walk itself against drifting together with the trainer.
#[test]
fn hand_walk_is_pinned() {
    let stream = common::micro_stream();
    let walk = common::hand_walk(&stream, &common::micro_method());
    assert_eq!(
        fingerprint(walk.after_task2.values()),
        "e7710b720fb26a1fe6192702cf5dace845f77cec84955d2fb110db7bb4b215b7"
    );
}
