//! Checks shared by the focused test files and the acceptance harness. Each
//! returns the list of failures it found; empty means pass.

use std::collections::HashSet;
use std::sync::Arc;

use rand::distributions::{Alphanumeric, DistString};
use rand::{Rng, RngCore};

use secnosql::crypto::{
    anonymize_name, derive_keys, det_decrypt, det_encrypt, record_hmac, rnd_decrypt, rnd_encrypt,
    KeySet, MasterKey, NameKind,
};
use secnosql::wire::{ErrorCode, Message};

use super::{aes_ref, error_code, hmac_ref, keys_ref, q, rows_of, seeded, stack, stack_with, unhex};
use super::{NeedleIndex, TapBackend};

macro_rules! check {
    ($fails:expr, $cond:expr, $($fmt:tt)+) => {
        if !$cond {
            $fails.push(format!($($fmt)+));
        }
    };
}

pub fn check_reference_oracles() -> Vec<String> {
    let mut fails = Vec::new();
    let key: [u8; 16] = unhex("000102030405060708090a0b0c0d0e0f").try_into().unwrap();
    let pt: [u8; 16] = unhex("00112233445566778899aabbccddeeff").try_into().unwrap();
    check!(
        fails,
        aes_ref::encrypt_block(&key, &pt).to_vec() == unhex("69c4e0d86a7b0430d8cdb78070b4c55a"),
        "reference AES disagrees with the FIPS-197 example"
    );
    let cases: [(&[u8], &[u8], &str); 3] = [
        (&[0x0b; 20], b"Hi There", "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"),
        (b"Jefe", b"what do ya want for nothing?", "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"),
        (
            &[0xaa; 131],
            b"Test Using Larger Than Block-Size Key - Hash Key First",
            "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54",
        ),
    ];
    for (i, (k, m, want)) in cases.iter().enumerate() {
        check!(fails, hmac_ref(k, m).to_vec() == unhex(want), "reference HMAC fails RFC 4231 case {i}");
    }
    fails
}

fn mac_keyset(mac_key: &[u8]) -> KeySet {
    let mut k = [0u8; 32];
    k[..mac_key.len()].copy_from_slice(mac_key);
    KeySet { det_key: [0; 16], rnd_key: [0; 16], mac_key: k, meta_key: [0; 32] }
}

/// RFC 4231 cases whose keys fit in 32 bytes; zero-extending a key up to the
/// block size does not change HMAC.
pub fn check_record_hmac_rfc4231() -> Vec<String> {
    let mut fails = Vec::new();
    let cases = [
        (vec![0x0b; 20], &b"Hi There"[..], "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"),
        (b"Jefe".to_vec(), &b"what do ya want for nothing?"[..], "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"),
        (vec![0xaa; 20], &[0xdd; 50][..], "773ea91e36800e46854db8ebd09181a72959098b3ef8c122d9635514ced565fe"),
    ];
    for (i, (key, msg, want)) in cases.into_iter().enumerate() {
        let got = record_hmac(&mac_keyset(&key), msg).as_bytes().to_vec();
        check!(fails, got == unhex(want), "record_hmac fails RFC 4231 case {}", i + 1);
    }
    fails
}

/// Random masters, IVs, plaintexts and names against the reference AES/HMAC.
pub fn check_random_vectors(count: usize, seed: u64) -> Vec<String> {
    let mut fails = Vec::new();
    let mut rng = seeded(seed);
    for v in 0..count {
        let mut master = [0u8; 32];
        rng.fill_bytes(&mut master);
        let mut iv = [0u8; 16];
        rng.fill_bytes(&mut iv);
        let mut pt = vec![0u8; rng.gen_range(0..100)];
        rng.fill_bytes(&mut pt);
        let name: String = (0..rng.gen_range(1..20)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();

        let keys = derive_keys(&MasterKey::from_bytes(&master).unwrap());
        let (det, rnd, mac, meta) = keys_ref(&master);
        check!(
            fails,
            keys.det_key == det && keys.rnd_key == rnd && keys.mac_key == mac && keys.meta_key == meta,
            "vector {v}: derived keys differ"
        );

        let d = det_encrypt(&keys, &pt);
        check!(fails, d.bytes == aes_ref::cbc_encrypt(&det, &[0; 16], &pt), "vector {v}: DET ciphertext");
        check!(fails, det_decrypt(&keys, &d).ok() == Some(pt.clone()), "vector {v}: DET round trip");

        let r = rnd_encrypt(&keys, &pt, Some(iv));
        let mut want = iv.to_vec();
        want.extend(aes_ref::cbc_encrypt(&rnd, &iv, &pt));
        check!(fails, r.bytes == want, "vector {v}: RND ciphertext");
        check!(fails, rnd_decrypt(&keys, &r).ok() == Some(pt.clone()), "vector {v}: RND round trip");

        check!(fails, record_hmac(&keys, &pt).as_bytes() == &hmac_ref(&mac, &pt), "vector {v}: HMAC");

        for (kind, prefix, domain) in [(NameKind::Table, 't', 1u8), (NameKind::Column, 'c', 2u8)] {
            let mut input = vec![domain];
            input.extend_from_slice(name.as_bytes());
            let want = format!("{prefix}{}", hex::encode(&hmac_ref(&meta, &input)[..16]));
            check!(fails, anonymize_name(&keys, kind, &name).ok() == Some(want), "vector {v}: {prefix} name");
        }
    }
    fails
}

/// DET is deterministic and injective over distinct plaintexts; RND never
/// repeats a ciphertext.
pub fn check_det_rnd_properties(trials: u32, seed: u64) -> Vec<String> {
    let mut fails = Vec::new();
    let keys = derive_keys(&MasterKey::from_bytes(&[7; 32]).unwrap());
    let mut rng = seeded(seed);
    let mut det_seen = HashSet::new();
    let mut rnd_seen = HashSet::new();
    for i in 0..trials {
        let pt = format!("value-{i}-{}", rng.gen::<u16>());
        let a = det_encrypt(&keys, pt.as_bytes());
        check!(fails, a == det_encrypt(&keys, pt.as_bytes()), "trial {i}: DET not deterministic");
        check!(fails, det_seen.insert(a.bytes), "trial {i}: DET collision");
        let r1 = rnd_encrypt(&keys, pt.as_bytes(), None);
        let r2 = rnd_encrypt(&keys, pt.as_bytes(), None);
        check!(fails, r1 != r2, "trial {i}: RND repeated for the same plaintext");
        check!(fails, rnd_seen.insert(r1.bytes.clone()) && rnd_seen.insert(r2.bytes), "trial {i}: RND collision");
        check!(fails, rnd_decrypt(&keys, &r1).ok().as_deref() == Some(pt.as_bytes()), "trial {i}: RND round trip");
    }
    fails
}

/// Inserts `rows` random records and scans every stored byte and every frame
/// crossing the backend boundary for any plaintext of five or more bytes.
pub fn check_corpus_confidentiality(rows: usize, seed: u64) -> Vec<String> {
    let mut fails = Vec::new();
    let tap = std::cell::OnceCell::new();
    let s = stack_with(4, 3, |c| {
        let t = Arc::new(TapBackend::new(c));
        tap.set(t.clone()).ok();
        t
    });
    let tap = tap.get().unwrap();
    let mut rng = seeded(seed);
    let mut needles = vec![b"clinical".to_vec(), b"patient_id".to_vec(), b"diagnosis".to_vec(), b"physician".to_vec()];
    let create = Message::CreateSchema {
        table: "clinical".into(),
        columns: vec!["patient_id".into(), "diagnosis".into(), "physician".into()],
    };
    check!(fails, s.proxy.handle(&create) == Message::Ok, "schema rejected");
    for i in 0..rows {
        let key = format!("P{i:05}{}", Alphanumeric.sample_string(&mut rng, 6));
        let d = Alphanumeric.sample_string(&mut rng, 10);
        let p = format!("Dr {}", Alphanumeric.sample_string(&mut rng, 8));
        let stmt = format!("INSERT INTO clinical (patient_id, diagnosis, physician) VALUES ('{key}', '{d}', '{p}')");
        check!(fails, q(&s.proxy, &stmt) == Message::Ok, "insert {i} failed");
        let read = q(&s.proxy, &format!("SELECT * FROM clinical WHERE patient_id = '{key}'"));
        check!(fails, matches!(&read, Message::Rows(_)) && rows_of(read)["diagnosis"] == d, "read back {i} failed");
        needles.extend([key.into_bytes(), d.into_bytes(), p.into_bytes()]);
    }
    let index = NeedleIndex::new(needles);
    let mut hits = Vec::new();
    s.cluster.scan_stored_bytes(|b| hits.extend(index.hits(b)));
    let frames = tap.frames.lock();
    for f in frames.iter() {
        hits.extend(index.hits(f));
    }
    check!(fails, frames.len() >= 2 * rows, "only {} frames observed", frames.len());
    for h in hits.iter().take(5) {
        fails.push(format!("plaintext {:?} visible", String::from_utf8_lossy(index.needle(*h))));
    }
    fails
}

/// Flips every bit of every stored cell of a 3-column row on all replicas and
/// expects an integrity failure each time; then reads the untampered row
/// `clean_reads` times and expects no false positive.
pub fn check_bit_flips(clean_reads: usize) -> (usize, Vec<String>) {
    let mut fails = Vec::new();
    let s = stack(3, 3);
    let create = Message::CreateSchema {
        table: "ledger_rows".into(),
        columns: vec!["id".into(), "a".into(), "b".into(), "c".into()],
    };
    check!(fails, s.proxy.handle(&create) == Message::Ok, "schema rejected");
    let insert = "INSERT INTO ledger_rows (id, a, b, c) VALUES ('r1', 'alpha', 'a longer value spanning blocks', '')";
    check!(fails, q(&s.proxy, insert) == Message::Ok, "insert failed");
    let anon = s.proxy.anonymized("ledger_rows").unwrap();
    let key = det_encrypt(&s.keys, b"r1").bytes;
    let replicas = s.cluster.replicas_for(&key);
    let stored = s.cluster.peek(replicas[0], &anon.table, &key).unwrap();
    check!(fails, stored.cells.len() == 3, "stored row has {} cells", stored.cells.len());
    let select = "SELECT * FROM ledger_rows WHERE id = 'r1'";
    let mut flips = 0;
    for (column, value) in &stored.cells {
        for bit in 0..value.len() * 8 {
            for &n in &replicas {
                s.cluster.flip_bit(n, &anon.table, &key, column, bit).unwrap();
            }
            let got = q(&s.proxy, select);
            check!(fails, error_code(&got) == Some(ErrorCode::IntegrityFailure), "{column} bit {bit}: {got:?}");
            for &n in &replicas {
                s.cluster.flip_bit(n, &anon.table, &key, column, bit).unwrap();
            }
            flips += 1;
        }
    }
    let mut false_positives = 0;
    for _ in 0..clean_reads {
        match q(&s.proxy, select) {
            Message::Rows(_) => {}
            _ => false_positives += 1,
        }
    }
    check!(fails, false_positives == 0, "{false_positives} of {clean_reads} clean reads rejected");
    let row = q(&s.proxy, select);
    check!(fails, matches!(&row, Message::Rows(_)) && rows_of(row)["a"] == "alpha", "row changed after restoring bits");
    (flips, fails)
}
