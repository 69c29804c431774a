//! Shared test helpers: independent crypto oracles, stack builders, a
//! frame-tapping backend and the random CRUD driver.

#![allow(dead_code)]

pub mod checks;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::distributions::{Alphanumeric, DistString};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use secnosql::crypto::{derive_keys, KeySet, MasterKey};
use secnosql::proxy::{Proxy, ProxyConfig};
use secnosql::store::{
    Backend, Cluster, ClusterRing, NodeId, StoreError, StoreRequest,
    StoreResult,
};
use secnosql::wire::{encode_frame, ErrorCode, Message};

/// Textbook AES-128 with the S-box derived from GF(2^8) inverses.
pub mod aes_ref {
    use std::sync::OnceLock;

    fn xtime(b: u8) -> u8 {
        (b << 1) ^ if b & 0x80 != 0 { 0x1b } else { 0 }
    }

    pub fn gmul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            a = xtime(a);
            b >>= 1;
        }
        p
    }

    fn sbox() -> &'static [u8; 256] {
        static S: OnceLock<[u8; 256]> = OnceLock::new();
        S.get_or_init(|| {
            let mut s = [0u8; 256];
            for x in 0..=255u8 {
                let b = if x == 0 {
                    0
                } else {
                    (1..=255u8).find(|&y| gmul(x, y) == 1).unwrap()
                };
                s[x as usize] = b
                    ^ b.rotate_left(1)
                    ^ b.rotate_left(2)
                    ^ b.rotate_left(3)
                    ^ b.rotate_left(4)
                    ^ 0x63;
            }
            s
        })
    }

    fn round_keys(key: &[u8; 16]) -> [[u8; 16]; 11] {
        let s = sbox();
        let mut w = [[0u8; 4]; 44];
        for i in 0..4 {
            w[i].copy_from_slice(&key[4 * i..4 * i + 4]);
        }
        let mut rcon = 1u8;
        for i in 4..44 {
            let mut t = w[i - 1];
            if i % 4 == 0 {
                t = [s[t[1] as usize] ^ rcon, s[t[2] as usize], s[t[3] as usize], s[t[0] as usize]];
                rcon = xtime(rcon);
            }
            for j in 0..4 {
                w[i][j] = w[i - 4][j] ^ t[j];
            }
        }
        let mut out = [[0u8; 16]; 11];
        for (r, rk) in out.iter_mut().enumerate() {
            for c in 0..4 {
                rk[4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
            }
        }
        out
    }

    pub fn encrypt_block(key: &[u8; 16], block: &[u8; 16]) -> [u8; 16] {
        let s = sbox();
        let rk = round_keys(key);
        let mut st = *block;
        let add = |st: &mut [u8; 16], k: &[u8; 16]| st.iter_mut().zip(k).for_each(|(a, b)| *a ^= b);
        add(&mut st, &rk[0]);
        for (round, k) in rk.iter().enumerate().skip(1) {
            st.iter_mut().for_each(|b| *b = s[*b as usize]);
            let old = st;
            for r in 0..4 {
                for c in 0..4 {
                    st[r + 4 * c] = old[r + 4 * ((c + r) % 4)];
                }
            }
            if round != 10 {
                for c in 0..4 {
                    let a: [u8; 4] = st[4 * c..4 * c + 4].try_into().unwrap();
                    st[4 * c] = gmul(a[0], 2) ^ gmul(a[1], 3) ^ a[2] ^ a[3];
                    st[4 * c + 1] = a[0] ^ gmul(a[1], 2) ^ gmul(a[2], 3) ^ a[3];
                    st[4 * c + 2] = a[0] ^ a[1] ^ gmul(a[2], 2) ^ gmul(a[3], 3);
                    st[4 * c + 3] = gmul(a[0], 3) ^ a[1] ^ a[2] ^ gmul(a[3], 2);
                }
            }
            add(&mut st, k);
        }
        st
    }

    /// CBC with PKCS#7 padding.
    pub fn cbc_encrypt(key: &[u8; 16], iv: &[u8; 16], plaintext: &[u8]) -> Vec<u8> {
        let pad = 16 - plaintext.len() % 16;
        let mut data = plaintext.to_vec();
        data.extend(vec![pad as u8; pad]);
        let mut prev = *iv;
        let mut out = Vec::with_capacity(data.len());
        for chunk in data.chunks(16) {
            let mut b = [0u8; 16];
            for i in 0..16 {
                b[i] = chunk[i] ^ prev[i];
            }
            prev = encrypt_block(key, &b);
            out.extend_from_slice(&prev);
        }
        out
    }
}

/// HMAC-SHA256 built from the hash alone.
pub fn hmac_ref(key: &[u8], message: &[u8]) -> [u8; 32] {
    let mut k = [0u8; 64];
    if key.len() > 64 {
        k[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let mut inner = Sha256::new();
    inner.update(k.map(|b| b ^ 0x36));
    inner.update(message);
    let mut outer = Sha256::new();
    outer.update(k.map(|b| b ^ 0x5c));
    outer.update(inner.finalize());
    outer.finalize().into()
}

/// Key schedule computed with the reference HMAC: `(det, rnd, mac, meta)`.
pub fn keys_ref(master: &[u8; 32]) -> ([u8; 16], [u8; 16], [u8; 32], [u8; 32]) {
    let det = hmac_ref(master, b"det");
    let rnd = hmac_ref(master, b"rnd");
    (
        det[..16].try_into().unwrap(),
        rnd[..16].try_into().unwrap(),
        hmac_ref(master, b"mac"),
        hmac_ref(master, b"meta"),
    )
}

pub fn unhex(s: &str) -> Vec<u8> {
    hex::decode(s.replace([' ', '\n'], "")).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixed_master() -> MasterKey {
    MasterKey::from_bytes(&[0x5a; 32]).unwrap()
}

/// Proxy over an in-process cluster.
pub struct Stack {
    pub cluster: Arc<Cluster>,
    pub proxy: Arc<Proxy>,
    pub keys: KeySet,
}

pub fn stack_with(nodes: usize, rf: usize, backend: impl FnOnce(Arc<Cluster>) -> Arc<dyn Backend>) -> Stack {
    let cluster = Arc::new(Cluster::new(ClusterRing::evenly_spaced(nodes, rf).unwrap()));
    let master = fixed_master();
    let proxy = Proxy::new(&master, backend(cluster.clone()), &ProxyConfig::default()).unwrap();
    Stack {
        cluster,
        proxy: Arc::new(proxy),
        keys: derive_keys(&master),
    }
}

pub fn stack(nodes: usize, rf: usize) -> Stack {
    stack_with(nodes, rf, |c| c)
}

pub fn q(proxy: &Proxy, text: &str) -> Message {
    proxy.handle(&Message::Query(text.to_string()))
}

pub fn rows_of(msg: Message) -> BTreeMap<String, String> {
    match msg {
        Message::Rows(cells) => cells
            .into_iter()
            .map(|(c, v)| (c, String::from_utf8(v).unwrap()))
            .collect(),
        other => panic!("expected rows, got {other:?}"),
    }
}

pub fn error_code(msg: &Message) -> Option<ErrorCode> {
    match msg {
        Message::Error { code, .. } => Some(*code),
        _ => None,
    }
}

pub fn sql_quote(v: &str) -> String {
    format!("'{}'", v.replace('\'', "''"))
}

/// Backend that encodes every request and reply as a wire frame, keeps the
/// bytes, and forwards to the cluster.
pub struct TapBackend {
    pub inner: Arc<Cluster>,
    pub frames: Mutex<Vec<Vec<u8>>>,
}

impl TapBackend {
    pub fn new(inner: Arc<Cluster>) -> Self {
        TapBackend {
            inner,
            frames: Mutex::new(Vec::new()),
        }
    }
}

fn request_frame(coordinator: NodeId, req: &StoreRequest) -> Message {
    let c = coordinator.0;
    let cells = |m: &BTreeMap<String, Vec<u8>>| m.clone().into_iter().collect();
    match req.clone() {
        StoreRequest::CreateTable { table, columns } => Message::RowCreate {
            coordinator: c,
            table,
            columns,
        },
        StoreRequest::Put { table, key, cells: m } => Message::RowPut {
            coordinator: c,
            table,
            key,
            cells: cells(&m),
        },
        StoreRequest::Merge { table, key, cells: m } => Message::RowMerge {
            coordinator: c,
            table,
            key,
            cells: cells(&m),
        },
        StoreRequest::Get { table, key } => Message::RowGet {
            coordinator: c,
            table,
            key,
        },
        StoreRequest::Delete { table, key } => Message::RowDelete {
            coordinator: c,
            table,
            key,
        },
    }
}

impl Backend for TapBackend {
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    fn execute(&self, coordinator: NodeId, request: StoreRequest) -> Result<StoreResult, StoreError> {
        let out = encode_frame(&request_frame(coordinator, &request)).unwrap();
        self.frames.lock().push(out);
        let result = self.inner.execute(coordinator, request)?;
        let reply = match &result {
            StoreResult::Row(r) => Message::Rows(r.cells.clone().into_iter().collect()),
            _ => Message::Ok,
        };
        self.frames.lock().push(encode_frame(&reply).unwrap());
        Ok(result)
    }
}

/// Finds which needles occur anywhere in the haystacks. Needles must be at
/// least 5 bytes long.
pub struct NeedleIndex {
    by_prefix: HashMap<[u8; 5], Vec<usize>>,
    needles: Vec<Vec<u8>>,
}

impl NeedleIndex {
    pub fn new(needles: impl IntoIterator<Item = Vec<u8>>) -> Self {
        let needles: Vec<Vec<u8>> = needles.into_iter().collect();
        let mut by_prefix: HashMap<[u8; 5], Vec<usize>> = HashMap::new();
        for (i, n) in needles.iter().enumerate() {
            assert!(n.len() >= 5, "needle too short");
            by_prefix.entry(n[..5].try_into().unwrap()).or_default().push(i);
        }
        NeedleIndex { by_prefix, needles }
    }

    pub fn len(&self) -> usize {
        self.needles.len()
    }

    /// Indices of needles found in `hay`.
    pub fn hits(&self, hay: &[u8]) -> Vec<usize> {
        let mut out = Vec::new();
        for start in 0..hay.len().saturating_sub(4) {
            let window: [u8; 5] = hay[start..start + 5].try_into().unwrap();
            if let Some(ids) = self.by_prefix.get(&window) {
                for &i in ids {
                    if hay[start..].starts_with(&self.needles[i]) {
                        out.push(i);
                    }
                }
            }
        }
        out
    }

    pub fn needle(&self, i: usize) -> &[u8] {
        &self.needles[i]
    }
}

/// Outcome of a random CRUD run against the plaintext oracle.
#[derive(Debug, Default)]
pub struct CrudReport {
    pub operations: usize,
    pub reads: usize,
    pub mismatches: Vec<String>,
}

pub struct TableShape {
    pub name: String,
    pub key: String,
    pub columns: Vec<String>,
}

pub fn crud_tables() -> Vec<TableShape> {
    [
        ("accounts", "acct_id", &["owner", "balance", "branch"][..]),
        ("patients", "mrn", &["surname", "diagnosis"][..]),
        ("orders", "order_no", &["item", "qty", "status", "note"][..]),
    ]
    .iter()
    .map(|(t, k, cols)| TableShape {
        name: t.to_string(),
        key: k.to_string(),
        columns: cols.iter().map(|c| c.to_string()).collect(),
    })
    .collect()
}

fn random_value(rng: &mut ChaCha8Rng) -> String {
    const EXTRA: [&str; 6] = ["'", "''", " ", "é", "→", ";"];
    let len = rng.gen_range(0..12);
    let mut s = Alphanumeric.sample_string(rng, len);
    if rng.gen_bool(0.3) {
        let at = rng.gen_range(0..=s.len());
        s.insert_str(at, EXTRA.choose(rng).unwrap());
    }
    s
}

/// Runs `operations` random statements through `proxy` and the same logical
/// operations on a map, comparing every read and every status.
pub fn random_crud(proxy: &Proxy, operations: usize, seed: u64) -> CrudReport {
    let mut rng = seeded(seed);
    let tables = crud_tables();
    for t in &tables {
        let mut cols = vec![t.key.clone()];
        cols.extend(t.columns.iter().cloned());
        let msg = proxy.handle(&Message::CreateSchema {
            table: t.name.clone(),
            columns: cols,
        });
        assert_eq!(msg, Message::Ok);
    }
    let mut oracle: Vec<BTreeMap<String, BTreeMap<String, String>>> = vec![BTreeMap::new(); tables.len()];
    let mut report = CrudReport::default();
    let key_space = 60;
    for i in 0..operations {
        let ti = rng.gen_range(0..tables.len());
        let t = &tables[ti];
        let key = format!("k{}", rng.gen_range(0..key_space));
        let map = &mut oracle[ti];
        let roll = rng.gen_range(0..100);
        let (stmt, expect): (String, Result<Option<BTreeMap<String, String>>, ErrorCode>) = if roll < 25 {
            let mut cells = BTreeMap::new();
            for c in &t.columns {
                if rng.gen_bool(0.8) {
                    cells.insert(c.clone(), random_value(&mut rng));
                }
            }
            let names: Vec<&str> = std::iter::once(t.key.as_str()).chain(cells.keys().map(String::as_str)).collect();
            let values: Vec<String> = std::iter::once(sql_quote(&key)).chain(cells.values().map(|v| sql_quote(v))).collect();
            let stmt = format!("INSERT INTO {} ({}) VALUES ({})", t.name, names.join(", "), values.join(", "));
            map.insert(key.clone(), cells);
            (stmt, Ok(None))
        } else if roll < 45 {
            let mut cells = BTreeMap::new();
            while cells.is_empty() {
                for c in &t.columns {
                    if rng.gen_bool(0.4) {
                        cells.insert(c.clone(), random_value(&mut rng));
                    }
                }
            }
            let sets: Vec<String> = cells.iter().map(|(c, v)| format!("{c} = {}", sql_quote(v))).collect();
            let stmt = format!("UPDATE {} SET {} WHERE {} = {}", t.name, sets.join(", "), t.key, sql_quote(&key));
            map.entry(key.clone()).or_default().extend(cells);
            (stmt, Ok(None))
        } else if roll < 90 {
            let projection: Vec<String> = if rng.gen_bool(0.5) {
                vec!["*".into()]
            } else {
                let mut cols: Vec<String> = t.columns.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect();
                if rng.gen_bool(0.3) || cols.is_empty() {
                    cols.push(t.key.clone());
                }
                cols
            };
            let stmt = format!("SELECT {} FROM {} WHERE {} = {}", projection.join(", "), t.name, t.key, sql_quote(&key));
            let expect = match map.get(&key) {
                None => Err(ErrorCode::NotFound),
                Some(row) => {
                    let want_all = projection[0] == "*";
                    let mut out: BTreeMap<String, String> = row
                        .iter()
                        .filter(|(c, _)| want_all || projection.contains(c))
                        .map(|(c, v)| (c.clone(), v.clone()))
                        .collect();
                    if want_all || projection.contains(&t.key) {
                        out.insert(t.key.clone(), key.clone());
                    }
                    Ok(Some(out))
                }
            };
            (stmt, expect)
        } else {
            let stmt = format!("DELETE FROM {} WHERE {} = {}", t.name, t.key, sql_quote(&key));
            let expect = match map.remove(&key) {
                Some(_) => Ok(None),
                None => Err(ErrorCode::NotFound),
            };
            (stmt, expect)
        };
        let got = q(proxy, &stmt);
        report.operations += 1;
        let ok = match (&expect, &got) {
            (Ok(None), Message::Ok) => true,
            (Ok(Some(want)), Message::Rows(_)) => {
                report.reads += 1;
                &rows_of(got.clone()) == want
            }
            (Err(code), Message::Error { code: c, .. }) => code == c,
            _ => false,
        };
        if !ok {
            report.mismatches.push(format!("op {i}: {stmt}: expected {expect:?}, got {got:?}"));
        }
    }
    report
}

/// Hand-assembled frames, one or more per opcode.
pub fn golden_frames() -> Vec<(Message, &'static str)> {
    vec![
        (
            Message::CreateSchema { table: "t".into(), columns: vec!["k".into(), "v".into()] },
            "0000000b 01 0001 74 02 0001 6b 0001 76",
        ),
        (Message::Query("SELECT".into()), "0000000b 02 00000006 53454c454354"),
        (
            Message::RowCreate { coordinator: 3, table: "t".into(), columns: vec!["c".into()] },
            "00000009 10 03 0001 74 01 0001 63",
        ),
        (
            Message::RowPut {
                coordinator: 2,
                table: "t".into(),
                key: vec![0xaa, 0xbb],
                cells: vec![("c".into(), vec![1])],
            },
            "00000015 11 02 0001 74 00000002 aabb 0001 0001 63 00000001 01",
        ),
        (
            Message::RowMerge {
                coordinator: 2,
                table: "t".into(),
                key: vec![0xaa, 0xbb],
                cells: vec![("c".into(), vec![1])],
            },
            "00000015 12 02 0001 74 00000002 aabb 0001 0001 63 00000001 01",
        ),
        (
            Message::RowGet { coordinator: 0, table: "t".into(), key: vec![0xaa] },
            "0000000a 13 00 0001 74 00000001 aa",
        ),
        (
            Message::RowDelete { coordinator: 1, table: "t".into(), key: vec![] },
            "00000009 14 01 0001 74 00000000",
        ),
        (Message::Ok, "00000001 81"),
        (Message::Rows(vec![]), "00000003 82 0000"),
        (Message::Rows(vec![("c".into(), b"v".to_vec())]), "0000000b 82 0001 0001 63 00000001 76"),
        (
            Message::Error { code: ErrorCode::IntegrityFailure, message: "x".into() },
            "00000005 83 02 0001 78",
        ),
        (
            Message::Error { code: ErrorCode::NotFound, message: String::new() },
            "00000004 83 01 0000",
        ),
    ]
}

/// Checks every golden frame in both directions. Returns the failures.
pub fn check_golden_frames() -> Vec<String> {
    use secnosql::wire::decode_payload;
    let mut failures = Vec::new();
    for (msg, hex) in golden_frames() {
        let want = unhex(hex);
        match encode_frame(&msg) {
            Ok(got) if got == want => {}
            other => failures.push(format!("encode {msg:?}: {other:?}")),
        }
        match decode_payload(&want[4..]) {
            Ok(got) if got == msg => {}
            other => failures.push(format!("decode {hex}: {other:?}")),
        }
    }
    failures
}

/// Drives malformed input at a running server: every bad frame must get an
/// ERROR reply, the offending session must stay usable unless the length
/// prefix itself was unacceptable, and a bystander session must be
/// unaffected throughout. Returns the failures.
pub fn check_malformed_frames(addr: std::net::SocketAddr) -> Vec<String> {
    use secnosql::net::Client;
    use std::io::Write;

    let mut failures = Vec::new();
    let probe = Message::Query("SELECT v FROM absent_table WHERE k = 'a'".into());
    let healthy = |c: &mut Client| matches!(c.call(&probe), Ok(Message::Error { code: ErrorCode::Schema, .. }));
    let mut bystander = Client::connect(addr).unwrap();
    let mut c = Client::connect(addr).unwrap();
    let bad: [(&str, Vec<u8>); 7] = [
        ("unknown opcode", unhex("00000001 7f")),
        ("empty payload", unhex("00000000")),
        ("truncated body", unhex("00000007 02 00000064 5345")),
        ("trailing bytes", unhex("00000002 81 00")),
        ("bad utf-8", unhex("00000007 02 00000002 c328")),
        ("response opcode as request", unhex("00000001 81")),
        ("cell count past end", unhex("00000003 82 ffff")),
    ];
    for (what, frame) in bad {
        if let Err(e) = c.send_raw(&frame) {
            failures.push(format!("{what}: send failed: {e}"));
            continue;
        }
        match c.recv() {
            Ok(Message::Error { .. }) => {}
            other => failures.push(format!("{what}: expected ERROR, got {other:?}")),
        }
        if !healthy(&mut c) {
            failures.push(format!("{what}: session unusable afterwards"));
        }
        if !healthy(&mut bystander) {
            failures.push(format!("{what}: bystander session broken"));
        }
    }

    // an unacceptable length prefix is answered, then the session ends
    let mut big = Client::connect(addr).unwrap();
    big.send_raw(&unhex("ffffffff 02")).unwrap();
    match big.recv() {
        Ok(Message::Error { code: ErrorCode::Parse, .. }) => {}
        other => failures.push(format!("oversized length: expected ERROR, got {other:?}")),
    }
    if big.call(&probe).is_ok() {
        failures.push("oversized length: session stayed open".into());
    }

    // a client vanishing mid-frame must not disturb anyone else
    let mut torn = std::net::TcpStream::connect(addr).unwrap();
    torn.write_all(&unhex("00000010 02 0000")).unwrap();
    drop(torn);
    if !healthy(&mut bystander) {
        failures.push("torn frame: bystander session broken".into());
    }
    if !healthy(&mut Client::connect(addr).unwrap()) {
        failures.push("torn frame: new sessions refused".into());
    }
    failures
}

/// The planted surface `2 + 3p + 5n - 0.01 n^2` in basis order.
pub const PLANTED: [f64; 9] = [2.0, 3.0, 5.0, 0.0, 0.0, -0.01, 0.0, 0.0, 0.0];

pub fn planted_grid() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for p in [1.0, 2.0, 4.0] {
        for n in 1..=16 {
            let n = n as f64;
            out.push((p, n, 2.0 + 3.0 * p + 5.0 * n - 0.01 * n * n));
        }
    }
    out
}

/// `max_j |x_j . r| / (|x_j| |y|)` over design columns: zero for an exact
/// least-squares solution.
pub fn residual_orthogonality(samples: &[(f64, f64, f64)], coefficients: &[f64; 9]) -> f64 {
    let rows: Vec<[f64; 9]> = samples.iter().map(|&(p, n, _)| secnosql::sla::design_row(p, n)).collect();
    let resid: Vec<f64> = rows
        .iter()
        .zip(samples)
        .map(|(x, s)| s.2 - x.iter().zip(coefficients).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let ynorm = samples.iter().map(|s| s.2 * s.2).sum::<f64>().sqrt();
    (0..9)
        .map(|j| {
            let dot: f64 = rows.iter().zip(&resid).map(|(x, r)| x[j] * r).sum();
            let cnorm = rows.iter().map(|x| x[j] * x[j]).sum::<f64>().sqrt();
            dot.abs() / (cnorm * ynorm)
        })
        .fold(0.0, f64::max)
}

/// Chi-square goodness of fit of the crate's Zipfian sampler against the
/// pmf computed here by direct summation. Returns `(statistic, dof, p)`.
pub fn zipf_chi_square(items: usize, theta: f64, draws: usize, seed: u64) -> (f64, usize, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let weights: Vec<f64> = (1..=items).map(|i| 1.0 / (i as f64).powf(theta)).collect();
    let total: f64 = weights.iter().sum();
    let mut g = secnosql::bench::ZipfianGenerator::new(items, theta, seed).unwrap();
    let mut counts = vec![0usize; items];
    for _ in 0..draws {
        counts[g.next_index()] += 1;
    }
    // merge the tail so every bin expects at least 5 draws
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut e, mut o) = (0.0, 0.0);
    for (w, c) in weights.iter().zip(&counts) {
        e += w / total * draws as f64;
        o += *c as f64;
        if e >= 5.0 {
            bins.push((o, e));
            e = 0.0;
            o = 0.0;
        }
    }
    if e > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += o;
                last.1 += e;
            }
            None => bins.push((o, e)),
        }
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len().saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    (stat, dof, p)
}
