use rand::distributions::{Alphanumeric, DistString};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::zipfian::{Zipfian, DEFAULT_THETA};
use super::BenchError;

pub const TABLE: &str = "usertable";
pub const KEY_COLUMN: &str = "ycsb_key";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Zipfian,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub record_count: usize,
    pub operation_count: usize,
    pub read_proportion: f64,
    pub distribution: Distribution,
    pub value_length: usize,
    pub field_count: usize,
}

impl WorkloadSpec {
    /// 50% reads, 50% single-field updates.
    pub fn workload_a(record_count: usize, operation_count: usize) -> Self {
        WorkloadSpec {
            record_count,
            operation_count,
            read_proportion: 0.5,
            distribution: Distribution::Zipfian,
            value_length: 100,
            field_count: 10,
        }
    }

    /// 95% reads, 5% single-field updates.
    pub fn workload_b(record_count: usize, operation_count: usize) -> Self {
        WorkloadSpec {
            read_proportion: 0.95,
            ..Self::workload_a(record_count, operation_count)
        }
    }

    pub fn write_proportion(&self) -> f64 {
        1.0 - self.read_proportion
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.record_count == 0 || self.operation_count == 0 {
            return Err(BenchError::Config("record and operation counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.read_proportion) {
            return Err(BenchError::Config(format!(
                "read proportion {} outside [0, 1]",
                self.read_proportion
            )));
        }
        if self.field_count == 0 || self.value_length == 0 {
            return Err(BenchError::Config("need at least one non-empty field".into()));
        }
        Ok(())
    }

    pub fn columns(&self) -> Vec<String> {
        std::iter::once(KEY_COLUMN.to_string())
            .chain((0..self.field_count).map(field_name))
            .collect()
    }
}

pub fn key_name(index: usize) -> String {
    format!("user{index}")
}

pub fn field_name(field: usize) -> String {
    format!("field{field}")
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    mix(mix(seed ^ mix(a)) ^ b)
}

/// Value loaded into `field` of record `key`. Depends only on its arguments,
/// so a separate `run` can rebuild the expected table without reloading.
pub fn initial_value(seed: u64, key: usize, field: usize, len: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, key as u64, field as u64));
    Alphanumeric.sample_string(&mut rng, len)
}

pub fn insert_statement(spec: &WorkloadSpec, key: usize, values: &[String]) -> String {
    let cols = spec.columns().join(", ");
    let vals: Vec<String> = std::iter::once(key_name(key))
        .chain(values.iter().cloned())
        .map(|v| format!("'{}'", v.replace('\'', "''")))
        .collect();
    format!("INSERT INTO {TABLE} ({cols}) VALUES ({})", vals.join(", "))
}

pub fn read_statement(key: usize) -> String {
    format!("SELECT * FROM {TABLE} WHERE {KEY_COLUMN} = '{}'", key_name(key))
}

pub fn update_statement(key: usize, field: usize, value: &str) -> String {
    format!(
        "UPDATE {TABLE} SET {} = '{}' WHERE {KEY_COLUMN} = '{}'",
        field_name(field),
        value.replace('\'', "''"),
        key_name(key)
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operation {
    Read { key: usize },
    Update { key: usize, field: usize, value: String },
}

impl Operation {
    pub fn key(&self) -> usize {
        match self {
            Operation::Read { key } | Operation::Update { key, .. } => *key,
        }
    }

    pub fn is_read(&self) -> bool {
        matches!(self, Operation::Read { .. })
    }
}

/// Keys owned by each of `sessions` sessions spread over `proxies` proxies.
///
/// Key `i` lives on proxy `i % p` (the one that loaded it) and session `s`
/// talks to proxy `s % p`. The sessions sharing a proxy split its keys by
/// stride, so no two sessions touch the same key.
pub fn partition_keys(
    record_count: usize,
    sessions: usize,
    proxies: usize,
) -> Result<Vec<Vec<usize>>, BenchError> {
    let proxies = proxies.max(1);
    if sessions == 0 {
        return Err(BenchError::Config("need at least one session".into()));
    }
    let mut owned = vec![Vec::new(); sessions];
    for j in 0..proxies {
        let members: Vec<usize> = (j..sessions).step_by(proxies).collect();
        if members.is_empty() {
            continue;
        }
        for (pos, key) in (j..record_count).step_by(proxies).enumerate() {
            owned[members[pos % members.len()]].push(key);
        }
    }
    if let Some(s) = owned.iter().position(Vec::is_empty) {
        return Err(BenchError::Config(format!(
            "session {s} owns no keys; {record_count} records cannot serve {sessions} sessions"
        )));
    }
    Ok(owned)
}

/// Operation sequence of one session, fully determined by the seed.
pub fn plan_session(
    spec: &WorkloadSpec,
    keys: &[usize],
    operations: usize,
    seed: u64,
) -> Result<Vec<Operation>, BenchError> {
    if keys.is_empty() {
        return Err(BenchError::Config("session has no keys".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = match spec.distribution {
        Distribution::Zipfian => Some(Zipfian::new(keys.len(), DEFAULT_THETA)?),
        Distribution::Uniform => None,
    };
    Ok((0..operations)
        .map(|_| {
            let read = rng.gen::<f64>() < spec.read_proportion;
            let rank = match &zipf {
                Some(z) => z.sample(&mut rng),
                None => rng.gen_range(0..keys.len()),
            };
            let key = keys[rank];
            if read {
                Operation::Read { key }
            } else {
                Operation::Update {
                    key,
                    field: rng.gen_range(0..spec.field_count),
                    value: Alphanumeric.sample_string(&mut rng, spec.value_length),
                }
            }
        })
        .collect())
}
