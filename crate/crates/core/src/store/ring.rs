use super::{NodeId, StoreError};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Partitioner: FNV-1a 64 over the encrypted key bytes.
pub fn ring_position(key_ct: &[u8]) -> u64 {
    key_ct.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Consistency {
    #[default]
    One,
}

/// Token ring with successor replica placement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterRing {
    tokens: Vec<u64>,
    replication_factor: usize,
    consistency: Consistency,
}

impl ClusterRing {
    /// `nodes` nodes with evenly spaced tokens `i * 2^64 / nodes`.
    pub fn evenly_spaced(nodes: usize, replication_factor: usize) -> Result<Self, StoreError> {
        let tokens = (0..nodes)
            .map(|i| ((i as u128) * (1u128 << 64) / nodes as u128) as u64)
            .collect();
        Self::with_tokens(tokens, replication_factor)
    }

    pub fn with_tokens(tokens: Vec<u64>, replication_factor: usize) -> Result<Self, StoreError> {
        if tokens.is_empty() {
            return Err(StoreError::Config("ring needs at least one node".into()));
        }
        if tokens.len() > u8::MAX as usize + 1 {
            return Err(StoreError::Config("at most 256 nodes".into()));
        }
        if tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StoreError::Config("tokens must be strictly increasing".into()));
        }
        if replication_factor == 0 || replication_factor > tokens.len() {
            return Err(StoreError::Config(format!(
                "replication factor {replication_factor} must be in 1..={}",
                tokens.len()
            )));
        }
        Ok(ClusterRing {
            tokens,
            replication_factor,
            consistency: Consistency::One,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[u64] {
        &self.tokens
    }

    pub fn replication_factor(&self) -> usize {
        self.replication_factor
    }

    pub fn consistency(&self) -> Consistency {
        self.consistency
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.index() < self.tokens.len()
    }

    /// Primary is the first node whose token is `>= token` (wrapping to node
    /// 0); the rest follow in ring order.
    pub fn replicas(&self, token: u64) -> Vec<NodeId> {
        let n = self.tokens.len();
        let primary = self.tokens.partition_point(|&t| t < token) % n;
        (0..self.replication_factor)
            .map(|i| NodeId(((primary + i) % n) as u8))
            .collect()
    }
}
