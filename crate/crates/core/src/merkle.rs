//! Binary SHA-512/224 hash tree over fixed-size blocks.
//!
//! Leaves are `H(0x00 || block)` with the last block zero-padded; internal
//! nodes are `H(0x01 || left || right)`. An unpaired node at the end of a
//! level is promoted to the parent level unchanged. Range proofs carry the
//! left-boundary and right-boundary uncles, bottom level first.

use std::io;
use std::ops::Range;

use sha2::{Digest as _, Sha512_224};
use thiserror::Error;

use crate::parallel;
use crate::store::ByteStore;

pub const DIGEST_LEN: usize = 28;

pub type Digest = [u8; DIGEST_LEN];

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MerkleError {
    #[error("block range {start}..{end} outside tree of {leaves} leaves")]
    RangeOutOfBounds { start: u64, end: u64, leaves: u64 },
    #[error("cannot build a tree over empty data")]
    Empty,
    #[error("block size must be positive")]
    ZeroBlockSize,
    #[error("malformed proof encoding")]
    MalformedPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RootDigest(pub Digest);

impl RootDigest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        Some(RootDigest(bytes.get(..DIGEST_LEN)?.try_into().ok()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Uncle {
    pub side: Side,
    pub digest: Digest,
}

/// Sibling digests needed to recompute the root from a contiguous run of leaves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MerklePath {
    pub uncles: Vec<Uncle>,
}

impl MerklePath {
    pub fn encoded_len(&self) -> usize {
        2 + self.uncles.len() * (1 + DIGEST_LEN)
    }

    /// `count: u16 BE`, then per uncle a side byte (0 left, 1 right) and the digest.
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.uncles.len() as u16).to_be_bytes());
        for u in &self.uncles {
            out.push(match u.side {
                Side::Left => 0,
                Side::Right => 1,
            });
            out.extend_from_slice(&u.digest);
        }
    }

    /// Decodes from the front of `bytes`, returning the path and bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), MerkleError> {
        let count = u16::from_be_bytes(
            bytes
                .get(..2)
                .ok_or(MerkleError::MalformedPath)?
                .try_into()
                .unwrap(),
        ) as usize;
        let need = 2 + count * (1 + DIGEST_LEN);
        let body = bytes.get(2..need).ok_or(MerkleError::MalformedPath)?;
        let uncles = body
            .chunks_exact(1 + DIGEST_LEN)
            .map(|c| {
                let side = match c[0] {
                    0 => Side::Left,
                    1 => Side::Right,
                    _ => return Err(MerkleError::MalformedPath),
                };
                Ok(Uncle {
                    side,
                    digest: c[1..].try_into().unwrap(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok((MerklePath { uncles }, need))
    }
}

pub fn hash_leaf(block: &[u8], block_bytes: usize) -> Digest {
    let mut h = Sha512_224::new();
    h.update([LEAF_TAG]);
    h.update(block);
    if block.len() < block_bytes {
        h.update(vec![0u8; block_bytes - block.len()]);
    }
    h.finalize().into()
}

pub fn hash_node(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha512_224::new();
    h.update([NODE_TAG]);
    h.update(left);
    h.update(right);
    h.finalize().into()
}

/// Leaf digests of `data` split into `block_bytes` blocks, the last possibly short.
pub fn hash_blocks(data: &[u8], block_bytes: usize) -> Vec<Digest> {
    data.chunks(block_bytes)
        .map(|b| hash_leaf(b, block_bytes))
        .collect()
}

fn parent_level(level: &[Digest]) -> Vec<Digest> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => hash_node(l, r),
            [single] => *single,
            _ => unreachable!(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    block_bytes: usize,
    /// Logical node count per level, leaves first, ending with 1.
    widths: Vec<usize>,
    /// Stored digests per level. A promoted node is not stored again; it is
    /// found by descending to its only child.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    /// Builds the tree over `data` (MTInit).
    pub fn build(data: &[u8], block_bytes: usize) -> Result<Self, MerkleError> {
        if data.is_empty() {
            return Err(MerkleError::Empty);
        }
        if block_bytes == 0 {
            return Err(MerkleError::ZeroBlockSize);
        }
        Self::from_leaves(hash_blocks(data, block_bytes), block_bytes)
    }

    /// Builds the tree over a whole store, hashing leaves in parallel.
    pub fn from_store(store: &dyn ByteStore, block_bytes: usize) -> io::Result<Self> {
        let len = store.len();
        if len == 0 || block_bytes == 0 {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, MerkleError::Empty));
        }
        let leaves = len.div_ceil(block_bytes as u64) as usize;
        const LEAVES_PER_TASK: usize = 128;
        let tasks = leaves.div_ceil(LEAVES_PER_TASK);
        let parts = parallel::map_range(0..tasks, |t| -> io::Result<Vec<Digest>> {
            let start = (t * LEAVES_PER_TASK * block_bytes) as u64;
            let end = (start + (LEAVES_PER_TASK * block_bytes) as u64).min(len);
            let mut buf = vec![0u8; (end - start) as usize];
            store.read_at(start, &mut buf)?;
            Ok(hash_blocks(&buf, block_bytes))
        });
        let mut digests = Vec::with_capacity(leaves);
        for p in parts {
            digests.extend(p?);
        }
        Self::from_leaves(digests, block_bytes)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))
    }

    pub fn from_leaves(leaves: Vec<Digest>, block_bytes: usize) -> Result<Self, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::Empty);
        }
        let mut widths = vec![leaves.len()];
        let mut levels = vec![leaves];
        let mut full: Option<Vec<Digest>> = None;
        loop {
            let prev = full.as_ref().unwrap_or(&levels[levels.len() - 1]);
            if prev.len() <= 1 {
                break;
            }
            let next = parent_level(prev);
            let mut stored = next.clone();
            if prev.len() % 2 == 1 {
                stored.pop();
            }
            widths.push(next.len());
            levels.push(stored);
            full = Some(next);
        }
        Ok(MerkleTree {
            block_bytes,
            widths,
            levels,
        })
    }

    fn node(&self, mut level: usize, mut idx: usize) -> Digest {
        loop {
            if let Some(d) = self.levels[level].get(idx) {
                return *d;
            }
            level -= 1;
            idx *= 2;
        }
    }

    pub fn root(&self) -> RootDigest {
        RootDigest(self.node(self.levels.len() - 1, 0))
    }

    pub fn leaf_count(&self) -> u64 {
        self.widths[0] as u64
    }

    pub fn block_bytes(&self) -> usize {
        self.block_bytes
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    fn check_range(&self, range: &Range<u64>) -> Result<(), MerkleError> {
        if range.start >= range.end || range.end > self.leaf_count() {
            return Err(MerkleError::RangeOutOfBounds {
                start: range.start,
                end: range.end,
                leaves: self.leaf_count(),
            });
        }
        Ok(())
    }

    /// Boundary uncles for the leaves in `range`.
    pub fn prove(&self, range: Range<u64>) -> Result<MerklePath, MerkleError> {
        self.check_range(&range)?;
        let (mut lo, mut hi) = (range.start as usize, range.end as usize - 1);
        let mut uncles = Vec::new();
        for level in 0..self.levels.len() - 1 {
            if lo % 2 == 1 {
                uncles.push(Uncle {
                    side: Side::Left,
                    digest: self.node(level, lo - 1),
                });
            }
            if hi % 2 == 0 && hi + 1 < self.widths[level] {
                uncles.push(Uncle {
                    side: Side::Right,
                    digest: self.node(level, hi + 1),
                });
            }
            lo /= 2;
            hi /= 2;
        }
        Ok(MerklePath { uncles })
    }

    /// Replaces the leaves starting at `first` with digests of `blocks` and
    /// rehashes only their ancestors.
    pub fn update(&mut self, first: u64, blocks: &[u8]) -> Result<RootDigest, MerkleError> {
        let digests = hash_blocks(blocks, self.block_bytes);
        let range = first..first + digests.len() as u64;
        self.check_range(&range)?;
        let (mut lo, mut hi) = (range.start as usize, range.end as usize - 1);
        self.levels[0][lo..=hi].copy_from_slice(&digests);
        for depth in 1..self.levels.len() {
            lo /= 2;
            hi /= 2;
            for k in lo..=hi {
                if 2 * k + 1 < self.widths[depth - 1] {
                    let d = hash_node(&self.node(depth - 1, 2 * k), &self.node(depth - 1, 2 * k + 1));
                    self.levels[depth][k] = d;
                }
            }
        }
        Ok(self.root())
    }
}

/// Accumulates a tree while data arrives in arbitrary pieces.
#[derive(Debug)]
pub struct MerkleBuilder {
    block_bytes: usize,
    leaves: Vec<Digest>,
    pending: Vec<u8>,
}

impl MerkleBuilder {
    pub fn new(block_bytes: usize) -> Self {
        MerkleBuilder {
            block_bytes,
            leaves: Vec::new(),
            pending: Vec::with_capacity(block_bytes),
        }
    }

    pub fn push(&mut self, mut data: &[u8]) {
        while !data.is_empty() {
            let take = (self.block_bytes - self.pending.len()).min(data.len());
            self.pending.extend_from_slice(&data[..take]);
            data = &data[take..];
            if self.pending.len() == self.block_bytes {
                self.leaves.push(hash_leaf(&self.pending, self.block_bytes));
                self.pending.clear();
            }
        }
    }

    pub fn finish(mut self) -> Result<MerkleTree, MerkleError> {
        if !self.pending.is_empty() {
            self.leaves.push(hash_leaf(&self.pending, self.block_bytes));
        }
        MerkleTree::from_leaves(self.leaves, self.block_bytes)
    }
}

/// Recomputes the root from the leaf digests of `range` plus `path`, for a
/// tree of `leaf_count` leaves. Fails if the path does not have exactly the
/// shape the tree geometry requires.
pub fn root_from_leaves(
    leaf_count: u64,
    first: u64,
    leaves: &[Digest],
    path: &MerklePath,
) -> Option<RootDigest> {
    if leaves.is_empty() || first + leaves.len() as u64 > leaf_count {
        return None;
    }
    let mut nodes = leaves.to_vec();
    let mut lo = first as usize;
    let mut hi = lo + leaves.len() - 1;
    let mut len = leaf_count as usize;
    let mut uncles = path.uncles.iter();
    while len > 1 {
        let mut start = lo;
        if lo % 2 == 1 {
            let u = uncles.next()?;
            if u.side != Side::Left {
                return None;
            }
            nodes.insert(0, u.digest);
            start = lo - 1;
        }
        if hi % 2 == 0 && hi + 1 < len {
            let u = uncles.next()?;
            if u.side != Side::Right {
                return None;
            }
            nodes.push(u.digest);
        }
        debug_assert_eq!(start % 2, 0);
        nodes = parent_level(&nodes);
        lo /= 2;
        hi /= 2;
        len = len.div_ceil(2);
    }
    if uncles.next().is_some() || nodes.len() != 1 {
        return None;
    }
    Some(RootDigest(nodes[0]))
}

/// Accepts iff `blocks` (concatenated, last possibly short) with `path`
/// reproduce `root`.
pub fn mt_verify(
    root: &RootDigest,
    leaf_count: u64,
    first: u64,
    blocks: &[u8],
    block_bytes: usize,
    path: &MerklePath,
) -> bool {
    if blocks.is_empty() || block_bytes == 0 {
        return false;
    }
    let leaves = hash_blocks(blocks, block_bytes);
    root_from_leaves(leaf_count, first, &leaves, path).as_ref() == Some(root)
}
