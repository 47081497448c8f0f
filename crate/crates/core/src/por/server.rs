//! Server side of the private protocol: the unencoded file, its Merkle tree,
//! and (when externalized) the encrypted control columns with their own tree.

use std::io;
use std::ops::Range;

use crate::error::PorError;
use crate::field::{mat_vec_stream_with, powers, Field, MatrixView};
use crate::merkle::{MerkleBuilder, MerklePath, MerkleTree, RootDigest};
use crate::store::ByteStore;

/// Which of the server's two trees a request addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeId {
    Data = 0,
    Control = 1,
}

impl TreeId {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(TreeId::Data),
            1 => Some(TreeId::Control),
            _ => None,
        }
    }
}

/// Geometry of a stored file, shared by client and server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreLayout {
    pub field_id: u8,
    pub n_bytes: u64,
    pub m: u64,
    pub n: u64,
    pub chunk_bytes: u32,
    pub block_bytes: u32,
    /// Bytes per control column record; 0 when the client keeps `V`.
    pub record_len: u32,
}

impl StoreLayout {
    pub const ENCODED_LEN: usize = 1 + 8 * 3 + 4 * 3;

    pub fn has_control(&self) -> bool {
        self.record_len > 0
    }

    pub fn leaf_count(&self) -> u64 {
        self.n_bytes.div_ceil(self.block_bytes as u64)
    }

    pub fn control_len(&self) -> u64 {
        self.n * self.record_len as u64
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.field_id);
        out.extend_from_slice(&self.n_bytes.to_be_bytes());
        out.extend_from_slice(&self.m.to_be_bytes());
        out.extend_from_slice(&self.n.to_be_bytes());
        out.extend_from_slice(&self.chunk_bytes.to_be_bytes());
        out.extend_from_slice(&self.block_bytes.to_be_bytes());
        out.extend_from_slice(&self.record_len.to_be_bytes());
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < Self::ENCODED_LEN {
            return None;
        }
        let u64_at = |o: usize| u64::from_be_bytes(b[o..o + 8].try_into().unwrap());
        let u32_at = |o: usize| u32::from_be_bytes(b[o..o + 4].try_into().unwrap());
        let layout = StoreLayout {
            field_id: b[0],
            n_bytes: u64_at(1),
            m: u64_at(9),
            n: u64_at(17),
            chunk_bytes: u32_at(25),
            block_bytes: u32_at(29),
            record_len: u32_at(33),
        };
        layout.is_consistent().then_some(layout)
    }

    /// Sanity checks a peer-supplied layout before allocating anything for it.
    pub fn is_consistent(&self) -> bool {
        self.n_bytes > 0
            && self.chunk_bytes > 0
            && self.block_bytes > 0
            && self.block_bytes % self.chunk_bytes == 0
            && self.m > 0
            && self.n > 0
            && self
                .m
                .checked_mul(self.n)
                .and_then(|c| c.checked_mul(self.chunk_bytes as u64))
                .is_some_and(|cap| cap >= self.n_bytes)
            && self.n < u32::MAX as u64
    }
}

/// Blocks of one tree plus the boundary uncles proving them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockProof {
    pub blocks: Vec<u8>,
    pub path: MerklePath,
}

/// A verified write as sent by the client: new bytes for a data range and,
/// when externalized, a replacement control column record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteRequest {
    pub data: Option<(u64, Vec<u8>)>,
    pub control: Option<(u64, Vec<u8>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteAck {
    pub root_m: RootDigest,
    pub root_w: Option<RootDigest>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReply<F> {
    pub y: Vec<F>,
    pub control: Option<BlockProof>,
}

/// What the client needs from a storage server. Implemented in process by
/// [`ServerState`] and over the network by the wire client.
pub trait StorageServer {
    fn read_blocks(&mut self, tree: TreeId, blocks: Range<u64>) -> Result<BlockProof, PorError>;
    fn write(&mut self, req: &WriteRequest) -> Result<WriteAck, PorError>;
    fn audit<F: Field>(&mut self, rho: F) -> Result<AuditReply<F>, PorError>;
}

impl<S: StorageServer + ?Sized> StorageServer for &mut S {
    fn read_blocks(&mut self, tree: TreeId, blocks: Range<u64>) -> Result<BlockProof, PorError> {
        (**self).read_blocks(tree, blocks)
    }
    fn write(&mut self, req: &WriteRequest) -> Result<WriteAck, PorError> {
        (**self).write(req)
    }
    fn audit<F: Field>(&mut self, rho: F) -> Result<AuditReply<F>, PorError> {
        (**self).audit(rho)
    }
}

struct ControlColumns {
    store: Box<dyn ByteStore>,
    tree: MerkleTree,
}

pub struct ServerState {
    layout: StoreLayout,
    data: Box<dyn ByteStore>,
    tree_m: MerkleTree,
    control: Option<ControlColumns>,
}

impl std::fmt::Debug for ServerState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerState")
            .field("layout", &self.layout)
            .field("root_m", &self.tree_m.root())
            .finish_non_exhaustive()
    }
}

fn invalid(msg: impl Into<String>) -> PorError {
    PorError::Format(msg.into())
}

fn control_tree(store: &dyn ByteStore, layout: &StoreLayout) -> Result<MerkleTree, PorError> {
    if store.len() != layout.control_len() {
        return Err(invalid("control matrix length does not match layout"));
    }
    Ok(MerkleTree::from_store(store, layout.record_len as usize)?)
}

impl ServerState {
    /// Takes ownership of the stored file and builds both trees.
    pub fn new(
        layout: StoreLayout,
        data: Box<dyn ByteStore>,
        control: Option<Box<dyn ByteStore>>,
    ) -> Result<Self, PorError> {
        let tree_m = MerkleTree::from_store(data.as_ref(), layout.block_bytes as usize)?;
        Self::with_data_tree(layout, data, tree_m, control)
    }

    /// As [`ServerState::new`] when the data tree was already built while
    /// the file streamed in.
    pub fn with_data_tree(
        layout: StoreLayout,
        data: Box<dyn ByteStore>,
        tree_m: MerkleTree,
        control: Option<Box<dyn ByteStore>>,
    ) -> Result<Self, PorError> {
        if !layout.is_consistent() || data.len() != layout.n_bytes {
            return Err(invalid("data length does not match layout"));
        }
        if tree_m.leaf_count() != layout.leaf_count() {
            return Err(invalid("data tree does not match layout"));
        }
        let control = match (control, layout.has_control()) {
            (Some(store), true) => {
                let tree = control_tree(store.as_ref(), &layout)?;
                Some(ControlColumns { store, tree })
            }
            (None, false) => None,
            _ => return Err(invalid("control matrix presence does not match layout")),
        };
        Ok(ServerState {
            layout,
            data,
            tree_m,
            control,
        })
    }

    pub fn layout(&self) -> &StoreLayout {
        &self.layout
    }

    pub fn root_m(&self) -> RootDigest {
        self.tree_m.root()
    }

    pub fn root_w(&self) -> Option<RootDigest> {
        self.control.as_ref().map(|c| c.tree.root())
    }

    /// Raw access for fault injection and persistence; bypasses the trees.
    pub fn data_store_mut(&mut self) -> &mut dyn ByteStore {
        self.data.as_mut()
    }

    pub fn data_store(&self) -> &dyn ByteStore {
        self.data.as_ref()
    }

    pub fn control_store_mut(&mut self) -> Option<&mut dyn ByteStore> {
        match self.control.as_mut() {
            Some(c) => Some(c.store.as_mut()),
            None => None,
        }
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.data.flush()?;
        if let Some(c) = self.control.as_mut() {
            c.store.flush()?;
        }
        Ok(())
    }

    fn tree_parts(&self, tree: TreeId) -> Result<(&dyn ByteStore, &MerkleTree), PorError> {
        match tree {
            TreeId::Data => Ok((self.data.as_ref(), &self.tree_m)),
            TreeId::Control => self
                .control
                .as_ref()
                .map(|c| (c.store.as_ref(), &c.tree))
                .ok_or_else(|| PorError::OutOfRange("store has no control matrix".into())),
        }
    }

    pub fn prove_blocks(&self, tree: TreeId, blocks: Range<u64>) -> Result<BlockProof, PorError> {
        let (store, t) = self.tree_parts(tree)?;
        let path = t.prove(blocks.clone())?;
        let bb = t.block_bytes() as u64;
        let start = blocks.start * bb;
        let end = (blocks.end * bb).min(store.len());
        let mut buf = vec![0u8; (end - start) as usize];
        store.read_at(start, &mut buf)?;
        Ok(BlockProof { blocks: buf, path })
    }

    pub fn apply_write(&mut self, req: &WriteRequest) -> Result<WriteAck, PorError> {
        // Validate everything before touching either store.
        if let Some((off, bytes)) = &req.data {
            check_span(*off, bytes.len(), self.layout.n_bytes)?;
        }
        if let Some((col, record)) = &req.control {
            if !self.layout.has_control() {
                return Err(PorError::OutOfRange("store has no control matrix".into()));
            }
            if *col >= self.layout.n || record.len() != self.layout.record_len as usize {
                return Err(PorError::OutOfRange(format!("control column {col}")));
            }
        }
        if let Some((off, bytes)) = &req.data {
            if !bytes.is_empty() {
                self.data.write_at(*off, bytes)?;
                let bb = self.layout.block_bytes as u64;
                let first = off / bb;
                let last = (off + bytes.len() as u64 - 1) / bb;
                let start = first * bb;
                let end = ((last + 1) * bb).min(self.layout.n_bytes);
                let mut buf = vec![0u8; (end - start) as usize];
                self.data.read_at(start, &mut buf)?;
                self.tree_m.update(first, &buf)?;
            }
        }
        if let Some((col, record)) = &req.control {
            let c = self.control.as_mut().expect("checked above");
            c.store.write_at(col * record.len() as u64, record)?;
            c.tree.update(*col, record)?;
        }
        Ok(WriteAck {
            root_m: self.root_m(),
            root_w: self.root_w(),
        })
    }

    /// `y = M x` for `x = powers(rho, n)`, delivered in row blocks.
    pub fn audit_stream<F: Field>(
        &self,
        rho: F,
        on_block: impl FnMut(usize, &[F]) -> io::Result<()>,
    ) -> Result<(), PorError> {
        if F::ID != self.layout.field_id {
            return Err(PorError::Params("challenge field does not match store".into()));
        }
        let x = powers(rho, self.layout.n as usize)?;
        let view = MatrixView::<F>::new(self.data.as_ref(), self.layout.m as usize, self.layout.n as usize);
        mat_vec_stream_with(&view, &x, on_block)?;
        Ok(())
    }

    pub fn control_proof(&self) -> Result<Option<BlockProof>, PorError> {
        match &self.control {
            Some(_) => Ok(Some(self.prove_blocks(TreeId::Control, 0..self.layout.n)?)),
            None => Ok(None),
        }
    }

    pub fn compute_audit<F: Field>(&self, rho: F) -> Result<AuditReply<F>, PorError> {
        let mut y = Vec::with_capacity(self.layout.m as usize);
        self.audit_stream(rho, |_, block| {
            y.extend_from_slice(block);
            Ok(())
        })?;
        Ok(AuditReply {
            y,
            control: self.control_proof()?,
        })
    }
}

fn check_span(off: u64, len: usize, total: u64) -> Result<(), PorError> {
    match off.checked_add(len as u64) {
        Some(end) if end <= total => Ok(()),
        _ => Err(PorError::OutOfRange(format!("bytes {off}+{len} beyond {total}"))),
    }
}

impl StorageServer for ServerState {
    fn read_blocks(&mut self, tree: TreeId, blocks: Range<u64>) -> Result<BlockProof, PorError> {
        self.prove_blocks(tree, blocks)
    }

    fn write(&mut self, req: &WriteRequest) -> Result<WriteAck, PorError> {
        self.apply_write(req)
    }

    fn audit<F: Field>(&mut self, rho: F) -> Result<AuditReply<F>, PorError> {
        self.compute_audit(rho)
    }
}

/// Builds the data tree incrementally while a file arrives in pieces.
pub struct StreamingIngest {
    builder: MerkleBuilder,
    received: u64,
}

impl StreamingIngest {
    pub fn new(layout: &StoreLayout) -> Self {
        StreamingIngest {
            builder: MerkleBuilder::new(layout.block_bytes as usize),
            received: 0,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.builder.push(bytes);
        self.received += bytes.len() as u64;
    }

    pub fn received(&self) -> u64 {
        self.received
    }

    pub fn finish(self) -> Result<MerkleTree, PorError> {
        Ok(self.builder.finish()?)
    }
}
