//! Misbehaving servers for the security games.

use std::ops::Range;

use rand::{Rng, RngCore};

use crate::error::PorError;
use crate::field::Field;
use crate::por::{AuditReply, BlockProof, ServerState, StorageServer, TreeId, WriteAck, WriteRequest};
use crate::store::{ByteStore, MemStore};

#[derive(Debug, Clone, PartialEq)]
pub enum Adversary {
    Honest,
    /// Flips one bit in each of `cells` random cells of the stored file and
    /// then answers honestly over the damaged file.
    BitFlip { cells: usize },
    /// Replaces `y` with a uniformly random different vector.
    ForgeUniformY,
    /// Adds random nonzero offsets to `y` at the given positions.
    ForgeSparseY { positions: Vec<usize> },
    /// Adds `z * prod_k (z - a_k)` over `m - 1` distinct nonzero guesses
    /// `a_k`, accepted exactly when a secret is among the guesses. This is
    /// the most any forger can get from one response.
    RootForger,
    /// Answers every request from a copy of the store taken before the
    /// client's latest write.
    StaleStateReplay,
    /// Answers honestly with probability `honest_fraction`, otherwise
    /// forges uniformly.
    Flaky { honest_fraction: f64 },
}

impl Adversary {
    pub fn name(&self) -> String {
        match self {
            Adversary::Honest => "honest".into(),
            Adversary::BitFlip { cells } => format!("bitflip({cells})"),
            Adversary::ForgeUniformY => "forge_uniform_y".into(),
            Adversary::ForgeSparseY { positions } => format!("forge_sparse_y({positions:?})"),
            Adversary::RootForger => "root_forger".into(),
            Adversary::StaleStateReplay => "stale_state_replay".into(),
            Adversary::Flaky { honest_fraction } => format!("flaky({honest_fraction})"),
        }
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, Adversary::Honest)
    }
}

/// Flips one random bit in each of `cells` distinct random cells.
pub fn corrupt_cells<R: RngCore + ?Sized>(server: &mut ServerState, cells: usize, rng: &mut R) -> Result<(), PorError> {
    let layout = *server.layout();
    let c = layout.chunk_bytes as u64;
    let total_cells = layout.n_bytes.div_ceil(c);
    let mut chosen = Vec::with_capacity(cells);
    while chosen.len() < cells.min(total_cells as usize) {
        let idx = rng.gen_range(0..total_cells);
        if !chosen.contains(&idx) {
            chosen.push(idx);
        }
    }
    let store = server.data_store_mut();
    for idx in chosen {
        let width = (layout.n_bytes - idx * c).min(c);
        // Bits below 8*width-1 keep the cell canonical in every field.
        let byte = idx * c + rng.gen_range(0..width);
        let mut b = [0u8; 1];
        store.read_at(byte, &mut b)?;
        b[0] ^= 1 << rng.gen_range(0..7);
        store.write_at(byte, &b)?;
    }
    Ok(())
}

/// A byte-for-byte copy of a store with fresh trees.
pub fn snapshot(server: &ServerState) -> Result<ServerState, PorError> {
    let layout = *server.layout();
    let mut data = vec![0u8; layout.n_bytes as usize];
    server.data_store().read_at(0, &mut data)?;
    let control = match server.control_proof()? {
        Some(p) => Some(Box::new(MemStore::new(p.blocks)) as Box<dyn ByteStore>),
        None => None,
    };
    ServerState::new(layout, Box::new(MemStore::new(data)), control)
}

/// `y' - y` for the root forger: coefficients of `prod_k (z - a_k)`, so the
/// client's check becomes `s * prod_k (s - a_k) = 0`.
pub fn root_forgery<F: Field, R: RngCore + ?Sized>(m: usize, rng: &mut R) -> Vec<F> {
    let mut roots: Vec<F> = Vec::with_capacity(m.saturating_sub(1));
    while roots.len() + 1 < m {
        let a = F::random_nonzero(rng);
        if !roots.contains(&a) {
            roots.push(a);
        }
    }
    let mut poly = vec![F::zero(); m];
    poly[0] = F::one();
    for (deg, a) in roots.iter().enumerate() {
        for k in (1..=deg + 1).rev() {
            poly[k] = poly[k - 1] - *a * poly[k];
        }
        poly[0] = -(*a * poly[0]);
    }
    poly
}

/// Uniform over the whole field.
fn random_element<F: Field, R: RngCore + ?Sized>(rng: &mut R) -> F {
    let q = F::log2_modulus().exp2();
    if rng.gen_bool(1.0 / q) {
        F::zero()
    } else {
        F::random_nonzero(rng)
    }
}

fn uniform_other<F: Field, R: RngCore + ?Sized>(y: &[F], rng: &mut R) -> Vec<F> {
    loop {
        let cand: Vec<F> = y.iter().map(|_| random_element(rng)).collect();
        if cand != y {
            return cand;
        }
    }
}

/// Rewrites `y` according to a message-level adversary.
pub fn forge_response<F: Field, R: RngCore + ?Sized>(adv: &Adversary, y: &mut [F], rng: &mut R) {
    match adv {
        Adversary::ForgeUniformY => {
            let f = uniform_other(y, rng);
            y.copy_from_slice(&f);
        }
        Adversary::ForgeSparseY { positions } => {
            for &p in positions {
                if let Some(v) = y.get_mut(p) {
                    *v += F::random_nonzero(rng);
                }
            }
        }
        Adversary::RootForger => {
            let delta = root_forgery::<F, _>(y.len(), rng);
            for (v, d) in y.iter_mut().zip(delta) {
                *v += d;
            }
        }
        Adversary::Flaky { honest_fraction } => {
            if !rng.gen_bool(honest_fraction.clamp(0.0, 1.0)) {
                let f = uniform_other(y, rng);
                y.copy_from_slice(&f);
            }
        }
        Adversary::Honest | Adversary::BitFlip { .. } | Adversary::StaleStateReplay => {}
    }
}

/// Wraps a store and applies a message-level adversary to audit replies.
pub struct AdversarialServer<'a, R> {
    pub inner: &'a mut ServerState,
    pub stale: Option<ServerState>,
    pub adversary: &'a Adversary,
    pub rng: R,
}

impl<R: RngCore> StorageServer for AdversarialServer<'_, R> {
    fn read_blocks(&mut self, tree: TreeId, blocks: Range<u64>) -> Result<BlockProof, PorError> {
        match &self.stale {
            Some(s) => s.prove_blocks(tree, blocks),
            None => self.inner.prove_blocks(tree, blocks),
        }
    }

    fn write(&mut self, req: &WriteRequest) -> Result<WriteAck, PorError> {
        self.inner.apply_write(req)
    }

    fn audit<F: Field>(&mut self, rho: F) -> Result<AuditReply<F>, PorError> {
        let mut reply = match &self.stale {
            Some(s) => s.compute_audit(rho)?,
            None => self.inner.compute_audit(rho)?,
        };
        forge_response(self.adversary, &mut reply.y, &mut self.rng);
        Ok(reply)
    }
}
