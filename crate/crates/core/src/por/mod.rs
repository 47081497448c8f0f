//! The private-verifier protocol: a client holding secret evaluation points
//! and a control matrix audits a server storing the unencoded file.

pub mod client;
pub mod control;
pub mod extract;
pub mod server;
pub mod state;
pub mod transcript;

pub use client::{sample_secrets, AuditOutcome, ClientControl, ClientState};
pub use extract::{extract_file, ExtractShape};
pub use server::{
    AuditReply, BlockProof, ServerState, StorageServer, StoreLayout, StreamingIngest, TreeId,
    WriteAck, WriteRequest,
};
pub use transcript::{AuditTranscript, Verdict};

use rand::{CryptoRng, RngCore};

use crate::error::PorError;
use crate::field::Field;
use crate::params::PorParams;
use crate::store::{ByteStore, MemStore};

/// Preprocesses `data` and hands it to a fresh in-process server.
pub fn init_local<F: Field, R: RngCore + CryptoRng>(
    params: PorParams,
    data: Box<dyn ByteStore>,
    rng: &mut R,
) -> Result<(ClientState<F>, ServerState), PorError> {
    let (client, blob) = ClientState::<F>::init(params, data.as_ref(), rng)?;
    let control = blob.map(|b| Box::new(MemStore::new(b)) as Box<dyn ByteStore>);
    let server = ServerState::new(client.layout(), data, control)?;
    Ok((client, server))
}
