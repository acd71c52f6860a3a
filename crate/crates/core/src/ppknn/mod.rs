//! Two-stage k-nearest-neighbor classification over an encrypted database.
//!
//! Four roles take part: the data owner encrypts the table once; the querier
//! encrypts a query and receives the class; cloud C1 stores the encrypted
//! table and drives both stages; cloud C2 holds the secret key and answers
//! C1's sub-protocol requests.
//!
//! Ties are resolved by hidden coins: when several records share the k-th
//! smallest distance, or several classes share the highest count, any of them
//! may be chosen.

mod database;
mod roles;
mod stage1;
mod stage2;

pub use database::{owner_encrypt_db, querier_encrypt_query, DbParams, EncDatabase, EncQuery, EncRecord, DB_MAGIC, DB_VERSION};
pub use roles::{
    classify, fetch_params, query_remote, role_ids, serve_c1, serve_c2, C1Service, C2Service, ClassificationResult, EngineOptions,
    LocalDeployment, StageCost,
};
pub use stage1::Stage1;
pub use stage2::{frequency_bits, majority_class};
