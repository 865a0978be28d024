//! HTTP front end over an artifact store.

pub mod server;
