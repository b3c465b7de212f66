//! HTTP service for the masqrad engine.

pub mod service;
