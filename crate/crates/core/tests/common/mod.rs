//! Shared fixtures for integration tests (filled in as the suite grows).
