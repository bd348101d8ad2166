//! CLI harness library (placeholder).
