#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;

use toner::{EntityType, TypeSchema};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Schema with tags `T0..T{k-1}` and display names `type 0..`.
pub fn synthetic_schema(k: usize) -> TypeSchema {
    TypeSchema::new(
        (0..k)
            .map(|i| EntityType::new(format!("T{i}"), format!("type {i}"), format!("things of kind {i}")).unwrap())
            .collect(),
    )
    .unwrap()
}
