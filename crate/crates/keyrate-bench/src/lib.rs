//! Shared fixtures for the criterion benchmarks.

use keyrate_core::fr::{build_reduced_model, ReducedModel};
use keyrate_core::protocols::ProtocolParams;

/// Reduced models for the benchmark instances, built once.
pub fn bench_models() -> Vec<(&'static str, ReducedModel)> {
    vec![
        ("ebBB84", model(ProtocolParams::EbBB84 { p_z: 0.5, q: 0.05 })),
        ("pmBB84", model(ProtocolParams::PmBB84 { p_z: 0.5, q: 0.05 })),
        ("mdiBB84", model(ProtocolParams::MdiBB84 { p_z: 0.5, p: 0.05 })),
        ("TFQKD", model(ProtocolParams::Tfqkd { q: 0.8, l_km: 100.0, p_x: 0.7 })),
    ]
}

pub fn model(params: ProtocolParams) -> ReducedModel {
    let gen = params.generate().expect("generate");
    build_reduced_model(&gen.instance, 1e-10).expect("facial reduction")
}
