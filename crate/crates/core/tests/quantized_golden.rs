//! Raw outputs of the default-format quantized GRU on a fixed model, kept
//! as a regression fixture. Set `UPDATE_GOLDEN=1` to rewrite it.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use merinda::gru::{quantized_forward, ActivationTables, FormatConfig, GruParams, GruState};

#[test]
fn default_formats_match_golden() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let p = GruParams::init(2, 4, &mut rng);
    let xs: Vec<Vec<f64>> = (0..8)
        .map(|t| vec![(t as f64 * 0.4).sin() * 1.5, 0.25 * t as f64 - 1.0])
        .collect();
    let fmts = FormatConfig::default();
    let hs = quantized_forward(
        &p,
        &GruState::zeros(4),
        &xs,
        &fmts,
        &ActivationTables::standard(fmts.activation),
    )
    .unwrap();
    let raws: Vec<Vec<i64>> = hs
        .iter()
        .map(|h| h.iter().map(|v| v.raw()).collect())
        .collect();
    let got = serde_json::to_string_pretty(&raws).unwrap() + "\n";

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_default_formats.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap();
    assert_eq!(got, want);
}
