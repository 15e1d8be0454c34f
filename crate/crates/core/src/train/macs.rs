use crate::error::{Error, Result};
use crate::model::EncoderConfig;

/// Multiply-accumulates of one tower on one length-`n` sequence:
/// `n_layers · (4·n·d² + 2·n²·d + 2·n·d·d_ffn)`.
pub fn tower_macs(cfg: &EncoderConfig, n: usize) -> f64 {
    let (l, d, f, n) = (
        cfg.n_layers as f64,
        cfg.d as f64,
        cfg.d_ffn as f64,
        n as f64,
    );
    l * (4.0 * n * d * d + 2.0 * n * n * d + 2.0 * n * d * f)
}

/// Inference cost in GMAC for `n_towers` towers, and efficiency
/// `η = score / GMAC`.
pub fn macs_and_eta(
    cfg: &EncoderConfig,
    n_towers: usize,
    seq_len: usize,
    score: f64,
) -> Result<(f64, f64)> {
    if !(0.0..=100.0).contains(&score) {
        return Err(Error::Config(format!("score {score} outside [0, 100]")));
    }
    if n_towers == 0 || seq_len == 0 {
        return Err(Error::Config(
            "n_towers and seq_len must be positive".into(),
        ));
    }
    let gmac = n_towers as f64 * (tower_macs(cfg, seq_len) / 1e9);
    Ok((gmac, score / gmac))
}
