pub mod analyze;
pub mod eval;
pub mod merge;
pub mod select;
pub mod serve;
pub mod train_config;

/// Splits `NAME=VALUE`.
pub fn split_assignment(raw: &str) -> anyhow::Result<(&str, &str)> {
    raw.split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| anyhow::anyhow!("expected NAME=VALUE, got `{raw}`"))
}
