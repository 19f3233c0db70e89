//! The `gen` and `mask` commands, callable without the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use memscope::masklab::{compare_strategies, run_unmasked, write_frames, HarnessConfig, StrategyTable};
use memscope::trace::{episode_file_name, serialize_episode};

use crate::api::strategies_with_baseline;

/// Writes `episodes` unmasked toy episodes seeded `seed..seed + episodes` into
/// `out`, with rendered frames when `frames` is set. Returns the written files.
pub fn generate(
    out: &Path,
    episodes: usize,
    seed: u64,
    frames: bool,
    config: &HarnessConfig,
) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::with_capacity(episodes);
    for s in seed..seed + episodes as u64 {
        let (mut episode, summary) = run_unmasked(s, config)?;
        if frames {
            write_frames(&mut episode, out)?;
        }
        let path = out.join(episode_file_name(&episode.id));
        fs::write(&path, serialize_episode(&episode))?;
        log::info!(
            "{}: {} steps, {} items, {}",
            episode.id,
            summary.steps_survived,
            summary.items_gathered,
            summary.outcome.as_str()
        );
        written.push(path);
    }
    Ok(written)
}

/// Compares `strategies` (plus the full-memory baseline) and optionally writes
/// the table as JSON to `report`.
pub fn mask_report(
    strategies: &[String],
    episodes: usize,
    seed: u64,
    report: Option<&Path>,
    config: &HarnessConfig,
) -> anyhow::Result<StrategyTable> {
    let parsed = strategies_with_baseline(strategies).map_err(|(_, message)| anyhow::anyhow!(message))?;
    let table = compare_strategies(&parsed, episodes, seed, config)?;
    if let Some(path) = report {
        fs::write(path, memscope::canonical::to_vec(&table)?)?;
    }
    Ok(table)
}

/// Plain-text rendering of a strategy table.
pub fn format_table(table: &StrategyTable) -> String {
    let mut out = format!(
        "{:<28} {:>5} {:>10} {:>8} {:>9} {:>9}\n",
        "strategy", "kept", "steps", "items", "health", "vs full"
    );
    for row in &table.rows {
        let relative = row
            .relative_steps_vs_full
            .map_or_else(|| "-".to_string(), |r| format!("{:+.1}%", 100.0 * r));
        out.push_str(&format!(
            "{:<28} {:>5} {:>10.2} {:>8.2} {:>9.2} {:>9}\n",
            row.strategy,
            row.kept_dims,
            row.mean_steps_survived,
            row.mean_items_gathered,
            row.mean_final_health,
            relative
        ));
    }
    out
}
