//! Matched training runs comparing depth, skip wiring and the stride-3
//! bottleneck. Every run in a set shares data, initialisation seed and
//! optimiser settings; only the architecture differs.

use rednet::{RedNetConfig, SkipStyle};

use crate::CliError;

/// Patch side for the stride-3 bottleneck: five stride-3 layers take 243 to 1.
pub const BOTTLENECK_PATCH: usize = 243;

pub const VARIANTS: &str = "depth[-N], depth-noskip[-N], depth-skip[-N], block-B, he-block-B, red-block-B, bottleneck-stride3 \
(N is the total layer count: 10, 20 or 30; B is the block size)";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub name: String,
    pub model: RedNetConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub runs: Vec<AblationRun>,
    /// Patch side the runs require, when it differs from the data section.
    pub patch_size: Option<usize>,
}

fn unknown(variant: &str) -> CliError {
    CliError::Usage(format!("unknown ablation variant {variant:?}; valid variants: {VARIANTS}"))
}

fn depth_run(base: &RedNetConfig, total: usize, skips: bool) -> AblationRun {
    AblationRun {
        name: format!("{}-{total}", if skips { "skip" } else { "noskip" }),
        model: RedNetConfig {
            conv_layers: total / 2,
            skip_style: if skips { SkipStyle::Mirrored } else { SkipStyle::None },
            kernel: 3,
            stride: 1,
            padding: 1,
            ..base.clone()
        },
    }
}

fn depths(rest: &str, variant: &str, allowed: &[usize]) -> Result<Vec<usize>, CliError> {
    if rest.is_empty() {
        return Ok(allowed.to_vec());
    }
    let n: usize = rest.strip_prefix('-').and_then(|s| s.parse().ok()).ok_or_else(|| unknown(variant))?;
    if allowed.contains(&n) {
        Ok(vec![n])
    } else {
        Err(unknown(variant))
    }
}

fn block_size(s: &str, variant: &str) -> Result<usize, CliError> {
    s.parse().ok().filter(|&b| b >= 1).ok_or_else(|| unknown(variant))
}

/// Expands `variant` against the width and depth of `base`.
pub fn plan(variant: &str, base: &RedNetConfig) -> Result<AblationPlan, CliError> {
    let mut runs = Vec::new();
    let mut patch_size = None;
    if let Some(rest) = variant.strip_prefix("depth-noskip") {
        for n in depths(rest, variant, &[10, 20, 30])? {
            runs.push(depth_run(base, n, false));
        }
    } else if let Some(rest) = variant.strip_prefix("depth-skip") {
        for n in depths(rest, variant, &[20, 30])? {
            runs.push(depth_run(base, n, true));
        }
    } else if let Some(rest) = variant.strip_prefix("depth") {
        let ns = depths(rest, variant, &[10, 20, 30])?;
        for &n in &ns {
            runs.push(depth_run(base, n, false));
        }
        for &n in ns.iter().filter(|&&n| n > 10) {
            runs.push(depth_run(base, n, true));
        }
    } else if let Some(b) = variant.strip_prefix("he-block-") {
        runs.push(he_block(base, block_size(b, variant)?));
    } else if let Some(b) = variant.strip_prefix("red-block-") {
        runs.push(red_block(base, block_size(b, variant)?));
    } else if let Some(b) = variant.strip_prefix("block-") {
        let b = block_size(b, variant)?;
        runs.push(he_block(base, b));
        runs.push(red_block(base, b));
    } else if variant == "bottleneck-stride3" {
        for skips in [false, true] {
            runs.push(AblationRun {
                name: format!("bottleneck-{}", if skips { "skip" } else { "noskip" }),
                model: RedNetConfig {
                    global_input_skip: base.global_input_skip,
                    ..RedNetConfig::bottleneck_stride3(base.feature_width, skips)
                },
            });
        }
        patch_size = Some(BOTTLENECK_PATCH);
    } else {
        return Err(unknown(variant));
    }
    for r in &runs {
        r.model.validate()?;
    }
    Ok(AblationPlan { runs, patch_size })
}

fn he_block(base: &RedNetConfig, b: usize) -> AblationRun {
    AblationRun {
        name: format!("he-block-{b}"),
        model: RedNetConfig {
            skip_style: SkipStyle::Sequential { block: b },
            ..base.clone()
        },
    }
}

fn red_block(base: &RedNetConfig, b: usize) -> AblationRun {
    AblationRun {
        name: format!("red-block-{b}"),
        model: RedNetConfig {
            skip_style: SkipStyle::Mirrored,
            skip_step: b,
            ..base.clone()
        },
    }
}
