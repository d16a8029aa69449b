use super::DcnConfig;
use crate::error::Result;
use crate::tensor::{Bound, Graph, Var};

/// Declared parameter: name, shape, fan-in (0 for zero-initialised biases).
pub(super) type ParamSpec = (String, Vec<usize>, usize);

/// Feature widths by level: full-resolution stem, then the four stages.
pub(super) fn stage_widths(config: &DcnConfig) -> [usize; 5] {
    let w = |f: f64| ((config.base_channels as f64 * config.width_scale * f).round() as usize).max(1);
    [w(1.0), w(1.0), w(2.0), w(4.0), w(8.0)]
}

pub(super) fn declare_conv(
    layout: &mut Vec<ParamSpec>,
    name: &str,
    out_ch: usize,
    in_ch: usize,
    k: usize,
) {
    layout.push((format!("{name}.w"), vec![out_ch, in_ch, k, k], in_ch * k * k));
    layout.push((format!("{name}.b"), vec![out_ch], 0));
}

/// Convolution with padding chosen from the kernel size (3×3 → 1, 1×1 → 0).
pub(super) fn conv(
    g: &mut Graph,
    p: &Bound<'_>,
    name: &str,
    x: Var,
    stride: usize,
    relu: bool,
) -> Result<Var> {
    let w = p.get(&format!("{name}.w"));
    let b = p.get(&format!("{name}.b"));
    let pad = g.shape(w)[2] / 2;
    let y = g.conv2d(x, w, Some(b), stride, pad)?;
    Ok(if relu { g.relu(y) } else { y })
}

pub(super) fn declare_encoder(
    layout: &mut Vec<ParamSpec>,
    prefix: &str,
    in_ch: usize,
    config: &DcnConfig,
) {
    let widths = stage_widths(config);
    declare_conv(layout, &format!("{prefix}.stem"), widths[0], in_ch, 3);
    for s in 0..4 {
        let width = widths[s + 1];
        for j in 0..config.blocks_per_stage {
            let cin = if j == 0 { widths[s] } else { width };
            let name = format!("{prefix}.s{s}.b{j}");
            declare_conv(layout, &format!("{name}.conv1"), width, cin, 3);
            declare_conv(layout, &format!("{name}.conv2"), width, width, 3);
            // first block of every stage downsamples, so it always projects
            if j == 0 {
                declare_conv(layout, &format!("{name}.proj"), width, cin, 1);
            }
        }
    }
}

/// `relu(conv2(relu(conv1(x))) + skip(x))`, where the skip is a strided 1×1
/// projection when present and the identity otherwise.
fn residual_block(g: &mut Graph, p: &Bound<'_>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let h = conv(g, p, &format!("{name}.conv1"), x, stride, true)?;
    let h = conv(g, p, &format!("{name}.conv2"), h, 1, false)?;
    let skip = if p.try_get(&format!("{name}.proj.w")).is_some() {
        conv(g, p, &format!("{name}.proj"), x, stride, false)?
    } else {
        x
    };
    let y = g.add(h, skip)?;
    Ok(g.relu(y))
}

/// Returns features at full, 1/2, 1/4, 1/8 and 1/16 resolution.
pub(super) fn encoder_forward(
    g: &mut Graph,
    p: &Bound<'_>,
    prefix: &str,
    x: Var,
    config: &DcnConfig,
) -> Result<Vec<Var>> {
    let mut feats = Vec::with_capacity(5);
    let mut x = conv(g, p, &format!("{prefix}.stem"), x, 1, true)?;
    feats.push(x);
    for s in 0..4 {
        for j in 0..config.blocks_per_stage {
            let stride = if j == 0 { 2 } else { 1 };
            x = residual_block(g, p, &format!("{prefix}.s{s}.b{j}"), x, stride)?;
        }
        feats.push(x);
    }
    Ok(feats)
}
