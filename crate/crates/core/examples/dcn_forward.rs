//! Builds both depth-net layouts and runs one forward pass.

use depthnet::dcn::{dcn_param_count, DcnConfig, DcnParams, DUAL_CHANNELS, RGBD_CHANNELS};
use depthnet::tensor::Tensor;

fn main() -> depthnet::Result<()> {
    let dual = DcnConfig::default();
    let single = dual.matched_single_pathway();
    println!("dual pathway:   {} parameters", dcn_param_count(&dual));
    println!("single pathway: {} parameters (width x{:.2})", dcn_param_count(&single), single.width_scale);

    let (h, w) = (64, 96);
    let net = DcnParams::new(DcnConfig::tiny(), 0)?;
    let out = net.predict(&Tensor::zeros([DUAL_CHANNELS, h, w]), &Tensor::zeros([RGBD_CHANNELS, h, w]))?;
    println!("output shape {:?}", out.shape());

    let err = net.predict(&Tensor::zeros([DUAL_CHANNELS, 50, w]), &Tensor::zeros([RGBD_CHANNELS, 50, w]));
    println!("50 rows: {}", err.unwrap_err());
    Ok(())
}
