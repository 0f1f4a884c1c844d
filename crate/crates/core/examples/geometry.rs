//! Rotated-box overlap and rotation interpolation.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use asap_stream::geom::{bev_iou, slerp, BevRect, Quaternion};

fn main() -> asap_stream::Result<()> {
    let a = BevRect::new(0.0, 0.0, 2.0, 4.0, 0.0)?;
    for yaw in [0.0, FRAC_PI_4, FRAC_PI_2] {
        let b = BevRect::new(0.5, 0.0, 2.0, 4.0, yaw)?;
        println!("yaw {yaw:.3} rad -> BEV IoU {:.4}", bev_iou(&a, &b));
    }

    let q0 = Quaternion::from_yaw(0.0);
    let q1 = Quaternion::from_yaw(FRAC_PI_2);
    for u in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("slerp u={u:.2} -> yaw {:.4} rad", slerp(q0, q1, u)?.yaw());
    }
    Ok(())
}
