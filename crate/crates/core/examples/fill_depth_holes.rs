//! Punches holes into a depth frame and fills them from the neighborhood.
//!
//! cargo run --example fill_depth_holes

use depthpose::lifting::{lift_point, CameraIntrinsics, DepthFrame};

fn main() -> depthpose::Result<()> {
    let intrinsics = CameraIntrinsics::centered(365.0, 365.0, 64, 48)?;
    // A tilted plane 2-3 m away.
    let depth: Vec<f32> = (0..48)
        .flat_map(|y| (0..64).map(move |x| 2.0 + 0.01 * x as f32 + 0.005 * y as f32))
        .collect();
    let mut frame = DepthFrame::new(64, 48, depth, intrinsics)?;
    for y in 20..26 {
        for x in 30..36 {
            frame.set(x, y, 0.0);
        }
    }
    for (u, v) in [(10.0, 10.0), (32.0, 22.0), (33.5, 23.5)] {
        let raw = frame.pixel(u, v).and_then(|(x, y)| frame.get(x, y));
        let filled = frame.fill_depth(u, v, 5)?;
        println!("pixel ({u:>4}, {v:>4}): raw {raw:?} -> filled {filled:?}");
        if let Some(z) = filled {
            let p = lift_point(u, v, z, &intrinsics)?;
            println!("    3D point ({:.3}, {:.3}, {:.3})", p.x, p.y, p.z);
        }
    }
    println!(
        "a window entirely inside the hole: {:?}",
        frame.fill_depth(33.0, 23.0, 1)?
    );
    Ok(())
}
