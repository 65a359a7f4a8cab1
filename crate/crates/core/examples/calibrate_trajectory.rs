//! Bisects the drag coefficient so that a 100 mph, 30° fly ball carries
//! 385.3 ft with the remaining default flight parameters, and prints the
//! resulting distances.
//!
//! cargo run -p bangs-core --example calibrate_trajectory

use bangs_core::trajectory::{carry_distance, FlightParams};

fn main() -> bangs_core::Result<()> {
    let target = 385.3;
    let base = FlightParams::default();
    let dist = |cd: f64| carry_distance(100.0, 30.0, &FlightParams { drag_coefficient: cd, ..base });
    let (mut lo, mut hi) = (0.05, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if dist(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let cd = 0.5 * (lo + hi);
    let p = FlightParams { drag_coefficient: cd, ..base };
    let d100 = carry_distance(100.0, 30.0, &p)?;
    let d102 = carry_distance(102.386, 30.0, &p)?;
    println!("lift coefficient     {}", p.lift_coefficient);
    println!("calibrated drag      {cd:.6}");
    println!("100 mph, 30 deg      {d100:.2} ft");
    println!("102.386 mph, 30 deg  {d102:.2} ft (+{:.2} ft)", d102 - d100);
    let shipped = FlightParams::default();
    println!(
        "shipped drag {} -> {:.2} ft",
        shipped.drag_coefficient,
        carry_distance(100.0, 30.0, &shipped)?
    );
    Ok(())
}
