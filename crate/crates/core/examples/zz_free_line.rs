//! ZZ-free coupler frequencies across the qubit band and the effective
//! exchange coupling that remains at each solution.

use anyhow::Result;
use qfreq::harness::zz_scan;
use qfreq::sim::{g_xy_eff, PhysicalParams};

fn main() -> Result<()> {
    let params = PhysicalParams::default();
    println!("{:>8} {:>8} {:>10} {:>12} {:>12}", "w_q0", "w_q1", "w_c", "ZZ (kHz)", "g_xy (MHz)");
    for row in zz_scan(&params, 5) {
        match (row.omega_c, row.g_zz_khz) {
            (Some(wc), Some(zz)) => {
                let gxy = g_xy_eff(row.omega_q0, row.omega_q1, wc, &params)?;
                println!("{:>8.3} {:>8.3} {:>10.4} {:>12.2e} {:>12.3}", row.omega_q0, row.omega_q1, wc, zz, gxy * 1e3);
            }
            _ => println!("{:>8.3} {:>8.3} {:>10}", row.omega_q0, row.omega_q1, "none"),
        }
    }
    Ok(())
}
