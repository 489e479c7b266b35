//! Closed-loop CSTR: steady states of the three modes, one faulty run, and
//! its CSV export.
//!
//! cargo run --example cstr_simulation -- [FAULT] [OUT_DIR]

use hdfd::cstr::{self, CstrParams, FaultId, FaultSpec, ModeId, ModeSpec, STABILITY_THRESHOLD, STABILITY_WINDOW_MIN};

fn main() -> hdfd::Result<()> {
    let mut args = std::env::args().skip(1);
    let fault: FaultId = args.next().as_deref().unwrap_or("F2").parse()?;
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("hdfd-runs").display().to_string());
    let p = CstrParams::default();

    println!("mode  setpoint        C         T       T_c      Q_c");
    for m in ModeId::ALL {
        let mode = ModeSpec::new(&p, m);
        let [c, t, tc, qc] = cstr::steady_state(&p, &mode)?;
        println!("{m}    {:8.2} {c:8.5} {t:9.4} {tc:9.4} {qc:8.4}", mode.temp_setpoint);
    }

    let spec = FaultSpec::table(fault);
    let run = cstr::simulate(&p, &ModeSpec::new(&p, ModeId::M1), &spec, 7)?;
    let t = run.column_by_name("T").unwrap();
    let pre = &t[..run.onset_index];
    println!(
        "\n{fault} in M1: {} samples, onset at sample {}, T before onset stable: {}",
        run.n_samples(),
        run.onset_index,
        cstr::check_mode_stability(&pre[pre.len() - STABILITY_WINDOW_MIN..], 0.5, STABILITY_WINDOW_MIN)?,
    );
    for name in &run.variables {
        let x = run.column_by_name(name).unwrap();
        let before = x[..run.onset_index].iter().sum::<f64>() / run.onset_index as f64;
        let end = x[x.len() - 60..].iter().sum::<f64>() / 60.0;
        println!("  {name:<5} mean before onset {before:11.5}   last hour {end:11.5}");
    }

    // The noiseless loop is flat to well under the stability threshold.
    let quiet = p.noiseless();
    let h = cstr::simulate(&quiet, &ModeSpec::new(&quiet, ModeId::M3), &FaultSpec::healthy(), 0)?;
    let stable = cstr::stable_everywhere(&h.column_by_name("T").unwrap(), STABILITY_THRESHOLD, STABILITY_WINDOW_MIN)?;
    println!("\nnoiseless healthy M3 stable over every {STABILITY_WINDOW_MIN}-min window: {stable}");

    let path = std::path::Path::new(&out).join(format!("M1_{fault}_s7.csv"));
    cstr::export_run(&run, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
