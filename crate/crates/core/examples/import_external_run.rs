//! Bring a run produced elsewhere into a task: write a CSV in the run
//! format, import it under a chosen domain and label, and window it.

use hdfd::cstr::{self, CstrParams, FaultId, FaultSpec, ModeId, ModeSpec};
use hdfd::datasets::{import_external_csv, window_run};

fn main() -> hdfd::Result<()> {
    let p = CstrParams::default();
    let run = cstr::simulate(&p, &ModeSpec::new(&p, ModeId::M2), &FaultSpec::table(FaultId::F6), 3)?;
    let path = std::env::temp_dir().join("hdfd-external").join("plant_log.csv");
    cstr::export_run(&run, &path)?;

    // Only the CSV is used: domain, label and onset come from the caller.
    let ext = import_external_csv(&path, "M2", "F6", 200)?;
    println!("{} rows x {} variables: {:?}", ext.n_samples(), ext.n_vars(), ext.variables);
    println!("bit-identical to the source run: {}", ext.measurements == run.measurements);

    let windows = window_run(&ext, 16, "H")?;
    let faulty = windows.iter().filter(|w| w.label == "F6").count();
    println!("{} windows: {} healthy lead-in, {faulty} labelled F6", windows.len(), windows.len() - faulty);

    let e = import_external_csv(&std::env::temp_dir().join("hdfd-external/missing.csv"), "M2", "F6", 200).unwrap_err();
    println!("missing file -> exit code {}: {e}", e.exit_code());
    Ok(())
}
