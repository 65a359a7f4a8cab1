//! Fits the three models to a synthetic data set and prints the estimates.
//!
//! cargo run --release -p bangs-core --example synthetic_fit -- [pitches] [seed]

use std::time::Instant;

use bangs_core::glmm::{build_design, fit, FitOptions};
use bangs_core::ingest::{clean, load_csv_reader, subset, SchemaConfig, Subset};
use bangs_core::models::{spec_contact, spec_ev, spec_swing};
use bangs_core::synth::{write_csv, SynthConfig};

fn main() -> bangs_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let pitches = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8000);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut buf = Vec::new();
    write_csv(&SynthConfig { pitches, seed, batters: 20, pitchers: 400, ..Default::default() }, &mut buf)?;
    let schema = SchemaConfig::default();
    let (events, _) = clean(&load_csv_reader(buf.as_slice(), &schema)?, &schema)?;
    if let Ok(dir) = std::env::var("SYNTH_DUMP") {
        for (name, which) in [("swing", Subset::Swing), ("contact", Subset::Contact), ("ev", Subset::Ev)] {
            let f = std::fs::File::create(format!("{dir}/{name}.csv")).unwrap();
            bangs_core::ingest::write_events_csv(f, &subset(&events, which, &schema))?;
        }
    }
    for (spec, which) in [(spec_swing(), Subset::Swing), (spec_contact(), Subset::Contact), (spec_ev(), Subset::Ev)] {
        let rows = subset(&events, which, &schema);
        let bundle = build_design(&rows, &spec)?;
        let t = Instant::now();
        let m = fit(&bundle, &spec, &FitOptions::default())?;
        println!("{} n={} time={:.2?} converged={} iters={} |g|={:.2e} ({})", spec.name, bundle.n_obs(), t.elapsed(), m.convergence.converged, m.convergence.iterations, m.convergence.gradient_norm, m.convergence.message);
        for r in m.coefficients() {
            println!("  {:<14} {:>9.4} {:>8.4}", r.term, r.estimate, r.std_error);
        }
        for v in &m.variance_components {
            println!("  sd[{}] {:?} corr {:?}", v.group, v.sd, v.correlation);
        }
        if let Some(s) = m.residual_sd {
            println!("  residual sd {s:.4}");
        }
    }
    Ok(())
}
