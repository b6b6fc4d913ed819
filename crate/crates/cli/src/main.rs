//! `qlink`: run link budgets, lock simulations, fringe scans, HOM runs,
//! calibration fits, campaigns and reference comparisons from scenario
//! files or bundled presets.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use qlink_core::analysis::{hom_indistinguishability, Quantity};
use qlink_core::budget::{plob_crossing, scaling_fit, Detector};
use qlink_core::protocol::{
    conditional_g2, g2_records, hom_experiment, run_campaign_with_data, summarize_detector, G2Conditioning, G2Setup,
    HomField, HomRun, Output,
};
use qlink_core::reference::reference_cells;
use qlink_core::report::{self, CellStatus, HOM_INPUTS};
use qlink_core::scenario::{bundled_presets, echo_scenario, parse_scenario, preset};
use qlink_core::{Scenario, Simulator};

/// Mean photon number per trial used for HOM runs.
const HOM_MEAN_PHOTON: f64 = 0.05;
const HOM_TRIALS: u64 = 10_000_000;
const G2_TRIALS: u64 = 10_000_000;
/// Lock trajectory rows are thinned to this stride on output.
const LOCK_CSV_STRIDE: usize = 100;

#[derive(Parser)]
#[command(name = "qlink", version, about = "Heralded two-memory entanglement link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file; repeat for several. Without any scenario or preset
    /// every bundled preset is used.
    #[arg(long, global = true)]
    scenario: Vec<PathBuf>,
    /// Bundled preset name; repeatable.
    #[arg(long, global = true)]
    preset: Vec<String>,
    /// Override the protocol and lock seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the trials per analyzer phase (and the HOM/g2 trial count).
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "QLINK_OUT_DIR", default_value = "qlink-out")]
    out: PathBuf,
    /// Multiply every comparison tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tolerance_scale: f64,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Link and visibility budgets.
    Budget,
    /// Phase-lock loop simulation.
    Lock,
    /// Fringe scan of each scenario.
    Simulate {
        /// Also stream every trial record as one JSON line.
        #[arg(long)]
        records: bool,
    },
    /// HOM interference and heralded autocorrelation.
    Hom,
    /// Calibration fits and fringe fits.
    Fit,
    /// All scenarios, one Table 1 row each.
    Campaign,
    /// Campaign plus closed-form checks against the bundled reference table.
    Compare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Budget => "budget",
            Command::Lock => "lock",
            Command::Simulate { .. } => "simulate",
            Command::Hom => "hom",
            Command::Fit => "fit",
            Command::Campaign => "campaign",
            Command::Compare => "compare",
        }
    }
}

/// Output directory writer that remembers what it wrote.
struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
}

impl Bundle {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(name.to_string());
        Ok(BufWriter::new(
            File::create(&path).with_context(|| format!("writing {}", path.display()))?,
        ))
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> qlink_core::Result<()>) -> Result<()> {
        let mut w = self.create(name)?;
        f(&mut w).with_context(|| format!("writing {name}"))?;
        w.flush()?;
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

fn load_scenarios(cli: &Cli) -> Result<Vec<Scenario>> {
    let mut out = Vec::new();
    for path in &cli.scenario {
        out.push(
            parse_scenario(path)
                .with_context(|| format!("loading {}", path.display()))?
                .scenario,
        );
    }
    for name in &cli.preset {
        out.push(preset(name)?);
    }
    if out.is_empty() {
        out = bundled_presets()?;
    }
    for s in &mut out {
        if let Some(seed) = cli.seed {
            s.protocol.seed = seed;
            if let Some(l) = s.lock.as_mut() {
                l.seed = seed;
            }
        }
        if let Some(n) = cli.trials {
            s.protocol.n_trials_per_theta = n;
        }
    }
    let mut names: Vec<&str> = out.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        bail!("scenario names must be unique; got {}", names.join(", "));
    }
    Ok(out)
}

/// Scenarios with at least one trial, validated.
fn runnable(scenarios: &[Scenario]) -> Result<Vec<Scenario>> {
    let v: Vec<Scenario> = scenarios
        .iter()
        .filter(|s| s.protocol.n_trials_per_theta > 0)
        .cloned()
        .collect();
    for s in &v {
        s.validate().with_context(|| format!("scenario {}", s.name))?;
    }
    Ok(v)
}

fn budget(b: &mut Bundle, scenarios: &[Scenario]) -> Result<Value> {
    b.write("herald_stats.csv", |w| report::write_herald_stats_csv(w, scenarios))?;
    b.write("link_budget.csv", |w| report::write_link_budget_csv(w, scenarios))?;
    let mut rows = Vec::new();
    for s in scenarios {
        rows.extend(report::scenario_budget(s).with_context(|| format!("budget of {}", s.name))?);
    }
    b.write("budget.csv", |w| report::write_budget_csv(w, &rows))?;
    for r in &rows {
        println!(
            "{:>8} {:<9} V_theory = {:.4}",
            r.scenario, r.state, r.budget.v_theory.value
        );
    }
    Ok(serde_json::to_value(&rows)?)
}

fn lock(b: &mut Bundle, scenarios: &[Scenario]) -> Result<Value> {
    let mut out = serde_json::Map::new();
    let mut table = String::from("scenario,residual_rms_deg,v_p,relock_count,dead_fraction\n");
    for s in scenarios.iter().filter(|s| s.lock.is_some()) {
        let (traj, sum) = report::run_lock(s).with_context(|| format!("lock of {}", s.name))?;
        b.write(&format!("lock_{}.csv", s.name), |w| {
            report::write_lock_csv(w, &traj, LOCK_CSV_STRIDE)
        })?;
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            s.name, sum.residual_rms_deg, sum.v_p, sum.relock_count, sum.dead_fraction
        ));
        println!(
            "{:>8} rms {:.2} deg  V_P {:.4}  relocks {}",
            s.name, sum.residual_rms_deg, sum.v_p, sum.relock_count
        );
        out.insert(s.name.clone(), serde_json::to_value(sum)?);
    }
    b.text("lock.csv", &table)?;
    Ok(Value::Object(out))
}

fn simulate(b: &mut Bundle, scenarios: &[Scenario], records: bool) -> Result<Value> {
    let mut out = serde_json::Map::new();
    for s in &runnable(scenarios)? {
        let sim = Simulator::new(s)?;
        let data = sim.run_fringe_scan();
        b.write(&format!("fringe_{}.csv", s.name), |w| {
            report::write_fringe_csv(w, &data)
        })?;
        if records {
            let mut w = b.create(&format!("records_{}.jsonl", s.name))?;
            for i in 0..s.protocol.theta_list.len() {
                for r in sim.trial_records(i)? {
                    serde_json::to_writer(&mut w, &r)?;
                    w.write_all(b"\n")?;
                }
            }
            w.flush()?;
        }
        let mut det = serde_json::Map::new();
        for d in Detector::BOTH {
            let v = match summarize_detector(s, &data, d) {
                Ok(sum) => {
                    println!(
                        "{:>8} {} heralds {:>7}  V {:.3} ± {:.3}  C {:.4} ± {:.4}",
                        s.name,
                        d.label(),
                        sum.heralds,
                        sum.visibility.value,
                        sum.visibility.sigma,
                        sum.concurrence.c,
                        sum.concurrence.sigma_c
                    );
                    serde_json::to_value(sum)?
                }
                Err(e) => {
                    println!("{:>8} {} {}", s.name, d.label(), e);
                    json!({ "heralds": data.heralds(d), "error": e.to_string() })
                }
            };
            det.insert(d.label().to_string(), v);
        }
        out.insert(
            s.name.clone(),
            json!({ "herald_rate": data.herald_rate(), "detectors": Value::Object(det) }),
        );
    }
    Ok(Value::Object(out))
}

fn hom(b: &mut Bundle, scenarios: &[Scenario], trials: Option<u64>) -> Result<Value> {
    let mut table = String::from(
        "scenario,field,g2_a,g2_b,eta_config,g2_hom,g2_hom_sigma,closed_form,eta_inferred,eta_inferred_sigma\n",
    );
    let mut out = serde_json::Map::new();
    for s in scenarios {
        let mut rows = Vec::new();
        for (field, g) in [(HomField::WriteOut, HOM_INPUTS[0]), (HomField::ReadOut, HOM_INPUTS[1])] {
            let run = HomRun {
                field,
                g2_a: g[0].value,
                g2_b: g[1].value,
                zeta: 1.0,
                mean_photon: HOM_MEAN_PHOTON,
                trials: trials.unwrap_or(HOM_TRIALS),
            };
            let o = hom_experiment(s, &run).with_context(|| format!("HOM run of {}", s.name))?;
            let inv = hom_indistinguishability(g[0], g[1], o.g2_hom, 1.0)?;
            let label = match field {
                HomField::WriteOut => "write-out",
                HomField::ReadOut => "read-out",
            };
            table.push_str(&format!(
                "{},{label},{},{},{},{},{},{},{},{}\n",
                s.name,
                run.g2_a,
                run.g2_b,
                o.eta,
                o.g2_hom.value,
                o.g2_hom.sigma,
                o.closed_form,
                inv.eta.value,
                inv.eta.sigma
            ));
            println!(
                "{:>8} {label:<9} g2_HOM {:.4} ± {:.4} (closed form {:.4})  eta {:.3}",
                s.name, o.g2_hom.value, o.g2_hom.sigma, o.closed_form, inv.eta.value
            );
            rows.push(json!({ "field": label, "run": run, "outcome": o, "eta_inferred": inv }));
        }
        out.insert(s.name.clone(), Value::Array(rows));
    }
    b.text("hom.csv", &table)?;
    let setup = G2Setup::calibrated();
    let seed = scenarios
        .first()
        .map_or(qlink_core::protocol::DEFAULT_SEED, |s| s.protocol.seed);
    let records = g2_records(&setup, trials.unwrap_or(G2_TRIALS), seed)?;
    let mut g2 = String::from("conditioning,g2,sigma\n");
    let mut g2_json = serde_json::Map::new();
    for (c, label) in [
        (G2Conditioning::WriteOnRead, "write-on-read"),
        (G2Conditioning::ReadOnWrite, "read-on-write"),
    ] {
        let q = conditional_g2(records.iter().copied(), c)?;
        g2.push_str(&format!("{label},{},{}\n", q.value, q.sigma));
        println!("g2 {label:<13} {:.4} ± {:.4}", q.value, q.sigma);
        g2_json.insert(label.into(), serde_json::to_value(q)?);
    }
    b.text("g2.csv", &g2)?;
    Ok(json!({ "hom": Value::Object(out), "g2": { "setup": setup, "seed": seed, "values": Value::Object(g2_json) } }))
}

fn fit(b: &mut Bundle, scenarios: &[Scenario]) -> Result<Value> {
    let cal = report::calibrate()?;
    let env = report::fig2c_fit()?;
    let cells = reference_cells()?;
    let mut points = Vec::new();
    for c in cells
        .iter()
        .filter(|c| c.table == "table1" && c.column == "fiber_loss_db")
    {
        let p = cells
            .iter()
            .find(|x| x.table == "table1" && x.row == c.row && x.column == "p_ent")
            .map(|x| x.value);
        if let Some(p) = p {
            points.push((10f64.powf(-c.value / 10.0), p));
        }
    }
    let scaling = scaling_fit(&points)?;
    let crossing = plob_crossing(&scaling, 1e-9)?;
    let mut table = String::from("quantity,value,sigma\n");
    for (k, q) in [
        ("kappa", Quantity::exact(cal.kappa)),
        ("tau_s", Quantity::exact(cal.tau)),
        ("eta_wo", cal.eta_wo),
        ("eta_ro", cal.eta_ro),
        ("v_i", cal.v_i),
        ("delta_k_per_cm", Quantity::exact(env.delta_k / 100.0)),
        ("delta_nu_hz", Quantity::exact(env.delta_nu)),
        ("scaling_slope", Quantity::exact(scaling.slope)),
        ("scaling_intercept", Quantity::exact(scaling.intercept)),
        ("plob_crossing_eta", Quantity::exact(crossing)),
    ] {
        table.push_str(&format!("{k},{},{}\n", q.value, q.sigma));
        println!("{k:<18} {:.6e}", q.value);
    }
    b.text("calibration.csv", &table)?;
    let mut fits = String::from("scenario,detector,output,visibility,visibility_sigma,phase,offset\n");
    let mut out = serde_json::Map::new();
    for s in &runnable(scenarios)? {
        let data = Simulator::new(s)?.run_fringe_scan();
        let mut per = Vec::new();
        for d in Detector::BOTH {
            for (o, label) in [(Output::E, "E"), (Output::F, "F")] {
                match data.fit(d, o) {
                    Ok(f) => {
                        fits.push_str(&format!(
                            "{},{},{label},{},{},{},{}\n",
                            s.name,
                            d.label(),
                            f.visibility,
                            f.visibility_sigma,
                            f.phase,
                            f.offset
                        ));
                        per.push(json!({ "detector": d.label(), "output": label, "fit": f }));
                    }
                    Err(e) => {
                        fits.push_str(&format!("{},{},{label},,,,\n", s.name, d.label()));
                        per.push(json!({ "detector": d.label(), "output": label, "error": e.to_string() }));
                    }
                }
            }
        }
        out.insert(s.name.clone(), Value::Array(per));
    }
    b.text("fits.csv", &fits)?;
    Ok(json!({
        "calibration": cal,
        "envelope": env,
        "scaling": scaling,
        "plob_crossing_eta": crossing,
        "fringe_fits": Value::Object(out),
    }))
}

fn campaign(b: &mut Bundle, scenarios: &[Scenario]) -> Result<Vec<qlink_core::protocol::CampaignRow>> {
    let runs = run_campaign_with_data(scenarios)?;
    let rows: Vec<_> = runs.iter().map(|(r, _)| r.clone()).collect();
    b.write("campaign.csv", |w| report::write_campaign_csv(w, &rows))?;
    for (r, data) in &runs {
        b.write(&format!("fringe_{}.csv", r.preset), |w| {
            report::write_fringe_csv(w, data)
        })?;
        println!(
            "{:>8} loss {:>5.1} dB  p_ent {:.3e} (analytic {:.3e})  C+ {:.4}  C- {:.4}",
            r.preset,
            r.fiber_loss_db,
            r.p_ent_mc.value,
            r.p_ent_analytic,
            r.detectors[0].concurrence.c,
            r.detectors[1].concurrence.c
        );
    }
    Ok(rows)
}

fn compare(b: &mut Bundle, scenarios: &[Scenario], scale: f64) -> Result<(Value, bool)> {
    let rows = campaign(b, scenarios)?;
    let mut obs = report::campaign_observations(&rows);
    obs.extend(report::formula_observations()?);
    obs.extend(report::lock_observations(scenarios)?);
    let cmp = report::compare(&obs, scale)?;
    b.write("comparison.csv", |w| report::write_comparison_csv(w, &cmp))?;
    for r in cmp
        .rows
        .iter()
        .filter(|r| matches!(r.status, CellStatus::Fail | CellStatus::Info))
    {
        println!(
            "{:<5} {}/{}/{}: reference {} observed {} (bound {})",
            r.status.label(),
            r.table,
            r.row,
            r.column,
            r.reference,
            r.observed.map_or("-".into(), |v| format!("{v:.6}")),
            r.bound.map_or("-".into(), |v| format!("{v:.6}"))
        );
    }
    println!(
        "compare: {} pass, {} fail, {} info, {} skipped (tolerance scale {})",
        cmp.count(CellStatus::Pass),
        cmp.count(CellStatus::Fail),
        cmp.count(CellStatus::Info),
        cmp.count(CellStatus::Skipped),
        scale
    );
    let passed = cmp.passed();
    Ok((json!({ "campaign": rows, "comparison": cmp }), passed))
}

fn run(cli: &Cli) -> Result<bool> {
    if cli.tolerance_scale <= 0.0 || !cli.tolerance_scale.is_finite() {
        bail!("--tolerance-scale must be positive");
    }
    let scenarios = load_scenarios(cli)?;
    let mut b = Bundle::new(&cli.out)?;
    for s in &scenarios {
        b.text(&format!("scenarios/{}.toml", s.name), &echo_scenario(s)?)?;
    }
    let mut ok = true;
    let results = match cli.command {
        Command::Budget => budget(&mut b, &scenarios)?,
        Command::Lock => lock(&mut b, &scenarios)?,
        Command::Simulate { records } => simulate(&mut b, &scenarios, records)?,
        Command::Hom => hom(&mut b, &scenarios, cli.trials)?,
        Command::Fit => fit(&mut b, &scenarios)?,
        Command::Campaign => serde_json::to_value(campaign(&mut b, &scenarios)?)?,
        Command::Compare => {
            let (v, passed) = compare(&mut b, &scenarios, cli.tolerance_scale)?;
            ok = passed;
            v
        }
    };
    let results = json!({ "files": b.files.clone(), "output": results });
    let summary = report::summary_document(cli.command.name(), &scenarios, results)?;
    b.text("summary.json", &summary)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
