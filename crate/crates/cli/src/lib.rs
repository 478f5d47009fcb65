//! Command implementations behind the `wres` binary. Each command returns
//! its full text output and an exit status; nothing is printed here.

use std::fmt::Write as _;

use wres_core::invariant_forms::{report, Format, Target};
use wres_core::numeric_oracle::{brute_force_residue, eval_density, flat_geometry, random_geometry, relative_error};
use wres_core::{cocycle_density, residue_density, Density, Part, PartSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Text output plus exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub text: String,
    pub status: i32,
}

impl Outcome {
    fn usage(msg: impl Into<String>) -> Outcome {
        Outcome { text: format!("error: {}\n", msg.into()), status: EXIT_USAGE }
    }
}

pub fn parse_target(s: &str) -> Option<Target> {
    Target::parse(s)
}

fn density(target: Target, n: u32) -> anyhow::Result<Density> {
    Ok(match target {
        Target::Part(p) => residue_density(&PartSpec::of(p), n)?,
        Target::Cocycle => cocycle_density(n)?,
    })
}

fn check_dim(n: u32, allowed: &[u32]) -> Result<(), Outcome> {
    if allowed.contains(&n) {
        Ok(())
    } else {
        Err(Outcome::usage(format!("--dim must be one of {:?} for this command", allowed)))
    }
}

pub fn compute(target: Target, n: u32, format: Format) -> anyhow::Result<Outcome> {
    if let Err(o) = check_dim(n, &[4, 6, 8]) {
        return Ok(o);
    }
    let r = report(target, density(target, n)?)?;
    Ok(Outcome { text: r.render(format), status: EXIT_OK })
}

/// Embedded canonical jet expectations.
pub fn golden(target: Target, n: u32) -> Option<&'static str> {
    macro_rules! g {
        ($($t:literal, $n:literal);* $(;)?) => {
            match (target.name(), n) {
                $(($t, $n) => Some(include_str!(concat!("../golden/", $t, "_", $n, ".jets"))),)*
                _ => None,
            }
        };
    }
    g!(
        "i", 4; "i", 6; "i", 8;
        "ii", 4; "ii", 6; "ii", 8;
        "iii", 4; "iii", 6; "iii", 8;
        "iv", 4; "iv", 6; "iv", 8;
        "cocycle", 4; "cocycle", 6; "cocycle", 8;
    )
}

pub fn verify(target: Target, n: u32) -> anyhow::Result<Outcome> {
    if let Err(o) = check_dim(n, &[4, 6, 8]) {
        return Ok(o);
    }
    let d = density(target, n)?;
    let got = d.render_jets();
    let want = golden(target, n).expect("golden present for every supported target");
    let mut text = String::new();
    let pass = got == want;
    writeln!(text, "target: {} dim: {}", target.name(), n)?;
    writeln!(text, "jets vs golden: {}", if pass { "pass" } else { "FAIL" })?;
    if !pass {
        for (k, (a, b)) in got.lines().zip(want.lines()).enumerate() {
            if a != b {
                writeln!(text, "  first difference at line {}: got `{}`, expected `{}`", k + 1, a, b)?;
                break;
            }
        }
        if got.lines().count() != want.lines().count() {
            writeln!(text, "  line counts: got {}, expected {}", got.lines().count(), want.lines().count())?;
        }
    }
    let r = report(target, d)?;
    writeln!(text, "reference comparison (advisory): {} notes", r.discrepancies.len())?;
    for l in &r.discrepancies {
        writeln!(text, "  {}", l)?;
    }
    Ok(Outcome { text, status: if pass { EXIT_OK } else { EXIT_FAIL } })
}

pub fn oracle(target: Target, n: u32, seed: u64, tol: f64) -> anyhow::Result<Outcome> {
    if let Err(o) = check_dim(n, &[4, 6]) {
        return Ok(o);
    }
    let parts: Vec<(Part, f64)> = match target {
        Target::Part(p) => vec![(p, 1.0)],
        Target::Cocycle => Part::ALL.iter().enumerate().map(|(k, &p)| (p, if k % 2 == 0 { 1.0 } else { -1.0 })).collect(),
    };
    let d = density(target, n)?;
    let mut text = String::new();
    let mut worst: f64 = 0.0;
    for (label, geo) in [("curved", random_geometry(n as usize, seed)), ("flat", flat_geometry(n as usize, seed))] {
        let mut brute = 0.0;
        for &(p, sign) in &parts {
            brute += sign * brute_force_residue(&PartSpec::of(p), n as usize, &geo)?;
        }
        let sym = eval_density(&d, &geo)?;
        let err = relative_error(sym, brute);
        worst = worst.max(err);
        writeln!(text, "{} seed {}: symbolic {:.12e} brute-force {:.12e} rel_err {:.3e}", label, seed, sym, brute, err)?;
    }
    let pass = worst <= tol;
    writeln!(text, "max_rel_err {:.3e} {} {:.1e}", worst, if pass { "<=" } else { ">" }, tol)?;
    Ok(Outcome { text, status: if pass { EXIT_OK } else { EXIT_FAIL } })
}
