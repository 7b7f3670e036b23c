//! Writes the bundled sample return series `data/sample_returns.csv`.
//!
//! The series is synthetic: 251 business-day log returns drawn from a
//! Student-t law with 3 degrees of freedom, rescaled to a daily standard
//! deviation of 0.03 around a drift of 0.002. It stands in for a one-year
//! single-stock export with the same `date,return` schema.
//!
//! Usage: `cargo run -p cmlfactor --example sample_returns [-- OUT_PATH]`

use chrono::{Datelike, NaiveDate, Weekday};
use cmlfactor::io::{write_empirical_csv, EmpiricalSeries};
use cmlfactor::seeds::rng_from_seed;
use rand_distr::{Distribution, StudentT};

const SEED: u64 = 20_220_103;
const LEN: usize = 251;
const DOF: f64 = 3.0;
const STD: f64 = 0.03;
const DRIFT: f64 = 0.002;

fn main() -> cmlfactor::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/sample_returns.csv").to_string());
    let mut rng = rng_from_seed(SEED);
    let t = StudentT::new(DOF).expect("valid dof");
    // Var of t(nu) is nu / (nu - 2).
    let scale = STD / (DOF / (DOF - 2.0)).sqrt();

    let mut day = NaiveDate::from_ymd_opt(2022, 1, 3).expect("valid date");
    let mut series = EmpiricalSeries {
        dates: Vec::with_capacity(LEN),
        returns: Vec::with_capacity(LEN),
    };
    while series.returns.len() < LEN {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            series.dates.push(day.format("%Y-%m-%d").to_string());
            let r: f64 = DRIFT + scale * t.sample(&mut rng);
            // 8 significant digits, like a typical export
            series.returns.push(format!("{r:.8}").parse().expect("formatted float"));
        }
        day = day.succ_opt().expect("date in range");
    }
    let file = std::fs::File::create(&out)?;
    write_empirical_csv(file, &series)?;
    eprintln!("wrote {} rows to {out}", series.returns.len());
    Ok(())
}
