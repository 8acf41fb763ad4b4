use std::path::PathBuf;

use clap::Args;
use tvmerge_core::lab::ConflictStats;
use tvmerge_core::merge::check_structure;
use tvmerge_core::open_checkpoint;
use tvmerge_core::store::read_tensor;

use crate::error::CliError;

#[derive(Debug, Args)]
pub struct DiffArgs {
    #[arg(long)]
    base: PathBuf,
    /// Expert checkpoint; repeat to compare several experts.
    #[arg(long = "expert", required = true)]
    experts: Vec<PathBuf>,
    /// Entries with |delta| above this count as nonzero.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Print a row per tensor in addition to the per-expert totals.
    #[arg(long)]
    stats: bool,
}

#[derive(Debug, Default, Clone, Copy)]
struct DeltaStats {
    numel: u64,
    sum_sq: f64,
    nonzero: u64,
    positive: u64,
    negative: u64,
}

impl DeltaStats {
    fn observe(&mut self, delta: &[f32], threshold: f64) {
        self.numel += delta.len() as u64;
        for &d in delta {
            let d = d as f64;
            self.sum_sq += d * d;
            if d.abs() > threshold {
                self.nonzero += 1;
            }
            if d > 0.0 {
                self.positive += 1;
            } else if d < 0.0 {
                self.negative += 1;
            }
        }
    }

    fn add(&mut self, o: &DeltaStats) {
        self.numel += o.numel;
        self.sum_sq += o.sum_sq;
        self.nonzero += o.nonzero;
        self.positive += o.positive;
        self.negative += o.negative;
    }

    /// `(positive - negative) / (positive + negative)`; 0 for an all-zero delta.
    fn sign_balance(&self) -> f64 {
        let signed = self.positive + self.negative;
        if signed == 0 {
            0.0
        } else {
            (self.positive as f64 - self.negative as f64) / signed as f64
        }
    }

    fn row(&self, expert: &str, tensor: &str) -> String {
        let frac = if self.numel == 0 { 0.0 } else { self.nonzero as f64 / self.numel as f64 };
        format!(
            "{expert}\t{tensor}\t{}\t{:.6e}\t{frac:.6}\t{:.6}",
            self.numel,
            self.sum_sq.sqrt(),
            self.sign_balance()
        )
    }
}

pub fn run(args: DiffArgs) -> Result<(), CliError> {
    let base = open_checkpoint(&args.base)?;
    let experts = args.experts.iter().map(open_checkpoint).collect::<Result<Vec<_>, _>>()?;
    check_structure(&base, &experts.iter().collect::<Vec<_>>())?;

    let mut totals = vec![DeltaStats::default(); experts.len()];
    let mut conflict = ConflictStats::default();
    println!("expert\ttensor\tnumel\tl2\tnonzero_fraction\tsign_balance");
    for name in base.names() {
        let b = read_tensor(&base, name)?.values;
        let mut deltas = Vec::with_capacity(experts.len());
        for (i, e) in experts.iter().enumerate() {
            let mut d = read_tensor(e, name)?.values;
            for (x, y) in d.iter_mut().zip(&b) {
                *x -= *y;
            }
            let mut s = DeltaStats::default();
            s.observe(&d, args.threshold);
            if args.stats {
                println!("{}", s.row(&e.model_id, name));
            }
            totals[i].add(&s);
            deltas.push(d);
        }
        if deltas.len() >= 2 {
            let slices: Vec<&[f32]> = deltas.iter().map(Vec::as_slice).collect();
            conflict.accumulate(&slices);
        }
    }
    for (e, s) in experts.iter().zip(&totals) {
        println!("{}", s.row(&e.model_id, "*"));
    }
    if experts.len() >= 2 {
        println!(
            "conflict_rate\t{:.6}\toverlapping\t{}\tconflicting\t{}",
            conflict.rate(),
            conflict.overlapping,
            conflict.conflicting
        );
    }
    Ok(())
}
