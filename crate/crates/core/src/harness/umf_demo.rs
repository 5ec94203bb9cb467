use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::rng;
use crate::umf::{block_forward, build_sequence, encode_positions, BlockWeights, ModalityEmbedding};

use super::{write_file, Check, Report};

#[derive(Debug, Clone)]
pub struct UmfDemoArgs {
    /// Token counts `(latent, image, text)`.
    pub lengths: [usize; 3],
    pub d_model: usize,
    pub heads: usize,
    pub hidden: usize,
    pub seed: u64,
    pub zero_weights: bool,
    pub out: Option<PathBuf>,
}

impl Default for UmfDemoArgs {
    fn default() -> Self {
        Self {
            lengths: [2, 3, 4],
            d_model: 8,
            heads: 1,
            hidden: 16,
            seed: 0,
            zero_weights: false,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct UmfDemoReport {
    pub input_shape: (usize, usize),
    pub output_shape: (usize, usize),
    pub lengths: [usize; 3],
    pub checks: Vec<Check>,
}

impl UmfDemoReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "sequence (latent {}, image {}, text {})\ninput  {}x{}\noutput {}x{}\n",
            self.lengths[0],
            self.lengths[1],
            self.lengths[2],
            self.input_shape.0,
            self.input_shape.1,
            self.output_shape.0,
            self.output_shape.1
        );
        for c in &self.checks {
            s += &format!("{} {}: {}\n", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

fn tokens(rows: usize, d: usize, r: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, d, |_, _| r.sample::<f64, _>(StandardNormal))
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Builds a random sequence, runs one block and checks its structure.
///
/// Permutation equivariance is checked on the block alone: position codes are
/// attached before the shuffle, so only the token order changes.
pub fn umf_demo(args: &UmfDemoArgs) -> Result<UmfDemoReport> {
    let d = args.d_model;
    let mut r = rng::stream_rng(&[args.seed, rng::stream::INSTANCE]);
    let [lz, li, lt] = args.lengths;
    let (z, img, txt) = (tokens(lz, d, &mut r), tokens(li, d, &mut r), tokens(lt, d, &mut r));
    let seq = build_sequence(&z, &img, &txt)?;
    let encoded = encode_positions(&seq, &ModalityEmbedding::random(d, args.seed))?;
    let mut weights = BlockWeights::random(d, args.hidden, args.heads, args.seed)?;
    if args.zero_weights {
        weights = weights.with_zero_outputs();
    }
    let out = block_forward(&encoded, &weights)?;
    let mut checks = Vec::new();

    let n = seq.len();
    checks.push(Check::new(
        "shape",
        out.tokens.shape() == (n, d),
        format!("{n}x{d} in, {}x{} out", out.tokens.nrows(), out.tokens.ncols()),
    ));

    if args.zero_weights {
        let gap = max_abs(&out.tokens, &encoded.tokens);
        checks.push(Check::new("residual_identity", gap == 0.0, format!("max deviation {gap:e}")));
    }

    let perm: Vec<usize> = (0..n).rev().collect();
    let shuffled = block_forward(&encoded.permuted(&perm)?, &weights)?;
    let expected = out.permuted(&perm)?;
    let gap = max_abs(&shuffled.tokens, &expected.tokens);
    checks.push(Check::new("permutation_equivariance", gap <= 1e-9, format!("max deviation {gap:e}")));

    if !args.zero_weights && lz > 0 && lt > 0 {
        let mut bumped = encoded.clone();
        let row = lz + li;
        // A constant shift would vanish under layer norm.
        for j in 0..d {
            bumped.tokens[(row, j)] += r.sample::<f64, _>(StandardNormal);
        }
        let moved = block_forward(&bumped, &weights)?;
        let gap = max_abs(&moved.tokens.rows(0, lz).into_owned(), &out.tokens.rows(0, lz).into_owned());
        checks.push(Check::new("cross_modal_reach", gap > 1e-6, format!("latent outputs moved by {gap:e}")));
    }

    Ok(UmfDemoReport {
        input_shape: seq.tokens.shape(),
        output_shape: out.tokens.shape(),
        lengths: args.lengths,
        checks,
    })
}


/// Prints the shape report; with `out`, also writes it as `umf_report.json`.
pub fn cmd_umf_demo(args: &UmfDemoArgs) -> Result<Report> {
    let demo = umf_demo(args)?;
    print!("{}", demo.render());
    let mut report = Report::default();
    if let Some(out) = &args.out {
        write_file(out, "umf_report.json", &serde_json::to_string_pretty(&demo)?, &mut report)?;
    }
    report.checks = demo.checks;
    Ok(report)
}
