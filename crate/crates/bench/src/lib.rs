//! Inputs shared by the benchmarks.

use tbloop_core::validator::MatrixRow;
use tbloop_core::RsMatrix;

/// Deterministic `n_rows` x `n_s` matrix with every fifth row invalid and a
/// red diagonal band, so classification takes the per-column path.
pub fn banded_matrix(n_rows: usize, n_s: usize) -> RsMatrix {
    let rows = (0..n_rows)
        .map(|i| {
            if i % 5 == 4 {
                MatrixRow::invalid(i)
            } else {
                MatrixRow::valid(i, (0..n_s).map(|j| (i + j) % 3 != 0).collect())
            }
        })
        .collect();
    RsMatrix::new(n_s, rows).expect("well-formed matrix")
}

/// A model reply with prose, a numbered scenario list and two code blocks.
pub fn sample_reply(n_scenarios: usize) -> String {
    let mut s = String::from("Here are the scenarios for the design.\n\n");
    for i in 1..=n_scenarios {
        s.push_str(&format!("{i}. scenario_{i}: drive input pattern {i} and hold for two cycles\n"));
    }
    s.push_str("\n```verilog\ninitial begin\n  scenario = 0; a = 0; b = 0;\n  #10;\nend\n```\n");
    s.push_str("\n```python\nclass ReferenceModel:\n    def check(self, rec):\n        return True\n```\n");
    s
}
