//! Shared fixtures for the benchmarks.

use tracefit_core::DetecteeHistogram;

/// Detectee counts of 956 index cases, as bundled with the command-line tool.
pub fn karnataka() -> DetecteeHistogram {
    DetecteeHistogram::from_pairs([
        (0, 766),
        (1, 87),
        (2, 34),
        (3, 19),
        (4, 16),
        (5, 12),
        (6, 3),
        (7, 4),
        (8, 3),
        (10, 2),
        (11, 1),
        (12, 1),
        (13, 1),
        (15, 1),
        (16, 1),
        (19, 2),
        (22, 1),
        (28, 1),
        (29, 1),
    ])
    .expect("non-empty")
}
