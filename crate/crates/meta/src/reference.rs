//! Published reference accuracies (percent, 5-way 1-shot, mean ± 95% CI over
//! 10,000 tasks) for the full-scale benchmark. Documentation targets only:
//! they need the original corpora and long GPU training, so nothing asserts
//! a reproduction of them.

/// Column order of every table below.
pub const ALGORITHMS: [&str; 5] = [
    "FO-MAML",
    "FO-Meta-Curvature",
    "ProtoNets",
    "SimpleShot CL2N",
    "Meta-Baseline",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub ci95: f64,
}

const fn c(mean: f64, ci95: f64) -> Cell {
    Cell { mean, ci95 }
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceRow {
    pub dataset: &'static str,
    /// Held out from training, evaluated only.
    pub cross: bool,
    pub cells: [Cell; 5],
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceTable {
    pub name: &'static str,
    pub rows: &'static [ReferenceRow],
    /// Published average-rank row, same column order.
    pub avg_rank: [f64; 5],
}

impl ReferenceTable {
    /// Mean accuracies of the rows used for ranking, as `table[dataset][algorithm]`.
    pub fn means(&self, include_cross: bool) -> Vec<Vec<Option<f64>>> {
        self.rows
            .iter()
            .filter(|r| include_cross || !r.cross)
            .map(|r| r.cells.iter().map(|c| Some(c.mean)).collect())
            .collect()
    }
}

const fn row(dataset: &'static str, cross: bool, cells: [Cell; 5]) -> ReferenceRow {
    ReferenceRow { dataset, cross, cells }
}

/// Models trained and tested per dataset.
pub const WITHIN_DATASET: ReferenceTable = ReferenceTable {
    name: "within_dataset",
    rows: &[
        row(
            "esc50",
            false,
            [
                c(74.66, 0.42),
                c(76.17, 0.41),
                c(68.83, 0.38),
                c(68.82, 0.39),
                c(71.72, 0.38),
            ],
        ),
        row(
            "nsynth",
            false,
            [
                c(93.85, 0.24),
                c(96.47, 0.19),
                c(95.23, 0.19),
                c(90.04, 0.27),
                c(90.74, 0.25),
            ],
        ),
        row(
            "kaggle18",
            false,
            [
                c(43.45, 0.46),
                c(43.18, 0.45),
                c(39.44, 0.44),
                c(42.03, 0.42),
                c(40.27, 0.44),
            ],
        ),
        row(
            "voxceleb1",
            false,
            [
                c(60.89, 0.45),
                c(63.85, 0.44),
                c(59.64, 0.44),
                c(48.50, 0.42),
                c(55.54, 0.42),
            ],
        ),
        row(
            "birdclef_pruned",
            false,
            [
                c(56.26, 0.45),
                c(61.34, 0.46),
                c(56.11, 0.46),
                c(57.66, 0.43),
                c(57.28, 0.41),
            ],
        ),
    ],
    avg_rank: [2.4, 1.2, 3.8, 4.0, 3.6],
};

/// Joint training, each training episode drawn from a single dataset.
pub const JOINT_WITHIN: ReferenceTable = ReferenceTable {
    name: "joint_within",
    rows: &[
        row(
            "esc50",
            false,
            [
                c(68.68, 0.45),
                c(72.43, 0.44),
                c(61.49, 0.41),
                c(59.31, 0.40),
                c(62.79, 0.40),
            ],
        ),
        row(
            "nsynth",
            false,
            [
                c(81.54, 0.39),
                c(82.22, 0.38),
                c(78.63, 0.36),
                c(89.66, 0.41),
                c(85.17, 0.31),
            ],
        ),
        row(
            "kaggle18",
            false,
            [
                c(39.51, 0.44),
                c(41.22, 0.45),
                c(36.22, 0.40),
                c(37.80, 0.40),
                c(34.04, 0.40),
            ],
        ),
        row(
            "voxceleb1",
            false,
            [
                c(51.41, 0.43),
                c(51.37, 0.44),
                c(50.74, 0.41),
                c(40.14, 0.41),
                c(39.18, 0.39),
            ],
        ),
        row(
            "birdclef_pruned",
            false,
            [
                c(47.69, 0.45),
                c(47.39, 0.46),
                c(46.49, 0.43),
                c(35.69, 0.40),
                c(37.40, 0.40),
            ],
        ),
        row(
            "watkins",
            true,
            [
                c(57.75, 0.47),
                c(57.76, 0.47),
                c(49.16, 0.43),
                c(52.73, 0.43),
                c(52.09, 0.43),
            ],
        ),
        row(
            "speechcommands_v1",
            true,
            [
                c(25.09, 0.40),
                c(26.33, 0.41),
                c(24.31, 0.36),
                c(24.99, 0.35),
                c(24.18, 0.36),
            ],
        ),
    ],
    avg_rank: [2.0, 1.6, 4.0, 3.4, 4.0],
};

/// Joint training with episodes free to mix datasets.
pub const JOINT_FREE: ReferenceTable = ReferenceTable {
    name: "joint_free",
    rows: &[
        row(
            "esc50",
            false,
            [
                c(76.24, 0.42),
                c(75.72, 0.42),
                c(68.63, 0.39),
                c(59.04, 0.41),
                c(61.53, 0.40),
            ],
        ),
        row(
            "nsynth",
            false,
            [
                c(77.71, 0.41),
                c(83.51, 0.37),
                c(79.06, 0.36),
                c(90.02, 0.27),
                c(85.04, 0.31),
            ],
        ),
        row(
            "kaggle18",
            false,
            [
                c(44.85, 0.45),
                c(45.46, 0.45),
                c(41.76, 0.41),
                c(38.12, 0.40),
                c(35.90, 0.38),
            ],
        ),
        row(
            "voxceleb1",
            false,
            [
                c(39.52, 0.42),
                c(39.83, 0.43),
                c(40.74, 0.39),
                c(42.66, 0.41),
                c(36.63, 0.38),
            ],
        ),
        row(
            "birdclef_pruned",
            false,
            [
                c(46.76, 0.45),
                c(46.41, 0.46),
                c(44.70, 0.42),
                c(37.96, 0.40),
                c(32.29, 0.38),
            ],
        ),
        row(
            "watkins",
            true,
            [
                c(60.27, 0.47),
                c(58.19, 0.47),
                c(48.56, 0.42),
                c(54.34, 0.43),
                c(53.23, 0.43),
            ],
        ),
        row(
            "speechcommands_v1",
            true,
            [
                c(27.29, 0.42),
                c(26.56, 0.42),
                c(24.30, 0.35),
                c(24.74, 0.35),
                c(23.88, 0.35),
            ],
        ),
    ],
    avg_rank: [2.1, 2.1, 3.4, 3.0, 4.3],
};

pub const TABLES: [ReferenceTable; 3] = [WITHIN_DATASET, JOINT_WITHIN, JOINT_FREE];

/// Fixed-feature baselines over pre-trained spectrogram transformers.
/// Columns: ImageNet SVM, ImageNet NCC CL2N, ImageNet+AudioSet SVM,
/// ImageNet+AudioSet NCC CL2N; `None` where no in-domain comparison exists.
pub const FIXED_FEATURES: [(&str, [f64; 4], Option<f64>); 7] = [
    ("esc50", [61.12, 60.41, 61.61, 64.48], Some(68.82)),
    ("nsynth", [64.26, 66.68, 62.62, 63.78], Some(90.04)),
    ("kaggle18", [34.01, 33.52, 38.38, 38.76], Some(42.03)),
    ("voxceleb1", [27.26, 28.09, 27.45, 28.79], Some(48.50)),
    ("birdclef_pruned", [30.84, 33.04, 33.17, 36.41], Some(57.66)),
    ("watkins", [55.91, 55.40, 51.46, 51.81], None),
    ("speechcommands_v1", [26.24, 26.46, 30.69, 30.24], None),
];
