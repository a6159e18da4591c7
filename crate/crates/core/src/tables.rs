//! Published result rows, used to check that the reporting averages are
//! reproduced by [`table_average`] and the cosine/readability average.

use serde::Serialize;

use crate::similarity::table_average;

/// Tolerance for recomputed two-decimal averages.
pub const TABLE_TOLERANCE: f64 = 0.01;

/// Row with readability and both similarities; average over the three on a 0-100 scale.
#[derive(Debug, Clone, Copy)]
pub struct MetricRow {
    pub table: &'static str,
    pub setting: &'static str,
    pub fh: f64,
    pub bow_sim: f64,
    pub emb_sim: f64,
    pub printed_avg: f64,
}

/// Official ranking row; average of the scaled mean cosine and readability.
#[derive(Debug, Clone, Copy)]
pub struct RankingRow {
    pub table: &'static str,
    pub team: &'static str,
    pub lexical_cos: f64,
    pub embedding_cos: f64,
    pub cosine_avg: f64,
    pub fh: f64,
    pub printed_avg: f64,
    /// The printed average does not follow from the printed columns.
    pub inconsistent: bool,
}

const fn m(table: &'static str, setting: &'static str, fh: f64, bow_sim: f64, emb_sim: f64, printed_avg: f64) -> MetricRow {
    MetricRow {
        table,
        setting,
        fh,
        bow_sim,
        emb_sim,
        printed_avg,
    }
}

pub const METRIC_ROWS: &[MetricRow] = &[
    m("Table 3", "ZS", 61.05, 0.5293, 0.8711, 67.03),
    m("Table 3", "FS RDM", 62.23, 0.5375, 0.8879, 68.26),
    m("Table 3", "FS BM25 NOFILT", 62.83, 0.5474, 0.8924, 68.94),
    m("Table 3", "FS BM25 FILT 0.8-1.2", 63.20, 0.5415, 0.8906, 68.80),
    m("Table 3", "FS BM25 FILT 0.5-1.5", 62.96, 0.5449, 0.8922, 68.89),
    m("Table 3", "FS EMBSIM", 59.14, 0.3836, 0.8165, 59.72),
    m("Table 3", "FT", 62.20, 0.5685, 0.8954, 69.53),
    m("Table 3", "DPO t=0,k=1", 65.44, 0.5521, 0.8884, 69.83),
    m("Table 3", "DPO t=0.3,k=40,p=0.95", 66.03, 0.5483, 0.8859, 69.82),
    m("Table 4", "ZS", 59.49, 0.5080, 0.8627, 65.52),
    m("Table 4", "FS RDM NOFILT", 64.81, 0.4955, 0.8685, 67.07),
    m("Table 4", "FS BM25 NOFILT", 64.31, 0.5478, 0.8804, 69.04),
    m("Table 4", "FS BM25 FILT 0.8-1.2", 64.60, 0.5441, 0.8770, 68.90),
    m("Table 4", "FS BM25 FILT 0.5-1.5", 65.53, 0.5438, 0.8771, 69.21),
    m("Table 4", "FS EMBSIM NOFILT", 62.66, 0.3404, 0.7720, 57.97),
    m("Table 4", "FT", 59.91, 0.5580, 0.8710, 67.60),
    m("Table 4", "DPO t=0,k=1", 70.30, 0.4762, 0.8527, 67.73),
    m("Table 4", "DPO t=0.3,k=40,p=0.95", 70.58, 0.4728, 0.8515, 67.67),
    m("Table 5", "PL BM25", 62.83, 0.5474, 0.8924, 68.94),
    m("Table 5", "PL DPO", 65.44, 0.5521, 0.8884, 69.83),
    m("Table 5", "PL APEC over BM25", 72.10, 0.5186, 0.8862, 70.86),
    m("Table 5", "PL APEC over DPO", 72.26, 0.5341, 0.8878, 71.48),
    m("Table 5", "ER BM25", 64.31, 0.5478, 0.8804, 69.04),
    m("Table 5", "ER DPO", 70.30, 0.4762, 0.8527, 67.73),
    m("Table 5", "ER APEC over BM25", 74.28, 0.4837, 0.8685, 69.83),
    m("Table 5", "ER APEC over DPO", 75.14, 0.4803, 0.8579, 69.65),
];

const fn r(table: &'static str, team: &'static str, lexical_cos: f64, embedding_cos: f64, cosine_avg: f64, fh: f64, printed_avg: f64) -> RankingRow {
    RankingRow {
        table,
        team,
        lexical_cos,
        embedding_cos,
        cosine_avg,
        fh,
        printed_avg,
        inconsistent: false,
    }
}

pub const RANKING_ROWS: &[RankingRow] = &[
    RankingRow {
        inconsistent: true,
        ..r("Table 6", "VICOMTECH", 0.63, 0.76, 0.70, 82.98, 79.49)
    },
    r("Table 6", "CARDIFFNLP", 0.63, 0.77, 0.70, 78.81, 74.41),
    r("Table 6", "HULAT-UC3M", 0.71, 0.78, 0.75, 69.72, 72.36),
    r("Table 6", "NIL_UCM", 0.67, 0.75, 0.71, 70.42, 70.71),
    r("Table 7", "UR", 0.64, 0.76, 0.70, 85.12, 77.56),
    r("Table 7", "VICOMTECH", 0.58, 0.74, 0.66, 85.44, 75.72),
    r("Table 7", "CARDIFFNLP", 0.65, 0.77, 0.71, 77.85, 74.43),
    r("Table 7", "NIL_UCM", 0.68, 0.75, 0.72, 69.40, 70.70),
    r("Table 7", "UNED-INEDA", 0.60, 0.75, 0.68, 72.39, 70.20),
];

pub fn cosine_fh_average(cosine_avg: f64, fh: f64) -> f64 {
    (100.0 * cosine_avg + fh) / 2.0
}

#[derive(Debug, Clone, Serialize)]
pub struct RowCheck {
    pub table: &'static str,
    pub row: &'static str,
    pub computed: f64,
    pub printed: f64,
    pub within_tolerance: bool,
    /// False for rows known to be inconsistent; they are reported only.
    pub asserted: bool,
}

impl RowCheck {
    pub fn passed(&self) -> bool {
        self.within_tolerance || !self.asserted
    }

    pub fn line(&self) -> String {
        let status = match (self.within_tolerance, self.asserted) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FLAG",
        };
        format!(
            "{status} {:<8} {:<24} computed {:>6.2} printed {:>6.2}",
            self.table, self.row, self.computed, self.printed
        )
    }
}

pub fn check_tables() -> Vec<RowCheck> {
    let within = |a: f64, b: f64| (a - b).abs() <= TABLE_TOLERANCE + 1e-9;
    let metric = METRIC_ROWS.iter().map(|row| {
        let computed = table_average(row.fh, row.bow_sim, row.emb_sim);
        RowCheck {
            table: row.table,
            row: row.setting,
            computed,
            printed: row.printed_avg,
            within_tolerance: within(computed, row.printed_avg),
            asserted: true,
        }
    });
    let ranking = RANKING_ROWS.iter().map(|row| {
        let computed = cosine_fh_average(row.cosine_avg, row.fh);
        RowCheck {
            table: row.table,
            row: row.team,
            computed,
            printed: row.printed_avg,
            within_tolerance: within(computed, row.printed_avg),
            asserted: !row.inconsistent,
        }
    });
    metric.chain(ranking).collect()
}
