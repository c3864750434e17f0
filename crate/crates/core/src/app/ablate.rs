use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::{evaluate, run_training};
use crate::datapipe::SamplePair;
use crate::error::Result;
use crate::objective::MetricReport;

/// `(use_changefpn, use_distance_decoder)` in ablation-table row order.
pub const ABLATION_ROWS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub changefpn: bool,
    pub decoder: bool,
    pub parameters: usize,
    pub report: MetricReport,
}

/// Trains and evaluates every flag combination under the same seed and budget.
pub fn run_ablation(cfg: &RunConfig, train: &[SamplePair], val: &[SamplePair]) -> Result<Vec<AblationRow>> {
    let base = cfg.model_config()?;
    let mut rows = Vec::with_capacity(4);
    for (changefpn, decoder) in ABLATION_ROWS {
        let mut run = cfg.clone();
        let mut model = base.clone();
        model.use_changefpn = changefpn;
        model.use_distance_decoder = decoder;
        run.model = Some(model);
        log::info!("ablation: changefpn={changefpn} decoder={decoder}");
        let mut outcome = run_training(&run, train, val, None)?;
        let report = evaluate(&mut outcome.network, val)?.metrics()?;
        rows.push(AblationRow {
            changefpn,
            decoder,
            parameters: outcome.network.parameter_count(),
            report,
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "√" } else { "×" };
    let mut out = String::from("Model\tChangeFPN\tDecoder\tParams\tIoU\n");
    for r in rows {
        out.push_str(&format!(
            "EfficientCD\t{}\t{}\t{}\t{:.2}\n",
            mark(r.changefpn),
            mark(r.decoder),
            r.parameters,
            r.report.iou * 100.0
        ));
    }
    out
}
