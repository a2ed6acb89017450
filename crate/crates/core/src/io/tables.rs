use std::fmt::Write;

use crate::explain::SaliencyMap;
use crate::trainer::TrainHistory;

/// `iteration,loss` rows, plus an `auc` column when validation ran. The AUC
/// is filled on the last iteration of each epoch and blank elsewhere.
pub fn history_csv(h: &TrainHistory) -> String {
    let with_auc = h.epoch_auc.iter().any(Option::is_some);
    let mut out = String::from(if with_auc { "iteration,loss,auc\n" } else { "iteration,loss\n" });
    for (i, loss) in h.losses.iter().enumerate() {
        write!(out, "{i},{loss}").unwrap();
        if with_auc {
            out.push(',');
            let n = h.iters_per_epoch.max(1);
            if (i + 1) % n == 0 {
                if let Some(Some(auc)) = h.epoch_auc.get(i / n) {
                    write!(out, "{auc}").unwrap();
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Raw saliency as `y,x,value` rows.
pub fn saliency_csv(map: &SaliencyMap) -> String {
    let mut out = String::from("y,x,value\n");
    for y in 0..map.height {
        for x in 0..map.width {
            writeln!(out, "{y},{x},{}", map.get(y, x)).unwrap();
        }
    }
    out
}
