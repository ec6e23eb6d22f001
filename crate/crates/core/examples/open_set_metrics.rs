//! Closed-set accuracy, AUROC and the OSCR curve on a hand-made example.

use osattr::metrics::{auroc, ccr_at, closed_set_accuracy, fpr_at, oscr, oscr_curve, ScoredPrediction};

fn main() -> osattr::Result<()> {
    let seen: Vec<ScoredPrediction> = [(true, 0.9), (false, 0.8), (true, 0.7), (true, 0.5)]
        .into_iter()
        .map(|(correct, confidence)| ScoredPrediction {
            predicted_class: 0,
            correct,
            confidence,
            is_seen: true,
        })
        .collect();
    let unseen = [0.7, 0.3];
    let confidences: Vec<f64> = seen.iter().map(|p| p.confidence).collect();

    println!("accuracy {:.4}", closed_set_accuracy(&seen)?);
    println!("AUROC    {:.4}", auroc(&confidences, &unseen)?);
    println!("OSCR     {:.4}", oscr(&seen, &unseen)?);
    for tau in [0.2, 0.6, 0.75] {
        println!("tau {tau}: CCR {:.3} FPR {:.3}", ccr_at(&seen, tau)?, fpr_at(&unseen, tau)?);
    }
    let curve = oscr_curve(&seen, &unseen)?;
    for (f, c) in curve.fpr.iter().zip(&curve.ccr) {
        println!("  ({f:.3}, {c:.3})");
    }
    Ok(())
}
