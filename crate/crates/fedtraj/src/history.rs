//! Round history as JSON lines: a header record, then one record per round.

use fedtraj_core::federated::RoundReport;
use serde_json::{json, Value};

pub const FORMAT: &str = "fedtraj-history";
pub const VERSION: u32 = 1;

pub fn header() -> Value {
    json!({ "format": FORMAT, "version": VERSION })
}

pub fn round_record(r: &RoundReport) -> Value {
    json!({
        "round": r.round,
        "participants": r.participants,
        "excluded": r.excluded.iter().map(|u| u.0).collect::<Vec<_>>(),
        "disc_losses": r.disc_losses,
        "mean_disc_loss": r.mean_disc_loss,
        "mean_score": r.mean_score,
        "mean_xi": r.mean_xi,
        "mean_reward": r.mean_reward,
        "lambda_mean": r.lambda_mean,
        "lambda_var": r.lambda_var,
        "ppo": {
            "policy_loss": r.ppo.policy_loss,
            "value_loss": r.ppo.value_loss,
            "entropy": r.ppo.entropy,
            "clip_fraction": r.ppo.clip_fraction,
            "updates": r.ppo.updates,
        },
    })
}

pub fn format_history(history: &[RoundReport]) -> String {
    let mut out = header().to_string();
    out.push('\n');
    for r in history {
        out.push_str(&round_record(r).to_string());
        out.push('\n');
    }
    out
}
