mod divergence;
mod ensemble;
mod scorers;
mod table;

pub use divergence::{js_divergence, sym_kl, PROB_FLOOR};
pub use ensemble::{build_ensemble, Ensemble, EnsembleConfig, MemberConfig};
pub use scorers::{ret_between, score_adv, score_agr, score_conf, score_priv, score_ret, score_ret_both_sides, ScoreTarget};
pub use table::{assemble_table, mean_tie_ranks, Metric, Orientation, RowMeta, ScoreColumn, ScoreTable};
