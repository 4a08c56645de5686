mod correlation;
mod experiments;
mod extract;

pub use correlation::{pearson, rank_correlations, spearman, CorrelationMatrix, CorrelationMethod};
pub use experiments::{
    curriculum_prefix_suffix_experiment, curriculum_window_experiment, label_noise_ablation, leave_one_out_influence,
    paired_t_test, robustness_by_slice, top_half_test, CurriculumResult, Curve, EvalScope, EvalTarget, LooEntry, LooReport,
    NoiseAblation, RobustnessReport, SliceRobustness,
};
pub use extract::{
    add_standard_combinations, combine_metrics, extract_canonical_prototypes, extract_memorized_exceptions,
    extract_uncommon_submodes, ExampleSet, SetName,
};
