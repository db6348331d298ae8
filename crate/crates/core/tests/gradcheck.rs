//! Full finite-difference sweep: every differentiable op plus the whole
//! toy model, 20 random trials each, central differences at h = 1e-5,
//! relative error < 1e-4.

use sepkit::gradcheck::{all_cases, check_case, check_model, FD_STEP, GRAD_TOL};

const TRIALS: usize = 20;

fn run(name: &str) {
    let report = check_case(name, TRIALS, FD_STEP).unwrap();
    assert!(
        report.passed(),
        "{name}: max rel err {:.3e} >= {GRAD_TOL:.0e} over {} comparisons",
        report.max_rel_err,
        report.comparisons
    );
}

macro_rules! grad_tests {
    ($($name:ident),* $(,)?) => {
        $(#[test] fn $name() { run(stringify!($name)); })*
    };
}

grad_tests!(
    add,
    sub,
    mul,
    div,
    add_scalar,
    scale,
    neg,
    relu,
    prelu,
    sigmoid,
    tanh,
    ln,
    log10,
    maximum,
    conv1d,
    depthwise_conv1d,
    strided_conv1d,
    transposed_conv1d,
    matmul,
    transpose2,
    transpose3,
    reshape,
    slice_rows,
    slice_cols,
    concat_rows,
    concat_cols,
    fit_length,
    add_col_vector,
    add_row_vector,
    broadcast_scalar,
    slice3_first,
    stack3_first,
    softmax_rows,
    dot,
    sum,
    mean,
    global_layer_norm,
    frame_layer_norm,
    row_layer_norm,
    gru_forward,
    gru_backward,
    multihead_attention,
    chunk,
    overlap_add,
    si_sdr_loss,
    upit_loss,
);

#[test]
fn test_list_matches_module_inventory() {
    // One generated test per case; if a case is added to the module this
    // count forces the list above to grow with it.
    assert_eq!(all_cases().len(), 46);
}

#[test]
fn toy_model() {
    // End to end through encoder, masker, decoder and the uPIT loss,
    // thirty sampled parameter coordinates per trial.
    let report = check_model(TRIALS, FD_STEP, 30).unwrap();
    assert!(
        report.passed(),
        "toy model: max rel err {:.3e} >= {GRAD_TOL:.0e} over {} comparisons",
        report.max_rel_err,
        report.comparisons
    );
}
