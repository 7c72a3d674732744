"""Max-entropy image diffeomorphisms and relative-stability measurement."""

__version__ = "0.1.0"

from .errors import DegeneratePredictorError, ParameterError, ProtocolError
from .rng import derive_stream
from .diffeo import (
    DiffeoSpec,
    DiffeoField,
    DisplacementGrid,
    ValidityReport,
    mode_indices,
    inverse_mode_sum,
    sample_field,
    sample_fields,
    evaluate_displacement,
    displacement_at,
    grad_norm_sq,
    field_delta,
    expected_delta,
    expected_delta_asymptotic,
    temperature_for_delta,
    xi_field,
    xi_from_jacobian,
    xi_clamp_count,
    validity,
    validity_bounds,
    save_field,
    load_field,
    save_grid,
    load_grid,
)
from .interpolation import (
    GAUSSIAN_SIGMA,
    Image,
    Bilinear,
    Gaussian,
    BILINEAR,
    apply_diffeo,
    gaussian_smooth,
    participation_ratio,
    load_image,
    save_image,
)
from .stability import (
    Predictor,
    LinearPredictor,
    IdentityPredictor,
    RandomFeaturePredictor,
    ProbeConfig,
    StabilityReport,
    calibrate_noise_norm,
    sample_sphere_noise,
    compute_stability,
    log_average,
    stability_vs_delta_sweep,
    sweep_rows,
    write_sweep_csv,
    kind_to_dict,
    kind_from_dict,
)
from .probe_protocol import (
    emit_probe,
    collect_probe,
    load_probe_inputs,
    write_probe_outputs,
    run_predictor_on_probe,
)
from .stripe import (
    StripeTask,
    StripeNet,
    NetConfig,
    OptimizerConfig,
    generate_stripe_data,
    stripe_labels,
    train_stripe_net,
    alignment_ratio,
    stripe_test_error,
    stripe_relative_stability,
    stripe_experiment,
    fit_loglog_slope,
)
