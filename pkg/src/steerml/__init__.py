"""Steerability labeling of two-qubit states and safe semi-supervised
classification.

The package wires together four layers: quantum-state utilities
(:mod:`steerml.qstate`), the SDP steering witness and labeling rule
(:mod:`steerml.sdp_steer`), an SMO-trained kernel SVM
(:mod:`steerml.svm_core`), the safe semi-supervised method
(:mod:`steerml.s4vm_core`), and the experiment pipeline plus CLI on top.
"""

from .errors import (
    ConfigError,
    DegenerateDataError,
    DomainError,
    GenerationError,
    SamplingError,
    SizeError,
    SteermlError,
)
from .qstate import (
    Assemblage,
    FeatureVector9,
    Measurement,
    MeasurementSet,
    PauliDecomposition,
    TwoQubitState,
    WernerParams,
    assemblage,
    feature_vector,
    partial_trace_alice,
    pauli_decompose,
    pauli_reconstruct,
    random_density_matrix,
    random_measurement_set,
    werner_state,
    werner_unsteerable_analytic,
)
from .s4vm_core import S4vmParams, SeparatorPool, s4vm_predict, s4vm_run
from .sdp_steer import (
    SdpSettings,
    SteeringWitness,
    StrategyTable,
    enumerate_strategies,
    ip_solve,
    label_state,
    solve_steering_sdp,
)
from .svm_core import Dataset, GridSpec, SvmModel, SvmParams, grid_search, k_fold_cv, predict, rbf_kernel, train
from .pipeline import (
    ComparisonResult,
    ErrorReport,
    ExperimentConfig,
    class_errors,
    compare_runs,
    generate_balanced_dataset,
    run_incremental_s4vm,
    run_inductive_baseline,
    werner_sweep,
)

__version__ = "0.1.0"
