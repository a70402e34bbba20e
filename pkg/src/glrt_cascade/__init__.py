"""GLRT change-point detection and restart policies for piecewise-stationary cascading bandits."""

from .changepoint import ObservationBuffer, first_detection, first_detections, glr_statistic, glrt_detect
from .core_math import (
    expected_reward,
    kl_bernoulli,
    klucb_index,
    optimal_expected_reward,
    practical_threshold,
    threshold_beta,
    ucb_index,
)
from .environment import (
    EnvironmentSpec,
    Feedback,
    SegmentSpec,
    check_assumption2,
    load_segments_csv,
    make_hard_instance,
    make_synthetic,
    simulate_click,
)
from .errors import ValidationError
from .harness import ExperimentConfig, emit_outputs, run_experiment, run_trial
from .policies import POLICIES, CascadePolicy, make_policy, oracle

__version__ = "0.1.0"
