"""Takagi-Sugeno-Kang neuro-fuzzy networks with gradient-trained rule structure."""

from .errors import (
    ConfigError,
    EnvironmentContractError,
    InputError,
    NeuroFuzzyError,
    StructuralError,
    TrainingError,
    UsageError,
)
from .firing import normalize_firing
from .inference import (
    InferenceConfig,
    NetworkStack,
    NeuroFuzzyNetwork,
    TskHead,
    defuzzify,
    forward,
    layer_normalize,
    preliminary_firing,
    stack,
)
from .membership import (
    CompletenessReport,
    GaussianSet,
    MembershipLayer,
    check_completeness,
    membership,
    membership_gradients,
)
from .neurogenesis import NeurogenesisState, WelfordAccumulator, maybe_sprout, observe_batch, welford_update
from .rules import HardSelection, RuleBank, constrain, expand_terms, sample_structure, structure_gradient
from .training import AdamState, TrainConfig, adam_step, backward, check_gradients, fit_supervised

__version__ = "0.1.0"
