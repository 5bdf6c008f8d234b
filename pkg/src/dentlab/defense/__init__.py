from dentlab.defense.config import (
    DefenseConfig,
    FinalPassStats,
    Interleave,
    Objective,
    Smoothing,
)
from dentlab.defense.objective import InvalidObjectiveInputException, defense_objective
from dentlab.defense.dent import (
    DefenseState,
    DefenseStateException,
    DentDefense,
    MissingNormalizationException,
    expand_samplewise,
)
from dentlab.defense.classifier import DynamicClassifier, InterleaveLedger
