from dentlab.attacks.spec import (
    AttackBudgetException,
    AttackKind,
    AttackLoss,
    AttackResult,
    AttackSpec,
    InvalidAttackSpecException,
    Norm,
)
from dentlab.attacks.classifier import BlackBoxModel, ModelUnderAttack, StaticClassifier
from dentlab.attacks.losses import dlr_loss, margin_loss
from dentlab.attacks.projection import check_feasible, project
from dentlab.attacks.pgd import pgd
from dentlab.attacks.square import square_attack
from dentlab.attacks.ensemble import run_attack, worst_case_ensemble
