"""Gridworld Stag Hunt laboratory: environment variants, PPO training, curriculum and EGTA."""
from .env import EnvConfig, EnvState, StepResult, coop_variant, variant
from .matrix_game import Payoff2x2, StagHuntPayoffs, is_social_dilemma, is_stag_hunt, pure_nash
from .ppo import Hyperparams, train_centralized, train_ippo

__all__ = [
    "EnvConfig", "EnvState", "StepResult", "coop_variant", "variant",
    "Payoff2x2", "StagHuntPayoffs", "is_social_dilemma", "is_stag_hunt", "pure_nash",
    "Hyperparams", "train_centralized", "train_ippo",
]
__version__ = "0.1.0"
