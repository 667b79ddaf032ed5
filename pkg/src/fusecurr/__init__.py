"""Reinforced collaborative distillation and self-learning for infrared/visible image fusion."""
from .agent import Action, Agent, State, Trajectory
from .config import TrainConfig, load_config
from .degrade import DegradationParams, degrade_pair
from .fusenet import FeaturePyramid, FileTeacher, RuleTeacher, StudentNet
from .metrics import MetricVector, RunningNormalizer, metric_vector
from .trainer import evaluate, make_synthetic_dataset, pretrain, train

__all__ = [
    "Action", "Agent", "State", "Trajectory",
    "TrainConfig", "load_config",
    "DegradationParams", "degrade_pair",
    "FeaturePyramid", "FileTeacher", "RuleTeacher", "StudentNet",
    "MetricVector", "RunningNormalizer", "metric_vector",
    "evaluate", "make_synthetic_dataset", "pretrain", "train",
]
