"""Hybrid intrusion detection: negative-selection detectors flag anomalous
KDD connections, and a labelled Self-Organising Map names the attack class."""

from .detectors import Detector, DetectorSet
from .negsel import GaConfig, generate_detectors
from .pipeline import EvaluationReport, Verdict, analyze, detect, evaluate
from .schema import ConnectionVector, FeatureSchema, RawRecord
from .som import LvqConfig, SomConfig, SomModel

__version__ = "0.1.0"

__all__ = [
    "ConnectionVector", "Detector", "DetectorSet", "EvaluationReport", "FeatureSchema",
    "GaConfig", "LvqConfig", "RawRecord", "SomConfig", "SomModel", "Verdict", "analyze",
    "detect", "evaluate", "generate_detectors",
]
