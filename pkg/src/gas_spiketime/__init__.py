"""Behavioral simulator for a two-pathway analog spike-time encoder of gas concentration.

A MOx sensor load-voltage trace drives a change-detection path (inverting
differentiator and comparator) and an exposure-measurement path (gated lossy
integrator and comparator). The delay between the two rising flanks shrinks
as concentration grows.
"""

__version__ = "0.1.0"

from .circuit import (
    CircuitParams,
    ComparatorParams,
    DifferentiatorParams,
    IntegratorParams,
    PulseTrain,
    comparator,
    differentiator_response,
    gated_integrator,
    solve_step,
)
from .encoder import EventTrace, SpikeTrain, edges_to_spikes, encode_trial, merge_chatter, simulate_trial
from .series import StimulusWindow, TimeSeries, baseline_stats, synth_concentration_family, synth_trapezoid, value_at

__all__ = [
    "CircuitParams",
    "ComparatorParams",
    "DifferentiatorParams",
    "EventTrace",
    "IntegratorParams",
    "PulseTrain",
    "SpikeTrain",
    "StimulusWindow",
    "TimeSeries",
    "baseline_stats",
    "comparator",
    "differentiator_response",
    "edges_to_spikes",
    "encode_trial",
    "gated_integrator",
    "merge_chatter",
    "simulate_trial",
    "solve_step",
    "synth_concentration_family",
    "synth_trapezoid",
    "value_at",
]
