"""Simulator for Byzantine-resilient decentralized SGD."""
from .aggregation import (AggregationOutcome, RuleConfig, aggregate, avg_rule, bridge_rule,
                          dbulyan_rule, dkrum_rule, dmedian_rule, guf_update, num_fault,
                          ubar_rule)
from .adversary import (AdversaryView, AttackStrategy, bitflip_attack, byzantine_broadcast,
                        gaussian_attack, mhamdi_attack, targeted_injection)
from .simulator import RunRecord, Simulation, SimulationConfig, learning_rate, run
from .topology import Topology, benign_connected, benign_diameter, generate, shortest_path

__version__ = "0.1.0"
