"""Edge/cloud split planning, simulation, and execution for layered inference.

The pipeline runs the first ``i*`` layers of a network on an edge device,
quantizes the split layer's feature map to ``c*`` integer bits, entropy-codes
it, ships it to a cloud service that runs the remaining layers, and re-plans
``(i*, c*)`` whenever the network bandwidth changes.
"""

from edgesplit.codec import EncodedBlock, CodecError, decode, encode, encoded_size
from edgesplit.latency import LatencyModel, analytic_model, measured_model, model_from_devices, transmission_time
from edgesplit.planner import DecisionGrid, PlanController, PlanDecision, PlanError, build_grid, solve
from edgesplit.profiles import (
    DecouplingPoint,
    DeviceProfile,
    ModelProfile,
    ProfileError,
    Scenario,
    amplification_report,
    load_device_profile,
    load_model_profile,
    load_scenario,
    validate_scenario,
)
from edgesplit.quantize import FeatureMap, QuantizedMap, QuantizeError, dequantize, quantize
from edgesplit.simulate import RequestStream, RunReport, run, sweep_accuracy, sweep_bandwidth, sweep_edge_power
from edgesplit.synthetic import GeneratorSpec, LayerGen, gen_calibration_corpus, gen_feature_map
from edgesplit.tables import CalibrationRecord, LookupTables, TableError, build_tables, stability_report

__version__ = "0.1.0"

__all__ = [
    "CalibrationRecord",
    "CodecError",
    "DecisionGrid",
    "DecouplingPoint",
    "DeviceProfile",
    "EncodedBlock",
    "FeatureMap",
    "GeneratorSpec",
    "LatencyModel",
    "LayerGen",
    "LookupTables",
    "ModelProfile",
    "PlanController",
    "PlanDecision",
    "PlanError",
    "ProfileError",
    "QuantizeError",
    "QuantizedMap",
    "RequestStream",
    "RunReport",
    "Scenario",
    "TableError",
    "amplification_report",
    "analytic_model",
    "build_grid",
    "build_tables",
    "decode",
    "dequantize",
    "encode",
    "encoded_size",
    "gen_calibration_corpus",
    "gen_feature_map",
    "load_device_profile",
    "load_model_profile",
    "load_scenario",
    "measured_model",
    "model_from_devices",
    "quantize",
    "run",
    "solve",
    "stability_report",
    "sweep_accuracy",
    "sweep_bandwidth",
    "sweep_edge_power",
    "transmission_time",
    "validate_scenario",
]
