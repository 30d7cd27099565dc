# feedflow/services/simulation/__init__.py
from feedflow.services.simulation.generator import SimReplication, SimTruth, generate
from feedflow.services.simulation.study import SimulationStudy, StudyResult, run_replication, run_study

__all__ = ["SimReplication", "SimTruth", "SimulationStudy", "StudyResult", "generate", "run_replication", "run_study"]
