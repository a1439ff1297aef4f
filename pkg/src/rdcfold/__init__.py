"""Sequential protein backbone folding driven by residual dipolar couplings."""

from .beam import Beam, BeamEntry, Crossing, CrossStats
from .estimator import RdcFolder
from .exceptions import (InputShapeError, InsufficientDataError, ParseError, RdcFoldError,
                         SearchError, ValidationError, WorkerError)
from .filters import (KarplusCoefficients, RamachandranTable, ScalarCouplingRecord, filter_grid,
                      karplus_coupling, ramachandran_pass)
from .geometry import (BackboneChain, DihedralPair, PeptideGeometryParams, append_residue,
                       build_backbone, extract_dihedrals, internuclear_unit_vector)
from .instrumentation import (RunReport, SectionLabel, SpeedupModel, TimingLog, aggregate_report,
                              fit_speedup_model, legacy_io_fitness, record_section)
from .parallel import (WorkChunk, WorkerPool, WorkerPoolConfig, evaluate_chunk, merge_sorted,
                       parallel_evaluate_and_sort, scatter)
from .rdc import (FitnessScore, OrderTensor, OrderTensorRegressor, RdcRecord, VectorTypeParams,
                  back_calculate, fit_order_tensor, fragment_fitness, saupe_row)
from .search import (AngleCandidateList, SearchConfig, SearchSpaceEstimate, bounded_evaluations,
                     cross_lists, fold, generate_dihedral_grid, stage1, stage2_iteration,
                     total_search_space)
from .synth import SyntheticTruth, synthesize_dataset

__version__ = "0.1.0"
