from .ablation import AblationMode, GridResult, loop_modes, run_ablation_grid, standard_modes
from .dataset import DatasetRecord, Turn, dump_dataset, load_dataset
from .evaluate import EvalConfig, build_instruction, eval_generation, eval_ranking, evaluate, normalize_answer
from .report import EvalReport, diff_reports, recompute
from .templates import DEFAULT_TEMPLATE, fill_record, instantiate, load_catalog

__all__ = [
    "AblationMode",
    "DEFAULT_TEMPLATE",
    "DatasetRecord",
    "EvalConfig",
    "EvalReport",
    "GridResult",
    "Turn",
    "build_instruction",
    "diff_reports",
    "dump_dataset",
    "eval_generation",
    "eval_ranking",
    "evaluate",
    "fill_record",
    "instantiate",
    "load_catalog",
    "load_dataset",
    "loop_modes",
    "normalize_answer",
    "recompute",
    "run_ablation_grid",
    "standard_modes",
]
