from .experiment import (BASELINE, DEFAULT_SWEEP, DISTILL, DISTILL_STATIC_Q, DYNAMIC_Q, STATIC_Q, VARIANTS,
                         EvalReport, ExperimentConfig, run_experiment)
from .metrics import accuracy, confusion_matrix, macro_f1, per_class_f1
from .report import budget_group, emit_report, emit_rows
from .size import (BUDGET_32K, BUDGET_64K, KB, SizeBreakdown, budget_check, budget_class,
                   model_size, serialized_bytes)

__all__ = [
    "BASELINE", "STATIC_Q", "DYNAMIC_Q", "DISTILL", "DISTILL_STATIC_Q", "VARIANTS",
    "DEFAULT_SWEEP", "EvalReport", "ExperimentConfig", "run_experiment",
    "accuracy", "confusion_matrix", "macro_f1", "per_class_f1",
    "budget_group", "emit_report", "emit_rows",
    "BUDGET_32K", "BUDGET_64K", "KB", "SizeBreakdown", "budget_check", "budget_class",
    "model_size", "serialized_bytes",
]
