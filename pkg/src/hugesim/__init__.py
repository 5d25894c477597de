"""Trace-driven huge-page policy simulator."""

from .core import AddrRange, PageSize, align_down, range_contains
from .policy import (BenefitParams, Decision, FaultContext, Reason,
                     policy_base4k, policy_ebpfmm, policy_thp)
from .sim import SimConfig, SimReport, sim_compare, sim_run

__all__ = [
    "AddrRange", "PageSize", "align_down", "range_contains",
    "BenefitParams", "Decision", "FaultContext", "Reason",
    "policy_base4k", "policy_ebpfmm", "policy_thp",
    "SimConfig", "SimReport", "sim_compare", "sim_run",
]
__version__ = "0.1.0"
