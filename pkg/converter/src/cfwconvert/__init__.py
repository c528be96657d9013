"""Checkpoint-to-CFW1 converter and golden-output verifier."""

from .cfw import fingerprint_of, read_cfw, write_cfw
from .checkpoint import read_checkpoint
from .convert import ConvertSummary, convert
from .namemap import NameMap, fold_batchnorm, load_name_map
from .verify import VerifyReport, verify

__version__ = "0.1.0"

__all__ = [
    "ConvertSummary",
    "NameMap",
    "VerifyReport",
    "convert",
    "fingerprint_of",
    "fold_batchnorm",
    "load_name_map",
    "read_cfw",
    "read_checkpoint",
    "verify",
    "write_cfw",
]
