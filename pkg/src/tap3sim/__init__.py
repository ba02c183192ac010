"""Deterministic simulator and protocol library for trust-aware,
privacy-preserving multipath MANET routing, with two baseline protocols
and attack injection."""

__all__ = ["crypto", "seqmon", "logaudit", "routing", "sim", "metrics",
           "cli"]
